"""Pitch contours and the melody conditioning pipeline.

A contour is a fixed-rate (100 Hz) sequence of F0 values in Hz where 0 marks
an unvoiced frame. Voiced frames must lie in [50, 900] Hz. The pipeline maps
a contour to a normalized log2-pitch channel plus a binary voiced flag,
encodes it with a stack of length-preserving 1-D convolutions, and linearly
resamples the result to the backbone sequence length.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

F0_MIN_HZ = 50.0
F0_MAX_HZ = 900.0
FRAME_RATE_HZ = 100.0

LOG2_F0_MIN = math.log2(F0_MIN_HZ)
LOG2_F0_SPAN = math.log2(F0_MAX_HZ) - math.log2(F0_MIN_HZ)


class PitchRangeError(ValueError):
    """A voiced frame carries an F0 outside the [50, 900] Hz range."""


@dataclass
class PitchSequence:
    """F0 contour at a fixed frame rate; ``f0_hz == 0`` marks unvoiced frames.

    Construction rejects out-of-range voiced values; use :meth:`from_hz` with
    ``clamp=True`` to clip instead.
    """

    f0_hz: np.ndarray
    frame_rate_hz: float = FRAME_RATE_HZ

    def __post_init__(self):
        self.f0_hz = np.asarray(self.f0_hz, dtype=np.float64)
        if self.f0_hz.ndim != 1:
            raise ValueError(f"f0_hz must be 1-D, got shape {self.f0_hz.shape}")
        voiced = self.f0_hz != 0.0
        bad = np.flatnonzero(voiced & ((self.f0_hz < F0_MIN_HZ) | (self.f0_hz > F0_MAX_HZ)))
        if bad.size:
            i = int(bad[0])
            raise PitchRangeError(
                f"voiced f0 outside [{F0_MIN_HZ:g}, {F0_MAX_HZ:g}] Hz "
                f"at frame {i}: {self.f0_hz[i]:g} Hz"
            )

    @classmethod
    def from_hz(cls, f0_hz, frame_rate_hz: float = FRAME_RATE_HZ, clamp: bool = False):
        f0 = np.array(f0_hz, dtype=np.float64, copy=True)
        if clamp:
            voiced = f0 != 0.0
            f0[voiced] = np.clip(f0[voiced], F0_MIN_HZ, F0_MAX_HZ)
        return cls(f0, frame_rate_hz)

    def __len__(self) -> int:
        return int(self.f0_hz.shape[0])

    @property
    def voiced(self) -> np.ndarray:
        return self.f0_hz != 0.0


def pitch_to_csv(pitch: PitchSequence) -> str:
    """Render a contour as CSV text with header ``frame,f0_hz`` (one row per frame).

    Values are written with ``repr`` so they round-trip bit exactly.
    """
    lines = ["frame,f0_hz"]
    lines.extend(f"{i},{v!r}" for i, v in enumerate(pitch.f0_hz.tolist()))
    return "\n".join(lines) + "\n"


def pitch_from_csv(text: str, clamp: bool = False) -> PitchSequence:
    """Parse the ``frame,f0_hz`` CSV format produced by :func:`pitch_to_csv`."""
    reader = io.StringIO(text)
    header = reader.readline().strip()
    if header != "frame,f0_hz":
        raise ValueError(f"bad pitch CSV header: {header!r}")
    values = []
    for line in reader:
        line = line.strip()
        if not line:
            continue
        frame, f0 = line.split(",")
        if int(frame) != len(values):
            raise ValueError(f"non-contiguous frame index {frame!r}")
        values.append(float(f0))
    return PitchSequence.from_hz(np.array(values), clamp=clamp)


def write_pitch_csv(path, pitch: PitchSequence) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(pitch_to_csv(pitch))


def read_pitch_csv(path, clamp: bool = False) -> PitchSequence:
    with open(path, "r", encoding="utf-8") as fh:
        return pitch_from_csv(fh.read(), clamp=clamp)


def extract_pitch_features(pitch: PitchSequence) -> np.ndarray:
    """Map a contour to a (T, 2) float32 feature array.

    Channel 0 is min-max normalized log2 pitch over [50, 900] Hz (0 when
    unvoiced), channel 1 is the binary voiced flag. Normalization is log
    scale because pitch perception is; the bounds are the valid voiced range.
    """
    voiced = pitch.voiced
    feat = np.zeros((len(pitch), 2), dtype=np.float32)
    if voiced.any():
        feat[voiced, 0] = (np.log2(pitch.f0_hz[voiced]) - LOG2_F0_MIN) / LOG2_F0_SPAN
    feat[voiced, 1] = 1.0
    return feat


def interpolate(m0: torch.Tensor, length: int) -> torch.Tensor:
    """Endpoint-aligned linear resampling along the time axis (dim -2).

    Exact identity when ``length`` equals the input length; differentiable
    with respect to ``m0``.
    """
    t0 = int(m0.shape[-2])
    if t0 < 1 or length < 1:
        raise ValueError(f"need at least one frame on both sides, got {t0} -> {length}")
    if length == t0:
        return m0
    if t0 == 1:
        return m0.expand(*m0.shape[:-2], length, m0.shape[-1]).contiguous()
    if length == 1:
        return m0[..., :1, :]
    pos = torch.arange(length, dtype=m0.dtype, device=m0.device) * ((t0 - 1) / (length - 1))
    lo = pos.floor().long().clamp(max=t0 - 1)
    hi = (lo + 1).clamp(max=t0 - 1)
    w = (pos - lo.to(m0.dtype)).unsqueeze(-1)
    return m0.index_select(-2, lo) * (1.0 - w) + m0.index_select(-2, hi) * w


def fourier_expand(feat: torch.Tensor, n_freqs: int) -> torch.Tensor:
    """Fixed sinusoidal expansion of the pitch channel at octave-spaced rates.

    (..., T, 2) -> (..., T, 2 + 2*n_freqs): the raw channels followed by
    sin/cos(pi * 2^k * pitch) for k < n_freqs, gated by the voiced flag so
    unvoiced frames stay all-zero. Pitch sits on a fine grid of nearby values;
    without this a scalar input makes bin-level discrimination painfully slow
    to learn.
    """
    if n_freqs <= 0:
        return feat
    pitch = feat[..., 0:1]
    flag = feat[..., 1:2]
    rates = torch.pi * torch.exp2(torch.arange(n_freqs, dtype=feat.dtype,
                                               device=feat.device))
    angles = pitch * rates
    return torch.cat([feat, torch.sin(angles) * flag, torch.cos(angles) * flag], dim=-1)


class MelodyEncoder(nn.Module):
    """Length-preserving 1-D conv stack over (expanded) pitch features.

    A fixed sinusoidal expansion of the pitch channel feeds stride-1
    convolutions with symmetric zero padding and tanh between layers (none
    after the last). An all-zero input maps to an all-zero output when biases
    are zero. Input is (T, 2) or (B, T, 2); output replaces the channel dim
    with ``out_width``.
    """

    def __init__(self, out_width: int = 64, channels: tuple[int, ...] = (32, 64),
                 kernel_size: int = 3, in_channels: int = 2, fourier_feats: int = 8):
        super().__init__()
        if kernel_size % 2 != 1:
            raise ValueError("kernel_size must be odd to preserve length")
        self.fourier_feats = fourier_feats
        dims = (in_channels + 2 * max(0, fourier_feats), *channels, out_width)
        self.convs = nn.ModuleList(
            nn.Conv1d(dims[i], dims[i + 1], kernel_size, padding=kernel_size // 2)
            for i in range(len(dims) - 1)
        )
        for conv in self.convs:
            conv._init_gain = 5.0 / 3.0  # variance-preserving through the tanh stack
        self.out_width = out_width

    def forward(self, feat: torch.Tensor) -> torch.Tensor:
        unbatched = feat.ndim == 2
        x = feat.unsqueeze(0) if unbatched else feat
        if x.ndim != 3:
            raise ValueError(f"expected (T, C) or (B, T, C), got shape {tuple(feat.shape)}")
        x = fourier_expand(x, self.fourier_feats)
        x = x.transpose(-1, -2)
        last = len(self.convs) - 1
        for i, conv in enumerate(self.convs):
            x = conv(x)
            if i < last:
                x = torch.tanh(x)
        x = x.transpose(-1, -2)
        return x.squeeze(0) if unbatched else x
