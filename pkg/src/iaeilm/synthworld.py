"""Deterministic synthetic song world.

A "song" latent is (T, P + S): P pitch channels carrying a unit-height
Gaussian bump at the quantized log-frequency bin of each voiced frame, and S
style channels carrying a fixed orthogonal code per style class, everything
plus isotropic Gaussian noise. Because the decoder below inverts the bump
exactly, melody-control metrics on generated latents are exactly computable.

The bin grid spans [50, 900] Hz on a log2 scale. With the default P=96 the
bin width is ~52.7 cents, so half-bin quantization (~26.3 cents) stays below
the 50-cent pitch-accuracy threshold and a perfect generator can reach
RPA = 1.0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .melody import F0_MAX_HZ, F0_MIN_HZ, LOG2_F0_MIN, LOG2_F0_SPAN, PitchSequence

VOICING_THRESHOLD = 0.5  # half the clean bump height; robust up to noise_std ~0.15

# pentatonic degrees used for per-style note scales
_SCALE_DEGREES = (0, 2, 4, 7, 9)


def bin_width_cents(pitch_bins: int) -> float:
    return 1200.0 * LOG2_F0_SPAN / (pitch_bins - 1)


@dataclass
class SynthConfig:
    frames: int = 128          # T, at 100 Hz
    pitch_bins: int = 96       # P
    style_channels: int = 16   # S
    num_styles: int = 4
    noise_std: float = 0.05
    voicing_rate: float = 0.8
    seed: int = 0

    @property
    def latent_dim(self) -> int:
        return self.pitch_bins + self.style_channels

    def __post_init__(self):
        if self.frames < 1 or self.pitch_bins < 2 or self.style_channels < 1:
            raise ValueError("frames, pitch_bins, style_channels must be positive (pitch_bins >= 2)")
        if bin_width_cents(self.pitch_bins) >= 100.0:
            raise ValueError(
                f"pitch_bins={self.pitch_bins} gives {bin_width_cents(self.pitch_bins):.1f} "
                "cents/bin; need < 100 so half-bin error stays under 50 cents"
            )
        if self.style_channels & (self.style_channels - 1):
            raise ValueError("style_channels must be a power of two (orthogonal code length)")
        if not 1 <= self.num_styles <= self.style_channels:
            raise ValueError("need 1 <= num_styles <= style_channels")
        if not 0.0 < self.voicing_rate <= 1.0:
            raise ValueError("voicing_rate must be in (0, 1]")
        if self.noise_std < 0.0:
            raise ValueError("noise_std must be >= 0")


@dataclass
class SynthSample:
    x0: np.ndarray           # (T, P + S) float32
    pitch: PitchSequence
    style_id: int


def freq_to_bin(f0_hz, pitch_bins: int):
    """Nearest bin index of a frequency; the bin grid is linear in log2 f."""
    rel = (np.log2(f0_hz) - LOG2_F0_MIN) / LOG2_F0_SPAN
    return np.rint(rel * (pitch_bins - 1)).astype(np.int64)


def bin_to_freq(k, pitch_bins: int):
    """Center frequency of bin k: 50 * 2^(k * log2(900/50) / (P-1)).

    Clipped into [50, 900] to absorb the half-ulp overshoot at the last bin.
    """
    f = F0_MIN_HZ * np.exp2(np.asarray(k, dtype=np.float64) * LOG2_F0_SPAN / (pitch_bins - 1))
    return np.clip(f, F0_MIN_HZ, F0_MAX_HZ)


def style_codes(cfg: SynthConfig) -> np.ndarray:
    """(num_styles, S) orthogonal +-1 codes scaled by 0.5 (Sylvester construction)."""
    h = np.array([[1.0]])
    while h.shape[0] < cfg.style_channels:
        h = np.block([[h, h], [h, -h]])
    return (0.5 * h[: cfg.num_styles]).astype(np.float64)


def synth_generate(pitch: PitchSequence, style_id: int, cfg: SynthConfig,
                   seed: int = 0) -> SynthSample:
    """Render a pitch contour and style class into a noisy latent.

    Voiced frames put exp(-(j - bin(f0))^2 / 2) on pitch channels j; unvoiced
    frames leave them at zero. Style channels carry the style code on every
    frame. Gaussian noise of std ``cfg.noise_std`` is added everywhere.
    """
    if not 0 <= style_id < cfg.num_styles:
        raise ValueError(f"style_id {style_id} out of range [0, {cfg.num_styles})")
    t = len(pitch)
    x0 = np.zeros((t, cfg.latent_dim), dtype=np.float64)
    voiced = pitch.voiced
    if voiced.any():
        centers = freq_to_bin(pitch.f0_hz[voiced], cfg.pitch_bins)
        cols = np.arange(cfg.pitch_bins)
        x0[voiced, : cfg.pitch_bins] = np.exp(-0.5 * (cols[None, :] - centers[:, None]) ** 2)
    x0[:, cfg.pitch_bins:] = style_codes(cfg)[style_id]
    if cfg.noise_std > 0:
        rng = np.random.default_rng(seed)
        x0 += rng.normal(0.0, cfg.noise_std, size=x0.shape)
    return SynthSample(x0.astype(np.float32), pitch, style_id)


def decode_melody(x: np.ndarray, cfg: SynthConfig) -> PitchSequence:
    """Oracle melody decoder: per frame, argmax over pitch channels.

    A frame is unvoiced when the peak falls below ``VOICING_THRESHOLD``;
    otherwise its pitch is the argmax bin's center frequency.
    """
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] != cfg.latent_dim:
        raise ValueError(f"expected (T, {cfg.latent_dim}) latent, got {x.shape}")
    pitch_part = x[:, : cfg.pitch_bins]
    peak = pitch_part.max(axis=1)
    best = pitch_part.argmax(axis=1)
    f0 = np.where(peak < VOICING_THRESHOLD, 0.0, bin_to_freq(best, cfg.pitch_bins))
    return PitchSequence(f0)


def style_scale_hz(style_id: int) -> np.ndarray:
    """Note frequencies for a style: a pentatonic scale over two octaves.

    Roots step up by three semitones per style and wrap after five styles so
    every note stays within the [50, 900] Hz voiced range.
    """
    root = 45 + 3 * (style_id % 5)
    midis = [root + d + 12 * octave for octave in (0, 1) for d in _SCALE_DEGREES]
    midis.append(root + 24)
    return 440.0 * np.exp2((np.array(midis, dtype=np.float64) - 69.0) / 12.0)


def random_pitch_contour(cfg: SynthConfig, style_id: int, seed: int = 0) -> PitchSequence:
    """Piecewise-constant note contour with unvoiced gaps.

    Segment durations are geometric with mean 10 frames; each segment is
    voiced with probability ``cfg.voicing_rate`` and takes a note from the
    style's scale, otherwise it is an unvoiced gap.
    """
    rng = np.random.default_rng(seed)
    scale = style_scale_hz(style_id)
    f0 = np.zeros(cfg.frames, dtype=np.float64)
    i = 0
    while i < cfg.frames:
        dur = int(rng.geometric(0.1))
        if rng.random() < cfg.voicing_rate:
            f0[i : i + dur] = scale[rng.integers(len(scale))]
        i += dur
    return PitchSequence(f0)
