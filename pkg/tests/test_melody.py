import math

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from iaeilm.melody import (
    MelodyEncoder,
    PitchRangeError,
    PitchSequence,
    extract_pitch_features,
    interpolate,
    pitch_from_csv,
    pitch_to_csv,
)

from oracles import conv1d_loops, interp_linear


def test_extract_range_endpoints():
    feat = extract_pitch_features(PitchSequence(np.array([50.0, 900.0, 0.0])))
    assert feat[0, 0] == 0.0 and feat[0, 1] == 1.0
    assert feat[1, 0] == 1.0 and feat[1, 1] == 1.0
    assert feat[2, 0] == 0.0 and feat[2, 1] == 0.0


def test_extract_geometric_midpoint():
    mid = math.sqrt(50.0 * 900.0)
    feat = extract_pitch_features(PitchSequence(np.array([mid])))
    assert feat[0, 0] == pytest.approx(0.5, abs=1e-12)


def test_out_of_range_rejected_with_frame_index():
    with pytest.raises(PitchRangeError, match="frame 2"):
        PitchSequence(np.array([440.0, 0.0, 949.5]))
    with pytest.raises(PitchRangeError, match="frame 0"):
        PitchSequence(np.array([49.0, 440.0]))


def test_clamp_mode():
    p = PitchSequence.from_hz([949.5, 0.0, 12.0], clamp=True)
    assert p.f0_hz[0] == 900.0
    assert p.f0_hz[1] == 0.0  # unvoiced stays unvoiced
    assert p.f0_hz[2] == 50.0


@given(st.lists(st.floats(min_value=50.0, max_value=900.0), min_size=2, max_size=20,
                unique=True))
def test_extract_monotone_on_voiced(f0s):
    # strict monotonicity, up to float32 feature resolution: only compare
    # frequencies separated by more than ~1 part in 1e4
    f0s = sorted(f0s)
    feat = extract_pitch_features(PitchSequence(np.array(f0s)))
    for a in range(len(f0s) - 1):
        if f0s[a + 1] / f0s[a] > 1.0 + 1e-4:
            assert feat[a, 0] < feat[a + 1, 0]


@given(st.lists(st.one_of(st.just(0.0), st.floats(min_value=50.0, max_value=900.0)),
                min_size=1, max_size=30))
def test_extract_channel_coupling(f0s):
    feat = extract_pitch_features(PitchSequence(np.array(f0s)))
    unvoiced = feat[:, 1] == 0.0
    assert np.all(feat[unvoiced, 0] == 0.0)
    assert np.all((feat[:, 0] >= 0.0) & (feat[:, 0] <= 1.0))


def test_encoder_zero_input_zero_output():
    enc = MelodyEncoder(out_width=6, channels=(4,), kernel_size=3)
    with torch.no_grad():
        for conv in enc.convs:
            conv.bias.zero_()
    out = enc(torch.zeros(10, 2))
    assert torch.all(out == 0.0)


def test_encoder_pointwise_identity_broadcast():
    enc = MelodyEncoder(out_width=5, channels=(), kernel_size=1, fourier_feats=0)
    with torch.no_grad():
        enc.convs[0].bias.zero_()
        enc.convs[0].weight.zero_()
        enc.convs[0].weight[:, 0, 0] = 1.0  # copy channel 0 into every output channel
    x = torch.rand(7, 2)
    out = enc(x)
    assert torch.allclose(out, x[:, :1].expand(7, 5))


def test_encoder_matches_loop_oracle():
    torch.manual_seed(3)
    enc = MelodyEncoder(out_width=3, channels=(4,), kernel_size=3, fourier_feats=0)
    x = torch.rand(8, 2)
    got = enc(x).detach().numpy()

    layers = []
    for conv in enc.convs:
        layers.append((conv.weight.detach().tolist(), conv.bias.detach().tolist()))
    cur = x.tolist()
    for i, (w, b) in enumerate(layers):
        cur = conv1d_loops(cur, w, b)
        if i < len(layers) - 1:
            cur = [[math.tanh(v) for v in row] for row in cur]
    assert np.abs(got - np.array(cur)).max() <= 1e-6


@given(st.integers(min_value=1, max_value=40))
def test_encoder_preserves_length(t_len):
    enc = MelodyEncoder(out_width=4, channels=(3,), kernel_size=3)
    assert enc(torch.zeros(t_len, 2)).shape == (t_len, 4)


def test_interpolate_identity_is_exact():
    x = torch.rand(9, 4)
    assert torch.equal(interpolate(x, 9), x)


def test_interpolate_midpoint():
    x = torch.tensor([[0.0], [1.0]])
    out = interpolate(x, 3)
    assert torch.allclose(out, torch.tensor([[0.0], [0.5], [1.0]]))


def test_interpolate_matches_scalar_oracle():
    torch.manual_seed(11)
    x = torch.rand(5, 3, dtype=torch.float64)
    out = interpolate(x, 13).numpy()
    for ch in range(3):
        ref = interp_linear(x[:, ch].tolist(), 13)
        assert np.abs(out[:, ch] - np.array(ref)).max() <= 1e-6


@given(st.integers(min_value=2, max_value=16))
def test_interpolate_round_trip_on_ramps(t_len):
    # affine-in-time signals survive up/down resampling
    ramp = torch.linspace(-1.0, 2.0, t_len, dtype=torch.float64).unsqueeze(-1)
    back = interpolate(interpolate(ramp, 2 * t_len), t_len)
    assert (back - ramp).abs().max() <= 1e-5


def test_interpolate_degenerate_lengths():
    x = torch.tensor([[2.0, 3.0]])
    out = interpolate(x, 4)
    assert torch.equal(out, x.expand(4, 2))
    y = torch.rand(6, 2)
    assert torch.equal(interpolate(y, 1), y[:1])
    with pytest.raises(ValueError):
        interpolate(y, 0)


def test_pitch_csv_round_trip_exact():
    f0 = np.array([0.0, 440.0, 452.8929841231365, 0.0, 110.0 * 2 ** (7 / 12)])
    p = PitchSequence(f0)
    again = pitch_from_csv(pitch_to_csv(p))
    assert np.array_equal(again.f0_hz, p.f0_hz)


def test_pitch_csv_rejects_bad_header():
    with pytest.raises(ValueError, match="header"):
        pitch_from_csv("time,hz\n0,100\n")
