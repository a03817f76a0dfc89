import hypothesis
import pytest
import torch

hypothesis.settings.register_profile(
    "iaeilm",
    deadline=None,
    suppress_health_check=[hypothesis.HealthCheck.too_slow],
)
hypothesis.settings.load_profile("iaeilm")

torch.set_num_threads(max(1, torch.get_num_threads()))


@pytest.fixture
def tiny_backbone():
    from iaeilm.backbone import BackboneConfig

    return BackboneConfig(num_blocks=2, d_model=8, heads=2, ffn_mult=2,
                          m_width=4, latent_dim=6, num_styles=2,
                          enc_channels=(4,), enc_kernel=3)


@pytest.fixture
def tiny_synth():
    from iaeilm.synthworld import SynthConfig

    return SynthConfig(frames=32, pitch_bins=64, style_channels=8,
                       num_styles=2, seed=7)
