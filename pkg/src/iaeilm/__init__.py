"""Melody-conditioned flow matching with instance-adaptive element-wise modulation."""

from .backbone import BackboneConfig, Denoiser, GlobalCond, Placement, seeded_init
from .conditioning import (
    CondProjector,
    Iacr,
    Injector,
    MelodyInjector,
    ModulationParams,
    ShapeError,
    ea_baseline,
    eilm,
    eilm_zero,
    film_baseline,
    static_condition,
)
from .flow import FlowState, euler_sample, fm_loss, forward_process
from .melody import (
    MelodyEncoder,
    PitchRangeError,
    PitchSequence,
    extract_pitch_features,
    interpolate,
)
from .metrics import MetricsReport, compare, evaluate_model, oa, rca, rpa
from .synthworld import SynthConfig, SynthSample, decode_melody, random_pitch_contour, synth_generate
from .training import RunRecord, TrainConfig, config_hash, train

__version__ = "0.1.0"
