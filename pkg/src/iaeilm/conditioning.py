"""Condition injection primitives.

Element-wise modulation gives every (frame, feature) element its own affine
parameters, computed per frame from the condition; the gated refinement step
makes those parameters depend on the current hidden state as well. The
baseline injectors (feature-wise modulation, element-wise addition, static
modulation without refinement) exist for ablations. All variants used inside
the backbone are exact identities when their projector is zero-initialized.
"""

from __future__ import annotations

from enum import Enum
from typing import NamedTuple

import torch
from torch import nn


class ShapeError(ValueError):
    """Tensor shapes violate the declared contract."""


class Injector(str, Enum):
    IA_EILM = "ia_eilm"
    EILM_STATIC = "eilm_static"
    EA = "ea"
    FILM = "film"
    NONE = "none"


class ModulationParams(NamedTuple):
    gamma: torch.Tensor
    beta: torch.Tensor


def _check_time(h: torch.Tensor, c: torch.Tensor) -> None:
    if h.shape[:-1] != c.shape[:-1]:
        raise ShapeError(
            f"hidden state and condition disagree on leading/time dims: "
            f"{tuple(h.shape)} vs {tuple(c.shape)}"
        )


def zero_linear(in_features: int, out_features: int) -> nn.Linear:
    """Linear layer initialized to the zero map; seeded re-init leaves it alone."""
    lin = nn.Linear(in_features, out_features)
    nn.init.zeros_(lin.weight)
    nn.init.zeros_(lin.bias)
    lin._keep_zero = True
    return lin


class Iacr(nn.Module):
    """Gated condition refinement: c = tanh(L_h(h)) * tanh(L_m(m)).

    Both linear maps carry zero-initialized biases; weights are random so the
    refined condition is informative from the first step. Every output entry
    lies strictly inside (-1, 1) for finite inputs.
    """

    def __init__(self, d_model: int, m_width: int):
        super().__init__()
        self.proj_h = nn.Linear(d_model, m_width)
        self.proj_m = nn.Linear(m_width, m_width)
        nn.init.zeros_(self.proj_h.bias)
        nn.init.zeros_(self.proj_m.bias)
        self.proj_h._init_gain = 1.0  # keep the gates informative at init
        self.proj_m._init_gain = 1.0

    def forward(self, m: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
        _check_time(h, m)
        return torch.tanh(self.proj_h(h)) * torch.tanh(self.proj_m(m))


class CondProjector(nn.Module):
    """Per-frame linear map condition -> (gamma, beta).

    The output layout is the concatenation [gamma || beta]; checkpoints store
    the fused weight in that order.
    """

    def __init__(self, m_width: int, d_model: int, zero_init: bool = True):
        super().__init__()
        if zero_init:
            self.lin = zero_linear(m_width, 2 * d_model)
        else:
            self.lin = nn.Linear(m_width, 2 * d_model)

    def forward(self, c: torch.Tensor) -> ModulationParams:
        gamma, beta = self.lin(c).chunk(2, dim=-1)
        return ModulationParams(gamma, beta)


def eilm(h: torch.Tensor, c: torch.Tensor, proj: CondProjector) -> torch.Tensor:
    """Per-element affine modulation gamma * h + beta, (gamma, beta) = proj(c)."""
    _check_time(h, c)
    gamma, beta = proj(c)
    if gamma.shape != h.shape:
        raise ShapeError(f"modulation params {tuple(gamma.shape)} do not match h {tuple(h.shape)}")
    return gamma * h + beta


def eilm_zero(h: torch.Tensor, c: torch.Tensor, proj: CondProjector) -> torch.Tensor:
    """(gamma + 1) * h + beta; the exact identity when proj is zero-initialized."""
    _check_time(h, c)
    gamma, beta = proj(c)
    if gamma.shape != h.shape:
        raise ShapeError(f"modulation params {tuple(gamma.shape)} do not match h {tuple(h.shape)}")
    return (gamma + 1.0) * h + beta


def film_baseline(h: torch.Tensor, c_pooled: torch.Tensor, proj: CondProjector) -> torch.Tensor:
    """Feature-wise modulation: one (gamma, beta) per feature, broadcast over frames.

    ``c_pooled`` is the time-mean of the condition.
    """
    gamma, beta = proj(c_pooled)
    if gamma.shape[-1] != h.shape[-1] or gamma.shape[:-1] != h.shape[:-2]:
        raise ShapeError(
            f"pooled params {tuple(gamma.shape)} do not broadcast over h {tuple(h.shape)}"
        )
    return gamma.unsqueeze(-2) * h + beta.unsqueeze(-2)


def ea_baseline(h: torch.Tensor, c: torch.Tensor, proj_add: nn.Linear) -> torch.Tensor:
    """Element-wise additive injection h + f(c); identity when f is the zero map."""
    _check_time(h, c)
    add = proj_add(c)
    if add.shape != h.shape:
        raise ShapeError(f"additive term {tuple(add.shape)} does not match h {tuple(h.shape)}")
    return h + add


def static_condition(m: torch.Tensor, proj: CondProjector) -> ModulationParams:
    """Modulation parameters from the condition alone, no hidden-state access."""
    return proj(m)


class MelodyInjector(nn.Module):
    """One injection site per transformer block.

    Variants:
      - IA_EILM: gated refinement of (m, h), then (gamma+1)*h + beta
      - EILM_STATIC: (gamma+1)*h + beta with (gamma, beta) from m alone
      - EA: h + f(m)
      - FILM: per-feature (gamma+1)*h + beta from the time-pooled m
      - NONE: pass-through

    All projectors are zero-initialized, so a fresh injector of any variant
    leaves the hidden state untouched.
    """

    def __init__(self, variant: Injector, d_model: int, m_width: int):
        super().__init__()
        self.variant = Injector(variant)
        if self.variant == Injector.IA_EILM:
            self.refiner = Iacr(d_model, m_width)
            self.proj = CondProjector(m_width, d_model, zero_init=True)
        elif self.variant in (Injector.EILM_STATIC, Injector.FILM):
            self.proj = CondProjector(m_width, d_model, zero_init=True)
        elif self.variant == Injector.EA:
            self.proj_add = zero_linear(m_width, d_model)

    def forward(self, h: torch.Tensor, m: torch.Tensor) -> torch.Tensor:
        v = self.variant
        if v == Injector.NONE:
            return h
        if v == Injector.IA_EILM:
            return eilm_zero(h, self.refiner(m, h), self.proj)
        if v == Injector.EILM_STATIC:
            return eilm_zero(h, m, self.proj)
        if v == Injector.FILM:
            gamma, beta = self.proj(m.mean(dim=-2))
            return (gamma.unsqueeze(-2) + 1.0) * h + beta.unsqueeze(-2)
        return ea_baseline(h, m, self.proj_add)
