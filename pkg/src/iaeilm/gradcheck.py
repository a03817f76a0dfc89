"""Finite-difference verification of analytic gradients.

Everything runs in fp64 with central differences (step 1e-5). A check passes
when |analytic - fd| <= rtol * max(|analytic|, |fd|) + atol elementwise; the
reported error is max |a - f| / (max(|a|, |f|) + atol / rtol), which is < rtol
exactly when the check passes.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .backbone import BackboneConfig, Denoiser, seeded_init
from .conditioning import CondProjector, Iacr, eilm_zero
from .flow import FlowState, fm_loss

FD_STEP = 1e-5


@dataclass
class GroupResult:
    check: str
    group: str
    max_rel_err: float
    rtol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.rtol


def _central_diff(loss_fn, tensor: torch.Tensor, h: float = FD_STEP) -> torch.Tensor:
    grad = torch.zeros_like(tensor)
    flat = tensor.data.view(-1)
    gflat = grad.view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + h
            f_plus = float(loss_fn())
            flat[i] = orig - h
            f_minus = float(loss_fn())
            flat[i] = orig
            gflat[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def _rel_err(analytic: torch.Tensor, fd: torch.Tensor, rtol: float, atol: float) -> float:
    denom = torch.maximum(analytic.abs(), fd.abs()) + atol / rtol
    return float(((analytic - fd).abs() / denom).max())


def _compare_all(check: str, loss_fn, tensors: dict[str, torch.Tensor], rtol: float,
                 atol: float, corrupt: str | None = None) -> list[GroupResult]:
    for t in tensors.values():
        t.grad = None
    loss_fn().backward()
    results = []
    for name, t in tensors.items():
        analytic = t.grad.detach().clone() if t.grad is not None else torch.zeros_like(t)
        if corrupt == name:
            analytic = analytic * 1.01 + 1e-6
        fd = _central_diff(loss_fn, t)
        results.append(GroupResult(check, name, _rel_err(analytic, fd, rtol, atol), rtol))
    return results


def check_flow_loss(seed: int = 0) -> list[GroupResult]:
    """Loss gradient w.r.t. the prediction vs closed form and finite differences."""
    g = torch.Generator().manual_seed(seed)
    x0 = torch.randn(3, 5, 4, generator=g, dtype=torch.float64)
    z = torch.randn(3, 5, 4, generator=g, dtype=torch.float64)
    pred = torch.randn(3, 5, 4, generator=g, dtype=torch.float64, requires_grad=True)
    state = FlowState(x0, z, 0.37)

    loss_fn = lambda: fm_loss(pred, state)
    results = _compare_all("flow_loss", loss_fn, {"pred": pred}, rtol=1e-6, atol=1e-12)

    # closed form of the quadratic: d/dpred mean((pred*(-s) + x_t - x0)^2)
    s = state.sigma_t
    resid = pred.detach() * (-s) + (1 - s) * x0 + s * z - x0
    closed = 2.0 * (-s) * resid / resid.numel()
    pred.grad = None
    loss_fn().backward()
    results.append(GroupResult("flow_loss", "pred_vs_closed_form",
                               _rel_err(pred.grad, closed, 1e-6, 1e-12), 1e-6))
    return results


def check_conditioning_composite(seed: int = 0, corrupt: str | None = None) -> list[GroupResult]:
    """Gradients of ||eilm_zero(h, refine(m, h))||^2 w.r.t. h, m, and all weights."""
    torch.manual_seed(seed)
    d_model, m_width, frames = 5, 3, 4
    refiner = Iacr(d_model, m_width).double()
    proj = CondProjector(m_width, d_model, zero_init=False).double()
    g = torch.Generator().manual_seed(seed + 1)
    for p in list(refiner.parameters()) + list(proj.parameters()):
        with torch.no_grad():
            p.uniform_(-0.5, 0.5, generator=g)
    h = torch.randn(frames, d_model, generator=g, dtype=torch.float64, requires_grad=True)
    m = torch.randn(frames, m_width, generator=g, dtype=torch.float64, requires_grad=True)

    loss_fn = lambda: eilm_zero(h, refiner(m, h), proj).pow(2).sum()
    tensors = {"h": h, "m": m}
    tensors.update({f"refiner.{n}": p for n, p in refiner.named_parameters()})
    tensors.update({f"proj.{n}": p for n, p in proj.named_parameters()})
    return _compare_all("iacr_eilm", loss_fn, tensors, rtol=1e-4, atol=1e-9,
                        corrupt=corrupt)


def tiny_backbone_config() -> BackboneConfig:
    return BackboneConfig(num_blocks=2, d_model=8, heads=2, ffn_mult=2,
                          m_width=4, latent_dim=6, num_styles=2,
                          enc_channels=(4,), enc_kernel=3)


def check_backbone(seed: int = 0, randomize: bool = True,
                   corrupt: str | None = None) -> list[GroupResult]:
    """Full training-loss gradients for a tiny network (T=6, D=8, fp64).

    ``randomize=False`` keeps the zero-initialized adapters/projections at
    zero; ``randomize=True`` perturbs every parameter so no gradient path is
    trivially zero.
    """
    cfg = tiny_backbone_config()
    model = Denoiser(cfg)
    seeded_init(model, seed)
    model.double()
    g = torch.Generator().manual_seed(seed + 7)
    if randomize:
        with torch.no_grad():
            for p in model.parameters():
                p.add_(torch.empty_like(p).uniform_(-0.1, 0.1, generator=g))

    batch, frames, t0 = 2, 6, 4
    x0 = torch.randn(batch, frames, cfg.latent_dim, generator=g, dtype=torch.float64)
    z = torch.randn(batch, frames, cfg.latent_dim, generator=g, dtype=torch.float64)
    t = torch.rand(batch, generator=g, dtype=torch.float64) * 0.8 + 0.1
    style = torch.arange(batch) % cfg.num_styles
    pitch_feat = torch.rand(batch, t0, 2, generator=g, dtype=torch.float64)
    pitch_feat[..., 1] = (pitch_feat[..., 1] > 0.5).double()
    state = FlowState(x0, z, t.view(-1, 1, 1))
    from .flow import forward_process
    x_t = forward_process(state)

    loss_fn = lambda: fm_loss(model(x_t, t, style, pitch_feat=pitch_feat), state)
    tensors = dict(model.named_parameters())
    return _compare_all("backbone", loss_fn, tensors, rtol=1e-3, atol=1e-8,
                        corrupt=corrupt)


def run_all(seed: int = 0) -> tuple[list[GroupResult], bool]:
    results = []
    results += check_flow_loss(seed)
    results += check_conditioning_composite(seed)
    results += check_backbone(seed, randomize=False)
    results += check_backbone(seed, randomize=True)
    return results, all(r.passed for r in results)
