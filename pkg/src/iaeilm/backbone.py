"""Transformer denoiser with per-block melody injection.

Pre-norm residual blocks; the global (timestep, style) embedding modulates
each sublayer's normalized input through zero-initialized scale/shift maps,
and the configured melody injector sits either before the FFN sublayer
(default) or before the self-attention sublayer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import torch
import torch.nn.functional as F
from torch import nn

from .conditioning import Injector, MelodyInjector
from .melody import MelodyEncoder, interpolate


class Placement(str, Enum):
    BEFORE_FFN = "before_ffn"
    BEFORE_ATTN = "before_attn"


@dataclass
class BackboneConfig:
    num_blocks: int = 4
    d_model: int = 128
    heads: int = 4
    ffn_mult: int = 4
    injector: Injector = Injector.IA_EILM
    placement: Placement = Placement.BEFORE_FFN
    m_width: int = 64
    latent_dim: int = 112
    num_styles: int = 4
    enc_channels: tuple = (32, 64)
    enc_kernel: int = 3
    enc_fourier: int = 8
    use_positions: bool = True

    def __post_init__(self):
        self.injector = Injector(self.injector)
        self.placement = Placement(self.placement)
        self.enc_channels = tuple(self.enc_channels)
        for name in ("num_blocks", "d_model", "heads", "ffn_mult", "m_width",
                     "latent_dim", "num_styles"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.d_model % self.heads != 0:
            raise ValueError(f"d_model={self.d_model} not divisible by heads={self.heads}")


@dataclass
class GlobalCond:
    """Scalar conditioning for one sample: flow time in [0, 1] and a style class."""

    t: float
    style_id: int

    def __post_init__(self):
        if not 0.0 <= self.t <= 1.0:
            raise ValueError(f"t must lie in [0, 1], got {self.t}")


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10000.0,
                       scale: float = 1000.0) -> torch.Tensor:
    """Sinusoidal features [cos(s*t*w_k) || sin(s*t*w_k)], w_k = max_period^(-k/half).

    ``t`` is broadcast over a trailing feature axis of size ``dim`` (even).
    """
    if dim % 2 != 0:
        raise ValueError("embedding dim must be even")
    half = dim // 2
    k = torch.arange(half, dtype=t.dtype, device=t.device)
    freqs = torch.exp(-math.log(max_period) * k / half)
    args = t[..., None] * scale * freqs
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


def sinusoidal_positions(length: int, dim: int, dtype=torch.float32,
                         device=None) -> torch.Tensor:
    pos = torch.arange(length, dtype=dtype, device=device)
    return timestep_embedding(pos, dim, scale=1.0)


class GlobalEmbedding(nn.Module):
    """Sinusoidal timestep features plus a learned style embedding, fused by an MLP."""

    def __init__(self, d_model: int, num_styles: int):
        super().__init__()
        self.num_styles = num_styles
        self.style = nn.Embedding(num_styles, d_model)
        self.mlp = nn.Sequential(
            nn.Linear(d_model, d_model),
            nn.SiLU(),
            nn.Linear(d_model, d_model),
        )

    def forward(self, t: torch.Tensor, style_id: torch.Tensor) -> torch.Tensor:
        if torch.any((style_id < 0) | (style_id >= self.num_styles)):
            raise ValueError(f"style_id out of range [0, {self.num_styles})")
        emb = timestep_embedding(t, self.style.embedding_dim) + self.style(style_id)
        return self.mlp(emb)


def embed_global(g: GlobalCond, module: GlobalEmbedding) -> torch.Tensor:
    """Embed a single (t, style) pair; returns a (d_model,) vector."""
    t = torch.tensor([g.t], dtype=torch.float32)
    s = torch.tensor([g.style_id], dtype=torch.long)
    return module(t, s).squeeze(0)


class SelfAttention(nn.Module):
    def __init__(self, d_model: int, heads: int):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.out = nn.Linear(d_model, d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, t, d = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        q = q.view(b, t, self.heads, d // self.heads).transpose(1, 2)
        k = k.view(b, t, self.heads, d // self.heads).transpose(1, 2)
        v = v.view(b, t, self.heads, d // self.heads).transpose(1, 2)
        y = F.scaled_dot_product_attention(q, k, v)
        return self.out(y.transpose(1, 2).reshape(b, t, d))


class Block(nn.Module):
    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        d = cfg.d_model
        self.placement = cfg.placement
        self.norm_attn = nn.LayerNorm(d, elementwise_affine=False)
        self.norm_ffn = nn.LayerNorm(d, elementwise_affine=False)
        # small random init: the global embedding must steer blocks from step
        # one, there is no pretrained phase to protect
        self.adaln_attn = nn.Linear(d, 2 * d)
        self.adaln_ffn = nn.Linear(d, 2 * d)
        self.attn = SelfAttention(d, cfg.heads)
        self.ffn = nn.Sequential(
            nn.Linear(d, cfg.ffn_mult * d),
            nn.GELU(),
            nn.Linear(cfg.ffn_mult * d, d),
        )
        self.injector = MelodyInjector(cfg.injector, d, cfg.m_width)

    def _modulated_norm(self, x, norm, adaln, g):
        scale, shift = adaln(g).chunk(2, dim=-1)
        return norm(x) * (1.0 + scale.unsqueeze(-2)) + shift.unsqueeze(-2)

    def forward(self, x: torch.Tensor, g: torch.Tensor, m: torch.Tensor | None) -> torch.Tensor:
        # melody injection modulates the residual-stream activation entering
        # the chosen sublayer (the post-attention, pre-FFN activation for the
        # default placement)
        inject = self.injector.variant != Injector.NONE
        if inject and self.placement == Placement.BEFORE_ATTN:
            x = self.injector(x, m)
        x = x + self.attn(self._modulated_norm(x, self.norm_attn, self.adaln_attn, g))
        if inject and self.placement == Placement.BEFORE_FFN:
            x = self.injector(x, m)
        x = x + self.ffn(self._modulated_norm(x, self.norm_ffn, self.adaln_ffn, g))
        return x


class Denoiser(nn.Module):
    """Velocity network for the linear flow path.

    forward(x_t, t, style_id, pitch_feat=None, m=None) with
      x_t (B, T, latent_dim), t (B,), style_id (B,) long,
      pitch_feat (B, T0, 2) raw pitch features, or m (B, T, m_width) a
      precomputed condition. With no melody input and a melody-aware injector,
      the condition falls back to zeros (the null condition used for dropout
      and guidance). injector=NONE ignores melody entirely.
    """

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.d_model
        self.in_proj = nn.Linear(cfg.latent_dim, d)
        self.global_embed = GlobalEmbedding(d, cfg.num_styles)
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.num_blocks))
        self.final_norm = nn.LayerNorm(d, elementwise_affine=False)
        self.out_proj = nn.Linear(d, cfg.latent_dim)
        if cfg.injector != Injector.NONE:
            self.melody_encoder = MelodyEncoder(
                cfg.m_width, cfg.enc_channels, cfg.enc_kernel,
                fourier_feats=cfg.enc_fourier)

    def encode_melody(self, pitch_feat: torch.Tensor, length: int) -> torch.Tensor:
        """(B, T0, 2) pitch features -> (B, length, m_width) condition."""
        return interpolate(self.melody_encoder(pitch_feat), length)

    def forward(self, x_t, t, style_id, pitch_feat=None, m=None):
        if x_t.ndim != 3 or x_t.shape[-1] != self.cfg.latent_dim:
            raise ValueError(f"expected x_t (B, T, {self.cfg.latent_dim}), got {tuple(x_t.shape)}")
        b, length, _ = x_t.shape
        if self.cfg.injector != Injector.NONE and m is None:
            if pitch_feat is not None:
                m = self.encode_melody(pitch_feat, length)
            else:
                m = x_t.new_zeros(b, length, self.cfg.m_width)
        g = self.global_embed(t, style_id)
        h = self.in_proj(x_t)
        if self.cfg.use_positions:
            h = h + sinusoidal_positions(length, self.cfg.d_model,
                                         dtype=h.dtype, device=h.device)
        for blk in self.blocks:
            h = blk(h, g, m)
        return self.out_proj(self.final_norm(h))


def adapter_param(name: str) -> bool:
    """True for parameters trained when the backbone is frozen:
    melody encoder, per-block refiners, and injection projectors."""
    return name.startswith("melody_encoder.") or ".injector." in name


def seeded_init(model: nn.Module, seed: int) -> None:
    """Deterministic per-module initialization keyed by (seed, module name).

    Modules shared between configurations (same qualified name) receive
    identical weights regardless of which other modules exist, so e.g. a
    melody-conditioned model and its unconditional twin share backbone
    weights exactly. Zero-initialized layers keep their zeros.
    """
    import hashlib

    for name, module in sorted(model.named_modules(), key=lambda kv: kv[0]):
        if getattr(module, "_keep_zero", False):
            continue
        g = torch.Generator()
        digest = hashlib.sha256(f"{seed}:{name}".encode()).digest()
        g.manual_seed(int.from_bytes(digest[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF)
        with torch.no_grad():
            if isinstance(module, (nn.Linear, nn.Conv1d)):
                if isinstance(module, nn.Linear):
                    fan_in = module.in_features
                else:
                    fan_in = module.in_channels * module.kernel_size[0]
                gain = getattr(module, "_init_gain", None)
                # default matches torch's kaiming-uniform; _init_gain marks
                # layers that need variance-preserving scale instead
                bound = (gain * math.sqrt(3.0 / fan_in)) if gain else (1.0 / math.sqrt(fan_in))
                module.weight.uniform_(-bound, bound, generator=g)
                if module.bias is not None:
                    module.bias.zero_()
            elif isinstance(module, nn.Embedding):
                module.weight.normal_(0.0, 0.02, generator=g)
