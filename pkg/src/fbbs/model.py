"""Conditional velocity predictor: a 1-D DiT over antenna positions.

Tokens are antenna positions (sequence length N_t) with two channels
(phase and scaled amplitude). Conditioning is the sum of a time-interval
embedding e_time(r, t) and the output of a beam index-aware masked
condition encoder; it modulates every block through adaLN with zero-
initialized projections, so a fresh model is the identity map with a
zero output head.

RSRP prompt values enter as 10*log10(c + 1e-12), standardized by the
training-set mean/std stored on the model; masked slots are zero-filled
before the point-wise projection and zeroed again in embedding space, so
the forward pass is exactly invariant to values at masked indices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import DimensionError, EmptyMask

PROMPT_DB_FLOOR = 1e-12


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 128
    n_blocks: int = 3
    n_heads: int = 4
    ffn_multiplier: float = 4.0
    n_channels: int = 2
    seq_len: int = 32
    cond_dim: int = 128

    def __post_init__(self):
        if self.embed_dim % self.n_heads != 0:
            raise ValueError("embed_dim must be divisible by n_heads")
        if self.n_blocks < 1:
            raise ValueError("n_blocks must be >= 1")
        if self.n_channels != 2:
            raise ValueError("model operates on phase+amplitude channels (C=2)")


def sinusoidal_embedding(x: torch.Tensor, dim: int, scale: float = 1000.0) -> torch.Tensor:
    """Standard sin/cos embedding of a 1-D tensor of positions/times."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=x.dtype, device=x.device) / half
    )
    args = scale * x[:, None] * freqs[None, :]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    if dim % 2 == 1:
        emb = F.pad(emb, (0, 1))
    return emb


class TimeIntervalEmbed(nn.Module):
    """Embeds the interval (r, t); concatenate-then-MLP so (r, r) and
    (0, t) stay distinguishable."""

    def __init__(self, embed_dim: int):
        super().__init__()
        self.embed_dim = embed_dim
        self.mlp = nn.Sequential(
            nn.Linear(embed_dim, embed_dim),
            nn.SiLU(),
            nn.Linear(embed_dim, embed_dim),
        )

    def forward(self, r: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        half = self.embed_dim // 2
        er = sinusoidal_embedding(r, half)
        et = sinusoidal_embedding(t, self.embed_dim - half)
        return self.mlp(torch.cat([er, et], dim=-1))


class ConditionEncoder(nn.Module):
    """Beam index-aware masked condition encoder.

    Per probing index: point-wise linear lift of the (normalized dB)
    measurement, sinusoidal index embedding added, position-wise nonlinear
    projector, embedding-space masking, cardinality-normalized mean
    pooling, output MLP.
    """

    def __init__(self, q_max: int, cond_dim: int, embed_dim: int):
        super().__init__()
        self.value_proj = nn.Linear(1, cond_dim)
        self.f_pos = nn.Sequential(
            nn.Linear(cond_dim, cond_dim),
            nn.SiLU(),
            nn.Linear(cond_dim, cond_dim),
        )
        self.out_mlp = nn.Sequential(
            nn.Linear(cond_dim, embed_dim),
            nn.SiLU(),
            nn.Linear(embed_dim, embed_dim),
        )
        pos = sinusoidal_embedding(torch.arange(q_max, dtype=torch.float64), cond_dim, scale=1.0)
        self.register_buffer("index_embed", pos.to(torch.float32))

    def forward(self, features: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        # features: (B, Q_max) already normalized and zeroed at masked slots
        counts = mask.sum(dim=1, keepdim=True)
        if torch.any(counts == 0):
            raise EmptyMask("prompt with no active probing entries")
        v = self.value_proj(features.unsqueeze(-1))
        e = self.f_pos(v + self.index_embed.to(v.dtype)[None, :, :])
        e = e * mask.unsqueeze(-1)
        pooled = e.sum(dim=1) / counts
        return self.out_mlp(pooled)


def _rope_tables(seq_len: int, head_dim: int, dtype: torch.dtype) -> tuple[torch.Tensor, torch.Tensor]:
    half = head_dim // 2
    freqs = 10000.0 ** (-torch.arange(half, dtype=torch.float64) / half)
    angles = torch.arange(seq_len, dtype=torch.float64)[:, None] * freqs[None, :]
    return torch.cos(angles).to(dtype), torch.sin(angles).to(dtype)


def _apply_rope(x: torch.Tensor, cos: torch.Tensor, sin: torch.Tensor) -> torch.Tensor:
    # x: (B, heads, T, head_dim); rotate consecutive pairs per position
    x1 = x[..., 0::2]
    x2 = x[..., 1::2]
    out = torch.empty_like(x)
    out[..., 0::2] = x1 * cos - x2 * sin
    out[..., 1::2] = x1 * sin + x2 * cos
    return out


class RoPEAttention(nn.Module):
    def __init__(self, embed_dim: int, n_heads: int, seq_len: int):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = embed_dim // n_heads
        self.qkv = nn.Linear(embed_dim, 3 * embed_dim)
        self.out = nn.Linear(embed_dim, embed_dim)
        cos, sin = _rope_tables(seq_len, self.head_dim, torch.float32)
        self.register_buffer("rope_cos", cos)
        self.register_buffer("rope_sin", sin)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, t, d = x.shape
        qkv = self.qkv(x).view(b, t, 3, self.n_heads, self.head_dim).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        cos = self.rope_cos.to(x.dtype)[None, None]
        sin = self.rope_sin.to(x.dtype)[None, None]
        q = _apply_rope(q, cos, sin)
        k = _apply_rope(k, cos, sin)
        attn = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(self.head_dim), dim=-1)
        y = (attn @ v).transpose(1, 2).reshape(b, t, d)
        return self.out(y)


def _modulate(x: torch.Tensor, shift: torch.Tensor, scale: torch.Tensor) -> torch.Tensor:
    return x * (1.0 + scale.unsqueeze(1)) + shift.unsqueeze(1)


class DiTBlock(nn.Module):
    """Pre-norm transformer block with adaLN shift/scale/gate per branch."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.embed_dim
        hidden = int(cfg.ffn_multiplier * d)
        self.norm1 = nn.LayerNorm(d, elementwise_affine=False)
        self.attn = RoPEAttention(d, cfg.n_heads, cfg.seq_len)
        self.norm2 = nn.LayerNorm(d, elementwise_affine=False)
        self.ffn = nn.Sequential(nn.Linear(d, hidden), nn.GELU(), nn.Linear(hidden, d))
        self.ada_modulation = nn.Sequential(nn.SiLU(), nn.Linear(d, 6 * d))
        nn.init.zeros_(self.ada_modulation[1].weight)
        nn.init.zeros_(self.ada_modulation[1].bias)

    def forward(self, x: torch.Tensor, e_total: torch.Tensor) -> torch.Tensor:
        shift1, scale1, gate1, shift2, scale2, gate2 = self.ada_modulation(e_total).chunk(6, dim=-1)
        x = x + gate1.unsqueeze(1) * self.attn(_modulate(self.norm1(x), shift1, scale1))
        x = x + gate2.unsqueeze(1) * self.ffn(_modulate(self.norm2(x), shift2, scale2))
        return x


class VelocityModel(nn.Module):
    """u(X_r, r, t, prompt): predicts a (B, 2, N_t) velocity tensor."""

    def __init__(self, config: ModelConfig, q_max: int | None = None):
        super().__init__()
        self.config = config
        self.q_max = config.seq_len if q_max is None else q_max
        d = config.embed_dim
        self.in_proj = nn.Linear(config.n_channels, d)
        self.time_embed = TimeIntervalEmbed(d)
        self.cond_encoder = ConditionEncoder(self.q_max, config.cond_dim, d)
        self.blocks = nn.ModuleList(DiTBlock(config) for _ in range(config.n_blocks))
        self.final_norm = nn.LayerNorm(d, elementwise_affine=False)
        self.final_modulation = nn.Sequential(nn.SiLU(), nn.Linear(d, 2 * d))
        self.head = nn.Linear(d, config.n_channels)
        nn.init.zeros_(self.final_modulation[1].weight)
        nn.init.zeros_(self.final_modulation[1].bias)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)
        # prompt dB normalization, overwritten with training-set stats
        self.register_buffer("prompt_mean", torch.tensor(0.0))
        self.register_buffer("prompt_std", torch.tensor(1.0))

    def set_prompt_normalization(self, mean: float, std: float) -> None:
        self.prompt_mean.fill_(mean)
        self.prompt_std.fill_(std)

    def prompt_features(self, values: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        feats = 10.0 * torch.log10(values.clamp_min(0.0) + PROMPT_DB_FLOOR)
        feats = (feats - self.prompt_mean) / self.prompt_std
        return feats * mask

    def conditioning(self, r: torch.Tensor, t: torch.Tensor,
                     values: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        return self.time_embed(r, t) + self.cond_encoder(self.prompt_features(values, mask), mask)

    def forward(self, x: torch.Tensor, r: torch.Tensor, t: torch.Tensor,
                values: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        if x.dim() != 3 or x.shape[1] != self.config.n_channels or x.shape[2] != self.config.seq_len:
            raise DimensionError(
                f"latent shape {tuple(x.shape)} does not match (B, {self.config.n_channels}, "
                f"{self.config.seq_len})"
            )
        b = x.shape[0]
        if r.dim() == 0:
            r = r.expand(b)
        if t.dim() == 0:
            t = t.expand(b)
        e_total = self.conditioning(r, t, values, mask)
        tokens = self.in_proj(x.transpose(1, 2))
        for block in self.blocks:
            tokens = block(tokens, e_total)
        shift, scale = self.final_modulation(e_total).chunk(2, dim=-1)
        tokens = _modulate(self.final_norm(tokens), shift, scale)
        return self.head(tokens).transpose(1, 2)


def init_parameters(config: ModelConfig, seed: int, q_max: int | None = None,
                    dtype: torch.dtype = torch.float32) -> VelocityModel:
    """Deterministically initialized model; adaLN projections and the output
    head start at exact zero so the fresh forward pass returns zeros."""
    torch.manual_seed(seed)
    model = VelocityModel(config, q_max=q_max)
    return model.to(dtype)
