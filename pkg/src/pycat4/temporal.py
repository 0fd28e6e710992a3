"""Spatial-temporal fusion over a causal window of frames.

Per frame, pooled pyramid tokens pass through a small spatial transformer;
their mean embedding then crosses a temporal transformer over the window,
with padding frames masked out.  The last (current) frame's output feeds a
zero-initialized projection added residually onto the current global vector,
so a fresh model is an exact single-frame bypass.  Spatial pyramid levels
pass through untouched.
"""

import numpy as np

from . import tensor as T
from .fusion import FeaturePyramid
from .layers import (LayerNorm, Linear, Mlp, Module, ModuleList,
                     MultiHeadAttention, global_avg_pool, parameter)
from .tensor import ContractError, DimensionError, Tensor

MASK_FILL = -1e9


class EncoderBlock(Module):
    """Pre-norm transformer block; positional terms enter the attention branch
    only, so zeroed output projections make the block an exact identity."""

    def __init__(self, dim, num_heads, rng, mlp_ratio=4):
        super().__init__()
        self.norm1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, num_heads, rng)
        self.norm2 = LayerNorm(dim)
        self.mlp = Mlp(dim, mlp_ratio * dim, rng)

    def forward(self, x, mask=None, pos=None):
        a = self.norm1(x)
        if pos is not None:
            a = a + pos
        x = x + self.attn(a, mask=mask)
        return x + self.mlp(self.norm2(x))


class SpatialEncoder(Module):
    """Fixed-length token set encoder with learned positional embeddings."""

    def __init__(self, num_tokens, dim, rng, depth=2, num_heads=2):
        super().__init__()
        self.num_tokens = num_tokens
        self.pos = parameter(rng.normal(0.0, 0.02, size=(num_tokens, dim)))
        self.blocks = ModuleList(
            [EncoderBlock(dim, num_heads, rng) for _ in range(depth)])

    def forward(self, tokens):
        if tokens.shape[1] != self.num_tokens:
            raise DimensionError(
                f"expected {self.num_tokens} tokens, got {tokens.shape}")
        x = tokens
        for i, blk in enumerate(self.blocks):
            x = blk(x, pos=self.pos if i == 0 else None)
        return x


class TemporalEncoder(Module):
    """Encoder over the frame axis; invalid frames get zero attention weight.

    Positional embeddings cover T_max slots and align to the window end, so
    the current frame always sees the same embedding.
    """

    def __init__(self, dim, rng, t_max=9, depth=2, num_heads=2):
        super().__init__()
        self.t_max = t_max
        self.pos = parameter(rng.normal(0.0, 0.02, size=(t_max, dim)))
        self.blocks = ModuleList(
            [EncoderBlock(dim, num_heads, rng) for _ in range(depth)])

    def forward(self, frames, valid):
        B, t, D = frames.shape
        valid = np.asarray(valid, dtype=bool)
        if valid.shape != (t,):
            raise DimensionError(f"validity flags {valid.shape} vs {t} frames")
        if not 1 <= t <= self.t_max:
            raise ContractError(f"window length {t} outside [1, {self.t_max}]")
        if not valid.any():
            raise ContractError("window has no valid frame")
        mask = np.where(valid[None, :], 0.0, MASK_FILL)
        mask = np.broadcast_to(mask, (t, t))
        pos = self.pos[self.t_max - t:]
        x = frames
        for i, blk in enumerate(self.blocks):
            x = blk(x, mask=mask, pos=pos if i == 0 else None)
        return x


class TemporalFusion(Module):
    """Fuses a causal window of feature pyramids into the current frame."""

    def __init__(self, level_width, global_width, rng, dim=64, t_max=9,
                 spatial_depth=2, temporal_depth=2, num_heads=2):
        super().__init__()
        self.t_max = t_max
        self.level_projs = ModuleList(
            [Linear(level_width, dim, rng) for _ in range(3)])
        self.global_proj = Linear(global_width, dim, rng)
        self.spatial = SpatialEncoder(4, dim, rng, spatial_depth, num_heads)
        self.temporal = TemporalEncoder(dim, rng, t_max, temporal_depth, num_heads)
        self.out_proj = Linear(dim, global_width, rng, zero_init=True)

    def frame_tokens(self, pyramid):
        toks = [proj(global_avg_pool(level))
                for proj, level in zip(self.level_projs, pyramid.levels)]
        toks.append(self.global_proj(pyramid.global_vec))
        return T.stack(toks, axis=1)  # [B, 4, dim]

    def forward(self, pyramids, valid=None):
        t = len(pyramids)
        if valid is None:
            valid = np.ones(t, dtype=bool)
        valid = np.asarray(valid, dtype=bool)
        if not valid[-1]:
            raise ContractError("current (last) frame must be valid")
        embeds = []
        for pyr in pyramids:
            toks = self.spatial(self.frame_tokens(pyr))
            embeds.append(toks.mean(axis=1))  # [B, dim]
        frames = T.stack(embeds, axis=1)  # [B, t, dim]
        fused = self.temporal(frames, valid)
        current = fused[:, t - 1, :]
        cur_pyr = pyramids[-1]
        return FeaturePyramid(
            levels=cur_pyr.levels,
            global_vec=cur_pyr.global_vec + self.out_proj(current))


__all__ = ["MASK_FILL", "EncoderBlock", "SpatialEncoder", "TemporalEncoder",
           "TemporalFusion"]
