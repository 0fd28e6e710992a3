"""Hierarchical shifted-window transformer backbone.

Four stages of windowed self-attention blocks separated by 2x2 patch
merging; spatial size halves and width doubles at each boundary.  Cyclic
shifts are plain rolls of the token grid, with additive masks keeping
attention from crossing the wrap-around seams.
"""

import numpy as np

from . import tensor as T
from .layers import (LayerNorm, Linear, Mlp, ModuleList, Module, mha_core,
                     parameter)
from .tensor import DimensionError, Tensor

MASK_FILL = -1e9


def patch_embed_tokens(image, patch):
    """Cut [B,C,H,W] into non-overlapping patches -> [B, (H/p)(W/p), C*p*p]."""
    B, C, H, W = image.shape
    p = patch
    if H % p or W % p:
        raise DimensionError(f"patch {p} does not divide image {H}x{W}")
    x = T.reshape(image, (B, C, H // p, p, W // p, p))
    x = T.transpose(x, (0, 2, 4, 1, 3, 5))
    return T.reshape(x, (B, (H // p) * (W // p), C * p * p))


class PatchEmbed(Module):
    def __init__(self, patch, in_ch, width, rng):
        super().__init__()
        self.patch = patch
        self.proj = Linear(in_ch * patch * patch, width, rng)
        self.norm = LayerNorm(width)

    def forward(self, image):
        return self.norm(self.proj(patch_embed_tokens(image, self.patch)))


def window_partition(x, M):
    """[B,H,W,D] -> [B*(H/M)*(W/M), M*M, D], windows in raster order."""
    B, H, W, D = x.shape
    if H % M or W % M:
        raise DimensionError(f"window {M} does not divide grid {H}x{W}")
    x = T.reshape(x, (B, H // M, M, W // M, M, D))
    x = T.transpose(x, (0, 1, 3, 2, 4, 5))
    return T.reshape(x, (B * (H // M) * (W // M), M * M, D))


def window_reverse(windows, M, H, W):
    """Exact inverse of window_partition."""
    nw = (H // M) * (W // M)
    if windows.shape[0] % nw:
        raise DimensionError(
            f"{windows.shape[0]} windows not divisible by grid count {nw}")
    B = windows.shape[0] // nw
    D = windows.shape[2]
    x = T.reshape(windows, (B, H // M, W // M, M, M, D))
    x = T.transpose(x, (0, 1, 3, 2, 4, 5))
    return T.reshape(x, (B, H, W, D))


def _region_ids(H, W, M, s):
    """Pre-shift region id per pixel of the rolled grid (the standard 3-slice split)."""
    ids = np.zeros((H, W))
    cnt = 0
    spans = (slice(0, -M), slice(-M, -s), slice(-s, None))
    for hs in spans:
        for ws in spans:
            ids[hs, ws] = cnt
            cnt += 1
    return ids


def shift_mask(H, W, M, s):
    """Additive attention mask [nW, M^2, M^2]: 0 within a region, -1e9 across."""
    nw = (H // M) * (W // M)
    if s == 0:
        return np.zeros((nw, M * M, M * M))
    ids = _region_ids(H, W, M, s)
    ids = ids.reshape(H // M, M, W // M, M).transpose(0, 2, 1, 3).reshape(nw, M * M)
    diff = ids[:, None, :] - ids[:, :, None]
    return np.where(diff != 0, MASK_FILL, 0.0)


def relative_index(M):
    """Flat index [M^4] from token-pair offset into a (2M-1)^2 bias table."""
    coords = np.stack(np.meshgrid(np.arange(M), np.arange(M), indexing="ij"))
    flat = coords.reshape(2, -1)
    rel = flat[:, :, None] - flat[:, None, :]  # [2, M^2, M^2]
    rel = rel + (M - 1)
    return (rel[0] * (2 * M - 1) + rel[1]).reshape(-1)


class WindowAttention(Module):
    """W-MSA over token windows with a learned relative position bias."""

    def __init__(self, dim, num_heads, M, rng):
        super().__init__()
        self.num_heads = num_heads
        self.M = M
        self.qkv = Linear(dim, 3 * dim, rng)
        self.proj = Linear(dim, dim, rng)
        self.bias_table = parameter(rng.normal(0.0, 0.02,
                                               size=((2 * M - 1) ** 2, num_heads)))
        self._index = relative_index(M)

    def forward(self, windows, mask=None):
        D = windows.shape[-1]
        n = self.M * self.M
        bias = T.take(self.bias_table, self._index)
        bias = T.transpose(T.reshape(bias, (n, n, self.num_heads)), (2, 0, 1))
        qkv = self.qkv(windows)
        q, k, v = qkv[:, :, :D], qkv[:, :, D:2 * D], qkv[:, :, 2 * D:]
        out = mha_core(q, k, v, self.num_heads, mask=mask, attn_bias=bias)
        return self.proj(out)


class SwinBlock(Module):
    """LN -> (shifted) window attention -> residual -> LN -> MLP -> residual."""

    def __init__(self, dim, num_heads, M, shift, rng, mlp_ratio=4):
        super().__init__()
        if shift and not 0 < shift < M:
            raise DimensionError(f"shift {shift} outside (0, {M})")
        self.M = M
        self.shift = shift
        self.norm1 = LayerNorm(dim)
        self.attn = WindowAttention(dim, num_heads, M, rng)
        self.norm2 = LayerNorm(dim)
        self.mlp = Mlp(dim, mlp_ratio * dim, rng)

    def forward(self, x):
        B, H, W, D = x.shape
        M, s = self.M, self.shift
        shortcut = x
        x = self.norm1(x)
        if s:
            x = T.roll(x, (-s, -s), axis=(1, 2))
        wins = window_partition(x, M)
        mask = shift_mask(H, W, M, s) if s else None
        wins = self.attn(wins, mask=mask)
        x = window_reverse(wins, M, H, W)
        if s:
            x = T.roll(x, (s, s), axis=(1, 2))
        x = shortcut + x
        return x + self.mlp(self.norm2(x))


class PatchMerging(Module):
    """2x2 neighborhood concat (4D) -> LN -> linear down to 2D; halves the grid."""

    def __init__(self, dim, rng):
        super().__init__()
        self.norm = LayerNorm(4 * dim)
        self.reduce = Linear(4 * dim, 2 * dim, rng, bias=False)

    def forward(self, x):
        B, H, W, D = x.shape
        if H % 2 or W % 2:
            raise DimensionError(f"patch merging needs even grid, got {H}x{W}")
        x0 = x[:, 0::2, 0::2, :]
        x1 = x[:, 1::2, 0::2, :]
        x2 = x[:, 0::2, 1::2, :]
        x3 = x[:, 1::2, 1::2, :]
        x = T.concat([x0, x1, x2, x3], axis=3)
        return self.reduce(self.norm(x))


class SwinBackbone(Module):
    """Patch embed + four block stages; emits NCHW maps at strides 4/8/16/32.

    Built for a fixed square input size.  Window size is clamped per stage
    to the grid (single-window stages skip the shift); an odd grid is
    zero-padded to even right before merging.
    """

    def __init__(self, rng, img_size, in_ch=3, width=32, depths=(2, 2, 2, 2),
                 heads=(1, 2, 4, 8), window=7, patch=4):
        super().__init__()
        if len(depths) != len(heads):
            raise DimensionError("depths and heads length mismatch")
        if img_size % (patch * 4):
            raise DimensionError(f"input size {img_size} not divisible by {patch * 4}")
        self.patch = patch
        self.window = window
        self.depths = tuple(depths)
        self.heads = tuple(heads)
        self.width = width
        self.img_size = img_size
        self.embed = PatchEmbed(patch, in_ch, width, rng)
        self.stages = ModuleList()
        self.merges = ModuleList()
        self.grids = []
        grid = img_size // patch
        for i in range(len(depths)):
            self.grids.append(grid)
            M = min(window, grid)
            if grid % M:
                raise DimensionError(
                    f"stage {i} grid {grid} incompatible with window {M}")
            dim = width * 2 ** i
            blocks = ModuleList()
            for b in range(depths[i]):
                shift = (M // 2) if (b % 2 == 1 and grid > M) else 0
                blocks.append(SwinBlock(dim, heads[i], M, shift, rng))
            self.stages.append(blocks)
            if i + 1 < len(depths):
                self.merges.append(PatchMerging(dim, rng))
                grid = (grid + 1) // 2

    def stage_widths(self):
        return [self.width * 2 ** i for i in range(len(self.depths))]

    def forward(self, image):
        B, C, H, W = image.shape
        if H != self.img_size or W != self.img_size:
            raise DimensionError(
                f"backbone built for {self.img_size}, got {H}x{W}")
        tokens = self.embed(image)
        h = H // self.patch
        x = T.reshape(tokens, (B, h, h, self.width))
        maps = []
        for i, blocks in enumerate(self.stages):
            for block in blocks:
                x = block(x)
            maps.append(T.transpose(x, (0, 3, 1, 2)))
            if i + 1 < len(self.depths):
                if x.shape[1] % 2:
                    x = T.pad(x, ((0, 0), (0, 1), (0, 1), (0, 0)))
                x = self.merges[i](x)
        return maps


__all__ = [
    "MASK_FILL", "patch_embed_tokens", "PatchEmbed",
    "window_partition", "window_reverse", "shift_mask", "relative_index",
    "WindowAttention", "SwinBlock", "PatchMerging", "SwinBackbone",
]
