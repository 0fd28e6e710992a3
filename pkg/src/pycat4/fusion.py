"""Multi-scale fusion: FPN top-down pathway plus an ASPP context module.

The deepest backbone stage optionally passes through ASPP, then a standard
FPN (1x1 laterals, top-down upsample+add, 3x3 smoothing) emits the three
finest levels.  The global descriptor is the average-pooled deepest stage.
"""

from dataclasses import dataclass

from . import tensor as T
from .layers import (Conv2d, Linear, Module, ModuleList, bilinear_resize,
                     global_avg_pool)
from .tensor import DimensionError, Tensor


@dataclass
class FeaturePyramid:
    """Ordered coarse-to-fine spatial levels sharing one channel width, plus
    a global vector."""
    levels: list
    global_vec: Tensor

    def __post_init__(self):
        if len(self.levels) != 3:
            raise DimensionError(f"expected 3 levels, got {len(self.levels)}")
        widths = {l.shape[1] for l in self.levels}
        if len(widths) != 1:
            raise DimensionError(f"levels disagree on channels: {widths}")
        sizes = [l.shape[2] for l in self.levels]
        if sorted(sizes) != sizes:
            raise DimensionError(f"levels must be coarse-to-fine, got {sizes}")


class ASPP(Module):
    """Parallel context branches: 1x1, dilated 3x3 per rate, global pool.

    Each branch maps C -> C_f with a ReLU; the concatenation is fused by a
    1x1 conv with no trailing activation, so zeroed kernels reduce the whole
    block to its fuse bias.
    """

    def __init__(self, in_ch, out_ch, rng, rates=(1, 2, 4, 8)):
        super().__init__()
        self.rates = tuple(rates)
        self.point = Conv2d(in_ch, out_ch, 1, rng)
        self.branches = ModuleList([
            Conv2d(in_ch, out_ch, 3, rng, padding=r, dilation=r) for r in self.rates])
        self.pool_proj = Linear(in_ch, out_ch, rng)
        self.fuse = Conv2d((2 + len(self.rates)) * out_ch, out_ch, 1, rng)

    def forward(self, x):
        B, C, H, W = x.shape
        outs = [T.relu(self.point(x))]
        for conv in self.branches:
            outs.append(T.relu(conv(x)))
        pooled = T.relu(self.pool_proj(global_avg_pool(x)))
        pooled = T.reshape(pooled, (B, -1, 1, 1))
        outs.append(bilinear_resize(pooled, (H, W)))
        return self.fuse(T.concat(outs, axis=1))


class FPN(Module):
    """Top-down feature pyramid over four stage maps; emits the finest three."""

    def __init__(self, stage_widths, out_ch, rng):
        super().__init__()
        if len(stage_widths) != 4:
            raise DimensionError(f"expected 4 stage widths, got {stage_widths}")
        self.laterals = ModuleList([Conv2d(w, out_ch, 1, rng) for w in stage_widths])
        self.smooths = ModuleList([Conv2d(out_ch, out_ch, 3, rng, padding=1)
                                   for _ in range(3)])

    def forward(self, stages):
        if len(stages) != 4:
            raise DimensionError(f"expected 4 stage maps, got {len(stages)}")
        for a, b in zip(stages, stages[1:]):
            if a.shape[2] < b.shape[2]:
                raise DimensionError("stages must shrink fine-to-coarse")
        tops = [lat(s) for lat, s in zip(self.laterals, stages)]
        p = tops[3]
        merged = []
        for i in (2, 1, 0):
            p = tops[i] + bilinear_resize(p, tops[i].shape[2:])
            merged.append(p)
        # merged is [14, 28, 56] fine order reversed; smooth and sort coarse-to-fine
        out = [self.smooths[i](m) for i, m in enumerate(merged)]
        return out  # coarse-to-fine: sizes of stages[2], stages[1], stages[0]


class FusePyramid(Module):
    """ASPP (optional) on the deepest stage, then FPN; gathers the pyramid."""

    def __init__(self, stage_widths, out_ch, rng, rates=(1, 2, 4, 8), use_aspp=True):
        super().__init__()
        self.use_aspp = use_aspp
        widths = list(stage_widths)
        if use_aspp:
            self.aspp = ASPP(widths[3], out_ch, rng, rates)
            widths[3] = out_ch
        self.fpn = FPN(widths, out_ch, rng)

    def forward(self, stages):
        deepest = stages[3]
        if self.use_aspp:
            stages = list(stages[:3]) + [self.aspp(deepest)]
        levels = self.fpn(stages)
        return FeaturePyramid(levels=levels, global_vec=global_avg_pool(deepest))


__all__ = ["FeaturePyramid", "ASPP", "FPN", "FusePyramid"]
