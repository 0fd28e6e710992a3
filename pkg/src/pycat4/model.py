"""Variant assembly: backbone, optional gating/fusion stages, regressor.

Five configurations form an incremental ladder; each adds one piece on top
of the previous so their effects can be compared under identical training:

  baseline            conv backbone, deconv pyramid
  ca                  + coordinate-attention gates on every stage
  ca_transformer      + hierarchical windowed-attention backbone (swap)
  ca_fpn_transformer  + FPN/ASPP pyramid (swap)
  pycat4              + temporal fusion over a causal frame window
"""

import numpy as np

from . import tensor as T
from .coord_attention import CoordAttention
from .fusion import FeaturePyramid, FusePyramid
from .layers import (Conv2d, ConvTranspose2d, Module, ModuleList,
                     global_avg_pool)
from .regressor import Regressor
from .swin import SwinBackbone
from .temporal import TemporalFusion
from .tensor import ContractError

VARIANTS = ("baseline", "ca", "ca_transformer", "ca_fpn_transformer",
            "pycat4")

DISPLAY_NAMES = {
    "baseline": "Baseline",
    "ca": "CA",
    "ca_transformer": "CA_Transformer",
    "ca_fpn_transformer": "CA_FPN_Transformer",
    "pycat4": "PyCAT4",
}

_FLAGS = {
    "baseline": set(),
    "ca": {"ca"},
    "ca_transformer": {"ca", "swin"},
    "ca_fpn_transformer": {"ca", "swin", "fpn"},
    "pycat4": {"ca", "swin", "fpn", "temporal"},
}


class ConvBackbone(Module):
    """Four stride-halving stages mirroring the transformer backbone's
    geometry: H/4, H/8, H/16, H/32 with widths w, 2w, 4w, 8w."""

    def __init__(self, rng, img_size, in_ch=3, width=32):
        super().__init__()
        if img_size % 4:
            raise ContractError(f"input size {img_size} not divisible by 4")
        self.img_size = img_size
        self.width = width
        self.stem = Conv2d(in_ch, width, 4, rng, stride=4)
        self.refine = Conv2d(width, width, 3, rng, padding=1)
        self.downs = ModuleList()
        self.mixes = ModuleList()
        for i in range(3):
            c = width * 2 ** i
            self.downs.append(Conv2d(c, 2 * c, 3, rng, stride=2, padding=1))
            self.mixes.append(Conv2d(2 * c, 2 * c, 3, rng, padding=1))

    def stage_widths(self):
        return [self.width * 2 ** i for i in range(4)]

    def forward(self, image):
        x = T.relu(self.refine(T.relu(self.stem(image))))
        maps = [x]
        for down, mix in zip(self.downs, self.mixes):
            x = T.relu(mix(T.relu(down(x))))
            maps.append(x)
        return maps


class DeconvPyramid(Module):
    """Three doubling transposed convolutions off the deepest stage."""

    def __init__(self, in_ch, out_ch, rng):
        super().__init__()
        chans = [in_ch, out_ch, out_ch, out_ch]
        self.ups = ModuleList([
            ConvTranspose2d(chans[i], chans[i + 1], 4, rng, stride=2, padding=1)
            for i in range(3)])

    def forward(self, deepest):
        levels = []
        x = deepest
        for up in self.ups:
            x = T.relu(up(x))
            levels.append(x)
        return levels


class PoseNetwork(Module):
    """One ablation variant end to end: image(s) in, IEF states + dense maps
    out."""

    def __init__(self, rng, variant="pycat4", img_size=112, in_ch=3,
                 width=32, pyramid_width=32, depths=(2, 2, 2, 2),
                 heads=(1, 2, 4, 8), window=7, ca_reduction=8, t_max=5,
                 temporal_dim=64, sample_verts=36, body=None):
        super().__init__()
        if variant not in _FLAGS:
            raise ContractError(f"unknown variant {variant!r}; "
                                f"expected one of {VARIANTS}")
        self.variant = variant
        self.flags = _FLAGS[variant]
        self.img_size = img_size
        if "swin" in self.flags:
            self.backbone = SwinBackbone(rng, img_size, in_ch=in_ch,
                                         width=width, depths=depths,
                                         heads=heads, window=window)
        else:
            self.backbone = ConvBackbone(rng, img_size, in_ch=in_ch,
                                         width=width)
        widths = self.backbone.stage_widths()
        if "ca" in self.flags:
            self.ca = ModuleList([CoordAttention(w, rng, reduction=ca_reduction)
                                  for w in widths])
        if "fpn" in self.flags:
            self.pyramid = FusePyramid(widths, pyramid_width, rng)
        else:
            self.deconvs = DeconvPyramid(widths[3], pyramid_width, rng)
        self.global_width = widths[3]
        if "temporal" in self.flags:
            self.temporal = TemporalFusion(pyramid_width, self.global_width,
                                           rng, dim=temporal_dim, t_max=t_max)
        self.regressor = Regressor(pyramid_width, self.global_width, rng,
                                   body=body, sample_verts=sample_verts)

    def extract_pyramid(self, image):
        stages = self.backbone(image)
        if "ca" in self.flags:
            stages = [gate(s) for gate, s in zip(self.ca, stages)]
        if "fpn" in self.flags:
            return self.pyramid(stages)
        return FeaturePyramid(levels=self.deconvs(stages[3]),
                              global_vec=global_avg_pool(stages[3]))

    def forward(self, image):
        """Single image [B,C,H,W] -> (IEF step states, dense prediction)."""
        return self.forward_sequence([image])

    def forward_sequence(self, frames, valid=None):
        """Causal frame window (list of [B,C,H,W], last = current)."""
        if not frames:
            raise ContractError("need at least one frame")
        if "temporal" in self.flags:
            pyramids = [self.extract_pyramid(f) for f in frames]
            pyr = self.temporal(pyramids, valid)
        else:
            pyr = self.extract_pyramid(frames[-1])
        return self.regressor(pyr)


def _stage_grids(img_size):
    g = img_size // 4
    grids = [g]
    for _ in range(3):
        g = (g + 1) // 2
        grids.append(g)
    return grids


def pyramid_sizes(variant, img_size):
    """Spatial sizes of the three pyramid levels a variant emits."""
    if variant not in _FLAGS:
        raise ContractError(f"unknown variant {variant!r}")
    grids = _stage_grids(img_size)
    if "fpn" in _FLAGS[variant]:
        return [grids[2], grids[1], grids[0]]
    return [grids[3] * 2, grids[3] * 4, grids[3] * 8]


__all__ = ["VARIANTS", "DISPLAY_NAMES", "ConvBackbone", "DeconvPyramid",
           "PoseNetwork", "pyramid_sizes"]
