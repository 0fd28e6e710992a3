"""Coordinate attention: factorized height/width gating of a feature map.

The block pools the map into a height profile and a width profile, encodes
them through a shared pointwise conv, then re-expands to two sigmoid gates
that multiply the input.  Output shape always equals input shape.
"""

import numpy as np

from . import tensor as T
from .layers import Conv2d, Module
from .tensor import DimensionError


def directional_pool(x):
    """[B,C,H,W] -> (height profile [B,C,H,1], width profile [B,C,1,W])."""
    if x.ndim != 4:
        raise DimensionError(f"expected 4-d map, got {x.shape}")
    h_profile = x.mean(axis=3, keepdims=True)
    w_profile = x.mean(axis=2, keepdims=True)
    return h_profile, w_profile


class CoordAttention(Module):
    """Gates x with per-height and per-width sigmoid profiles.

    Directional convs start at zero, so a fresh block computes 0.25 * x.
    """

    def __init__(self, channels, rng, reduction=8):
        super().__init__()
        if channels % reduction:
            raise DimensionError(
                f"reduction {reduction} does not divide {channels} channels")
        mid = channels // reduction
        self.shared = Conv2d(channels, mid, 1, rng)
        self.conv_h = Conv2d(mid, channels, 1, rng, zero_init=True)
        self.conv_w = Conv2d(mid, channels, 1, rng, zero_init=True)

    def forward(self, x):
        B, C, H, W = x.shape
        ph, pw = directional_pool(x)
        # stack both profiles along one spatial axis so the encoder is shared
        pw_t = T.transpose(pw, (0, 1, 3, 2))
        joint = T.concat([ph, pw_t], axis=2)
        enc = T.relu(self.shared(joint))
        eh = enc[:, :, :H, :]
        ew = T.transpose(enc[:, :, H:, :], (0, 1, 3, 2))
        g_h = T.sigmoid(self.conv_h(eh))
        g_w = T.sigmoid(self.conv_w(ew))
        return x * g_h * g_w


__all__ = ["directional_pool", "CoordAttention"]
