"""Neural network layers on top of the tape engine.

Convolutions are registered as custom primitives with hand-written numpy
forward/backward rules (loop over kernel positions, einsum per position);
everything else composes differentiable tensor ops.
"""

import numpy as np

from . import tensor as T
from .tensor import DimensionError, Tensor


class Module:
    """Base class: tracks parameters and submodules by attribute assignment."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix=""):
        """Deterministic (insertion-ordered) list of (dotted name, tensor)."""
        out = []
        for name, p in self._params.items():
            out.append((prefix + name, p))
        for name, m in self._modules.items():
            out.extend(m.named_parameters(prefix + name + "."))
        return out

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class ModuleList(Module):
    def __init__(self, mods=()):
        super().__init__()
        self.items = []
        for m in mods:
            self.append(m)

    def append(self, m):
        self._modules[str(len(self.items))] = m
        self.items.append(m)

    def __iter__(self):
        return iter(self.items)

    def __len__(self):
        return len(self.items)

    def __getitem__(self, i):
        return self.items[i]


class Sequential(Module):
    def __init__(self, *mods):
        super().__init__()
        self.items = ModuleList(mods)

    def forward(self, x):
        for m in self.items:
            x = m(x)
        return x


def parameter(data):
    return Tensor(data, requires_grad=True)


def glorot(rng, fan_in, fan_out, shape):
    std = np.sqrt(2.0 / (fan_in + fan_out))
    return parameter(rng.normal(0.0, std, size=shape))


def he(rng, fan_in, shape):
    std = np.sqrt(2.0 / fan_in)
    return parameter(rng.normal(0.0, std, size=shape))


class Linear(Module):
    def __init__(self, in_dim, out_dim, rng, bias=True, zero_init=False):
        super().__init__()
        if zero_init:
            self.weight = parameter(np.zeros((in_dim, out_dim)))
        else:
            self.weight = glorot(rng, in_dim, out_dim, (in_dim, out_dim))
        self.bias = parameter(np.zeros(out_dim)) if bias else None

    def forward(self, x):
        if x.shape[-1] != self.weight.shape[0]:
            raise DimensionError(
                f"linear expects last dim {self.weight.shape[0]}, got {x.shape}")
        y = T.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    """Normalizes the last dimension; eps inside the sqrt."""

    def __init__(self, dim, eps=1e-5):
        super().__init__()
        self.gamma = parameter(np.ones(dim))
        self.beta = parameter(np.zeros(dim))
        self.eps = eps

    def forward(self, x):
        mu = x.mean(axis=-1, keepdims=True)
        d = x - mu
        var = (d * d).mean(axis=-1, keepdims=True)
        y = d / T.sqrt(var + self.eps)
        return y * self.gamma + self.beta


class LayerNorm2d(Module):
    """LayerNorm over the channel axis of a [B, C, H, W] map."""

    def __init__(self, channels, eps=1e-5):
        super().__init__()
        self.inner = LayerNorm(channels, eps)

    def forward(self, x):
        y = T.transpose(x, (0, 2, 3, 1))
        y = self.inner(y)
        return T.transpose(y, (0, 3, 1, 2))


# ---------------------------------------------------------------------------
# convolution primitives

def _pair(v):
    return (v, v) if isinstance(v, int) else tuple(v)


def _conv_out_size(h, k, s, p, d):
    return (h + 2 * p - d * (k - 1) - 1) // s + 1


def _conv_fwd(x, w, stride, padding, dilation):
    B, Cin, H, W = x.shape
    Cout, _, kh, kw = w.shape
    sh, sw = stride
    ph, pw = padding
    dh, dw = dilation
    Ho = _conv_out_size(H, kh, sh, ph, dh)
    Wo = _conv_out_size(W, kw, sw, pw, dw)
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    out = np.zeros((B, Cout, Ho, Wo))
    for i in range(kh):
        for j in range(kw):
            xs = xp[:, :, i * dh: i * dh + Ho * sh: sh, j * dw: j * dw + Wo * sw: sw]
            out += np.einsum("bchw,oc->bohw", xs, w[:, :, i, j], optimize=True)
    return out


def _conv_dx(g, w, stride, padding, dilation, in_spatial):
    B = g.shape[0]
    Cout, Cin, kh, kw = w.shape
    sh, sw = stride
    ph, pw = padding
    dh, dw = dilation
    H, W = in_spatial
    Ho, Wo = g.shape[2], g.shape[3]
    dxp = np.zeros((B, Cin, H + 2 * ph, W + 2 * pw))
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i * dh: i * dh + Ho * sh: sh, j * dw: j * dw + Wo * sw: sw] += \
                np.einsum("bohw,oc->bchw", g, w[:, :, i, j], optimize=True)
    return dxp[:, :, ph: ph + H, pw: pw + W]


def _conv_dw(g, x, stride, padding, dilation, ksize):
    kh, kw = ksize
    sh, sw = stride
    ph, pw = padding
    dh, dw = dilation
    Ho, Wo = g.shape[2], g.shape[3]
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    Cout, Cin = g.shape[1], x.shape[1]
    dwt = np.zeros((Cout, Cin, kh, kw))
    for i in range(kh):
        for j in range(kw):
            xs = xp[:, :, i * dh: i * dh + Ho * sh: sh, j * dw: j * dw + Wo * sw: sw]
            dwt[:, :, i, j] = np.einsum("bohw,bchw->oc", g, xs, optimize=True)
    return dwt


class Conv2d(Module):
    """2-d cross-correlation on [B, Cin, H, W] maps."""

    def __init__(self, in_ch, out_ch, kernel_size, rng, stride=1, padding=0,
                 dilation=1, bias=True, zero_init=False):
        super().__init__()
        kh, kw = _pair(kernel_size)
        if zero_init:
            self.weight = parameter(np.zeros((out_ch, in_ch, kh, kw)))
        else:
            self.weight = he(rng, in_ch * kh * kw, (out_ch, in_ch, kh, kw))
        self.bias = parameter(np.zeros(out_ch)) if bias else None
        self.stride = _pair(stride)
        self.padding = _pair(padding)
        self.dilation = _pair(dilation)

    def forward(self, x):
        w = self.weight
        if x.ndim != 4 or x.shape[1] != w.shape[1]:
            raise DimensionError(f"conv expects [B,{w.shape[1]},H,W], got {x.shape}")
        st, pd, dl = self.stride, self.padding, self.dilation
        for ax, (k, s, p, d) in enumerate(zip(w.shape[2:], st, pd, dl)):
            if _conv_out_size(x.shape[2 + ax], k, s, p, d) < 1:
                raise DimensionError(f"conv output empty for input {x.shape}")
        xd, wd = x.data, w.data
        out = _conv_fwd(xd, wd, st, pd, dl)
        in_spatial = xd.shape[2:]
        ksize = wd.shape[2:]

        def back(g):
            return (_conv_dx(g, wd, st, pd, dl, in_spatial),
                    _conv_dw(g, xd, st, pd, dl, ksize))

        y = T.primitive([x, w], out, back)
        if self.bias is not None:
            y = y + T.reshape(self.bias, (1, -1, 1, 1))
        return y


class ConvTranspose2d(Module):
    """Exact adjoint of Conv2d with the same geometry (checkerboard upsampling).

    Weight layout [Cin, Cout, kh, kw]; output spatial size
    (h - 1) * stride - 2 * padding + dilation * (k - 1) + 1.
    """

    def __init__(self, in_ch, out_ch, kernel_size, rng, stride=1, padding=0,
                 dilation=1, bias=True):
        super().__init__()
        kh, kw = _pair(kernel_size)
        self.weight = he(rng, in_ch * kh * kw, (in_ch, out_ch, kh, kw))
        self.bias = parameter(np.zeros(out_ch)) if bias else None
        self.stride = _pair(stride)
        self.padding = _pair(padding)
        self.dilation = _pair(dilation)

    def forward(self, x):
        w = self.weight
        if x.ndim != 4 or x.shape[1] != w.shape[0]:
            raise DimensionError(f"deconv expects [B,{w.shape[0]},H,W], got {x.shape}")
        st, pd, dl = self.stride, self.padding, self.dilation
        kh, kw = w.shape[2], w.shape[3]
        Ho = (x.shape[2] - 1) * st[0] - 2 * pd[0] + dl[0] * (kh - 1) + 1
        Wo = (x.shape[3] - 1) * st[1] - 2 * pd[1] + dl[1] * (kw - 1) + 1
        if Ho < 1 or Wo < 1:
            raise DimensionError(f"deconv output empty for input {x.shape}")
        xd, wd = x.data, w.data
        # forward of the adjoint == input-gradient rule of the matching conv
        out = _conv_dx(xd, wd, st, pd, dl, (Ho, Wo))
        ksize = (kh, kw)

        def back(g):
            return (_conv_fwd(g, wd, st, pd, dl),
                    _conv_dw(xd, g, st, pd, dl, ksize))

        y = T.primitive([x, w], out, back)
        if self.bias is not None:
            y = y + T.reshape(self.bias, (1, -1, 1, 1))
        return y


# ---------------------------------------------------------------------------
# attention

def mha_core(q, k, v, num_heads, mask=None, attn_bias=None):
    """Scaled dot-product attention over [B, N, D] with D split across heads.

    `mask` is an additive constant array, shape [N, N] or [nW, N, N] with
    B divisible by nW (per-window masks tiled over the batch).  `attn_bias`
    is a differentiable Tensor [num_heads, N, N] added to every batch row.
    """
    B, N, D = q.shape
    if D % num_heads:
        raise DimensionError(f"width {D} not divisible by {num_heads} heads")
    if k.shape != q.shape or v.shape != q.shape:
        raise DimensionError(f"q/k/v shapes differ: {q.shape} {k.shape} {v.shape}")
    dh = D // num_heads

    def split(t):
        return T.transpose(T.reshape(t, (B, N, num_heads, dh)), (0, 2, 1, 3))

    qh, kh, vh = split(q), split(k), split(v)
    scores = T.matmul(qh, T.transpose(kh, (0, 1, 3, 2))) * (1.0 / np.sqrt(dh))
    if attn_bias is not None:
        scores = scores + attn_bias
    if mask is not None:
        mask = np.asarray(mask)
        if mask.ndim == 2:
            scores = scores + mask[None, None]
        elif mask.ndim == 3:
            nw = mask.shape[0]
            if B % nw:
                raise DimensionError(f"batch {B} not divisible by {nw} windows")
            s5 = T.reshape(scores, (B // nw, nw, num_heads, N, N))
            s5 = s5 + mask[None, :, None]
            scores = T.reshape(s5, (B, num_heads, N, N))
        else:
            raise DimensionError(f"mask must be 2-d or 3-d, got {mask.shape}")
    att = T.softmax(scores, axis=-1)
    out = T.matmul(att, vh)
    return T.reshape(T.transpose(out, (0, 2, 1, 3)), (B, N, D))


class MultiHeadAttention(Module):
    """Self-attention block: fused qkv projection, core, output projection."""

    def __init__(self, dim, num_heads, rng):
        super().__init__()
        if dim % num_heads:
            raise DimensionError(f"width {dim} not divisible by {num_heads} heads")
        self.num_heads = num_heads
        self.qkv = Linear(dim, 3 * dim, rng)
        self.proj = Linear(dim, dim, rng)

    def forward(self, x, mask=None, attn_bias=None):
        D = x.shape[-1]
        qkv = self.qkv(x)
        q = qkv[:, :, 0:D]
        k = qkv[:, :, D:2 * D]
        v = qkv[:, :, 2 * D:3 * D]
        y = mha_core(q, k, v, self.num_heads, mask=mask, attn_bias=attn_bias)
        return self.proj(y)


class Mlp(Module):
    """Two-layer GELU MLP used inside transformer blocks."""

    def __init__(self, dim, hidden, rng, out_dim=None):
        super().__init__()
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, out_dim or dim, rng)

    def forward(self, x):
        return self.fc2(T.gelu(self.fc1(x)))


# ---------------------------------------------------------------------------
# spatial resampling

def global_avg_pool(x):
    """[B, C, H, W] -> [B, C] mean over the spatial grid."""
    if x.ndim != 4:
        raise DimensionError(f"expected 4-d map, got {x.shape}")
    return x.mean(axis=(2, 3))


def _interp_matrix(n_out, n_in):
    """Dense 1-d bilinear interpolation matrix [n_out, n_in], half-pixel centers."""
    m = np.zeros((n_out, n_in))
    if n_in == 1:
        m[:, 0] = 1.0
        return m
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    i0 = np.clip(np.floor(src).astype(int), 0, n_in - 1)
    i1 = np.clip(i0 + 1, 0, n_in - 1)
    f = np.clip(src - np.floor(src), 0.0, 1.0)
    f = np.where(src < 0, 0.0, np.where(src > n_in - 1, 1.0, f))
    np.add.at(m, (np.arange(n_out), i0), 1.0 - f)
    np.add.at(m, (np.arange(n_out), i1), f)
    return m


def bilinear_resize(x, size):
    """Resize [B, C, H, W] to [B, C, H2, W2] by separable bilinear interpolation.

    Implemented as two small dense interpolation matrices, so the backward
    pass is their exact transpose.
    """
    if x.ndim != 4:
        raise DimensionError(f"expected 4-d map, got {x.shape}")
    H2, W2 = size
    B, C, H, W = x.shape
    if (H2, W2) == (H, W):
        return x
    R = _interp_matrix(H2, H)
    Cm = _interp_matrix(W2, W)
    out = np.einsum("oh,bchw,pw->bcop", R, x.data, Cm, optimize=True)

    def back(g):
        return (np.einsum("oh,bcop,pw->bchw", R, g, Cm, optimize=True),)

    return T.primitive([x], out, back)


def grid_sample_bilinear(feat, coords):
    """Sample [B, C, H, W] at normalized coords [B, N, 2] (x, y in [-1, 1]).

    Half-pixel convention; zero padding outside the map.  Differentiable in
    both the feature map and the coordinates.  Returns [B, C, N].
    """
    if feat.ndim != 4 or coords.ndim != 3 or coords.shape[-1] != 2:
        raise DimensionError(f"bad shapes {feat.shape}, {coords.shape}")
    B, C, H, W = feat.shape
    if coords.shape[0] != B:
        raise DimensionError(f"batch mismatch {feat.shape} vs {coords.shape}")
    N = coords.shape[1]
    fd, cd = feat.data, coords.data
    px = (cd[..., 0] + 1.0) * (W / 2.0) - 0.5
    py = (cd[..., 1] + 1.0) * (H / 2.0) - 0.5
    x0 = np.floor(px).astype(int)
    y0 = np.floor(py).astype(int)
    fx = px - x0
    fy = py - y0

    corners = []
    for dy, dx in ((0, 0), (0, 1), (1, 0), (1, 1)):
        xi, yi = x0 + dx, y0 + dy
        valid = (xi >= 0) & (xi < W) & (yi >= 0) & (yi < H)
        xi_c = np.clip(xi, 0, W - 1)
        yi_c = np.clip(yi, 0, H - 1)
        wgt = (fx if dx else 1.0 - fx) * (fy if dy else 1.0 - fy) * valid
        corners.append((xi_c, yi_c, valid, wgt, dx, dy))

    bidx = np.arange(B)[:, None]
    vals = [fd[bidx, :, yi, xi] for xi, yi, _, _, _, _ in corners]  # each [B, N, C]
    out = sum(w[..., None] * v for (_, _, _, w, _, _), v in zip(corners, vals))
    out = out.transpose(0, 2, 1)  # [B, C, N]

    def back(g):
        gn = g.transpose(0, 2, 1)  # [B, N, C]
        dfeat = np.zeros_like(fd)
        for (xi, yi, _, w, _, _), _v in zip(corners, vals):
            np.add.at(dfeat, (bidx, slice(None), yi, xi), w[..., None] * gn)
        # weight derivatives wrt fractional offsets
        dfx = np.zeros((B, N))
        dfy = np.zeros((B, N))
        for (xi, yi, valid, _w, dx, dy), v in zip(corners, vals):
            gv = (gn * v).sum(-1) * valid
            wx = fx if dx else 1.0 - fx
            wy = fy if dy else 1.0 - fy
            dfx += gv * (1.0 if dx else -1.0) * wy
            dfy += gv * (1.0 if dy else -1.0) * wx
        dcoords = np.stack([dfx * (W / 2.0), dfy * (H / 2.0)], axis=-1)
        return dfeat, dcoords

    return T.primitive([feat, coords], out, back)


__all__ = [
    "Module", "ModuleList", "Sequential", "parameter", "glorot", "he",
    "Linear", "LayerNorm", "LayerNorm2d", "Conv2d", "ConvTranspose2d",
    "mha_core", "MultiHeadAttention", "Mlp",
    "global_avg_pool", "bilinear_resize", "grid_sample_bilinear",
]
