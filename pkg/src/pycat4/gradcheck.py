"""Finite-difference verification of every differentiable operation.

Each registered check compares reverse-mode gradients against central
differences and reports the worst relative error.  Elementwise ops are
probed at every coordinate; large composites sample a deterministic
subset.  `run_checks("swin")` restricts to one name prefix.
"""

import dataclasses
import time

import numpy as np

from . import layers as L
from . import tensor as T
from .body import BodyModel, build_default_mesh, project_weak_perspective, rodrigues
from .coord_attention import CoordAttention
from .fusion import FeaturePyramid, FusePyramid
from .model import PoseNetwork
from .regressor import total_loss
from .swin import SwinBlock
from .temporal import TemporalFusion
from .tensor import (ContractError, Tensor, backward, finite_diff_grad,
                     grad_of, new_tape)

CHECKS = []


def register(name, tol=1e-5):
    def deco(fn):
        CHECKS.append((name, fn, tol))
        return fn
    return deco


def _rel(a, b):
    denom = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-12)
    return float(np.abs(np.asarray(a) - np.asarray(b)).max(initial=0.0) / denom)


def _sample_coords(size, k):
    return sorted(set(np.linspace(0, size - 1, min(k, size)).astype(int)))


def input_grad_err(build_loss, x0, coords=None, h=1e-5):
    """Worst rel. error of d(build_loss)/dx at x0 (all coords by default)."""
    x0 = np.asarray(x0, dtype=float)
    xt = Tensor(x0, requires_grad=True)
    with new_tape():
        grads = backward(build_loss(xt))
        g = grad_of(grads, xt).data
    fd = finite_diff_grad(build_loss, Tensor(x0), h=h, coords=coords)
    if coords is not None:
        mask = np.zeros(g.size, dtype=bool)
        mask[np.asarray(coords)] = True
        g = np.where(mask.reshape(g.shape), g, 0.0)
    return _rel(g, fd)


def param_grad_err(build_loss, param, coords=None, h=1e-5):
    """Same as input_grad_err but differentiating a module parameter."""
    with new_tape():
        grads = backward(build_loss())
        g = grad_of(grads, param).data
    p0 = param.data.copy()

    def f(pt):
        param.data = pt.data
        try:
            return build_loss()
        finally:
            param.data = p0

    fd = finite_diff_grad(f, Tensor(p0), h=h, coords=coords)
    if coords is not None:
        mask = np.zeros(g.size, dtype=bool)
        mask[np.asarray(coords)] = True
        g = np.where(mask.reshape(g.shape), g, 0.0)
    return _rel(g, fd)


def _mix(shape, seed):
    return Tensor(np.random.default_rng(seed).normal(size=shape))


# --- tensor engine: elementwise and binary ---------------------------------

def _unary(fn, x0):
    m = _mix(np.asarray(x0).shape, 99)
    return input_grad_err(lambda x: (fn(x) * m).sum(), x0)


_RNG = np.random.default_rng(12345)
_X = _RNG.normal(size=(3, 4))
_POS = np.abs(_X) + 0.5
_SAFE = np.where(np.abs(_X) < 0.1, 0.3, _X)  # keep clear of relu/abs kinks


@register("tensor.add")
def _():
    y = Tensor(_RNG.normal(size=(3, 4)))
    return max(_unary(lambda x: x + y, _X), _unary(lambda x: y + x, _X))


@register("tensor.sub")
def _():
    y = Tensor(_RNG.normal(size=(3, 4)))
    return max(_unary(lambda x: x - y, _X), _unary(lambda x: y - x, _X))


@register("tensor.mul")
def _():
    y = Tensor(_RNG.normal(size=(3, 4)))
    return _unary(lambda x: x * y, _X)


@register("tensor.div")
def _():
    y = Tensor(np.abs(_RNG.normal(size=(3, 4))) + 0.5)
    return max(_unary(lambda x: x / y, _X),
               _unary(lambda x: Tensor(np.ones((3, 4))) / x, _POS))


@register("tensor.neg")
def _():
    return _unary(lambda x: -x, _X)


@register("tensor.pow_scalar")
def _():
    return _unary(lambda x: x ** 1.7, _POS)


@register("tensor.exp")
def _():
    return _unary(T.exp, _X * 0.5)


@register("tensor.log")
def _():
    return _unary(T.log, _POS)


@register("tensor.sqrt")
def _():
    return _unary(T.sqrt, _POS)


@register("tensor.sin")
def _():
    return _unary(T.sin, _X)


@register("tensor.cos")
def _():
    return _unary(T.cos, _X)


@register("tensor.tanh")
def _():
    return _unary(T.tanh, _X)


@register("tensor.sigmoid")
def _():
    return _unary(T.sigmoid, _X)


@register("tensor.relu")
def _():
    return _unary(T.relu, _SAFE)


@register("tensor.gelu")
def _():
    return _unary(T.gelu, _X)


@register("tensor.absolute")
def _():
    return _unary(T.absolute, _SAFE)


@register("tensor.where")
def _():
    cond = Tensor(_X > 0)
    y = Tensor(_RNG.normal(size=(3, 4)))
    return max(_unary(lambda x: T.where(cond, x, y), _X),
               _unary(lambda x: T.where(cond, y, x), _X))


@register("tensor.matmul")
def _():
    a0 = _RNG.normal(size=(3, 4))
    b0 = _RNG.normal(size=(4, 2))
    bt = Tensor(b0)
    at = Tensor(a0)
    m = _mix((3, 2), 7)
    e1 = input_grad_err(lambda a: (T.matmul(a, bt) * m).sum(), a0)
    e2 = input_grad_err(lambda b: (T.matmul(at, b) * m).sum(), b0)
    batched = _RNG.normal(size=(2, 3, 4))
    e3 = input_grad_err(
        lambda a: (T.matmul(a, bt) * _mix((2, 3, 2), 8)).sum(), batched)
    return max(e1, e2, e3)


@register("tensor.reduce_sum")
def _():
    return _unary(lambda x: T.reshape(x.sum(axis=1, keepdims=True), (3, 1)),
                  _X)


@register("tensor.reduce_mean")
def _():
    m = _mix((3, 1), 5)
    return input_grad_err(
        lambda x: (x.mean(axis=1, keepdims=True) * m).sum(), _X)


@register("tensor.reduce_max")
def _():
    x0 = np.arange(12.0).reshape(3, 4) + _RNG.uniform(0, 0.3, size=(3, 4))
    m = _mix((3, 1), 6)
    return input_grad_err(
        lambda x: (T.reduce_max(x, axis=1, keepdims=True) * m).sum(), x0)


@register("tensor.softmax")
def _():
    m = _mix((3, 4), 11)
    return input_grad_err(lambda x: (T.softmax(x, axis=-1) * m).sum(), _X)


@register("tensor.logsumexp")
def _():
    m = _mix((3, 1), 13)
    return input_grad_err(
        lambda x: (T.logsumexp(x, axis=1, keepdims=True) * m).sum(), _X)


@register("tensor.reshape")
def _():
    m = _mix((2, 6), 14)
    return input_grad_err(lambda x: (T.reshape(x, (2, 6)) * m).sum(), _X)


@register("tensor.transpose")
def _():
    m = _mix((4, 3), 15)
    return input_grad_err(lambda x: (T.transpose(x, (1, 0)) * m).sum(), _X)


@register("tensor.getitem")
def _():
    m = _mix((2, 2), 16)
    return input_grad_err(lambda x: (x[1:3, 0:2] * m).sum(), _X)


@register("tensor.take")
def _():
    idx = np.array([2, 0, 2])
    m = _mix((3, 4), 17)
    return input_grad_err(lambda x: (T.take(x, idx, axis=0) * m).sum(), _X)


@register("tensor.concat")
def _():
    y = Tensor(_RNG.normal(size=(3, 2)))
    m = _mix((3, 6), 18)
    return input_grad_err(lambda x: (T.concat([x, y], axis=1) * m).sum(), _X)


@register("tensor.stack")
def _():
    y = Tensor(_RNG.normal(size=(3, 4)))
    m = _mix((2, 3, 4), 19)
    return input_grad_err(lambda x: (T.stack([x, y], axis=0) * m).sum(), _X)


@register("tensor.pad")
def _():
    m = _mix((5, 8), 20)
    return input_grad_err(
        lambda x: (T.pad(x, ((1, 1), (2, 2))) * m).sum(), _X)


@register("tensor.roll")
def _():
    m = _mix((3, 4), 21)
    return input_grad_err(
        lambda x: (T.roll(x, (1, -2), axis=(0, 1)) * m).sum(), _X)


# --- layers -----------------------------------------------------------------

@register("layers.linear")
def _():
    rng = np.random.default_rng(0)
    lin = L.Linear(5, 3, rng)
    x0 = rng.normal(size=(2, 5))
    m = _mix((2, 3), 22)
    e = input_grad_err(lambda x: (lin(x) * m).sum(), x0)
    xt = Tensor(x0)
    for p in (lin.weight, lin.bias):
        e = max(e, param_grad_err(lambda: (lin(xt) * m).sum(), p))
    return e


@register("layers.layernorm")
def _():
    rng = np.random.default_rng(1)
    ln = L.LayerNorm(6)
    x0 = rng.normal(size=(2, 6))
    m = _mix((2, 6), 23)
    e = input_grad_err(lambda x: (ln(x) * m).sum(), x0)
    xt = Tensor(x0)
    for p in (ln.gamma, ln.beta):
        e = max(e, param_grad_err(lambda: (ln(xt) * m).sum(), p))
    return e


@register("layers.layernorm2d")
def _():
    rng = np.random.default_rng(2)
    ln = L.LayerNorm2d(4)
    x0 = rng.normal(size=(2, 4, 3, 3))
    m = _mix((2, 4, 3, 3), 24)
    return input_grad_err(lambda x: (ln(x) * m).sum(), x0)


@register("layers.conv2d")
def _():
    rng = np.random.default_rng(3)
    conv = L.Conv2d(2, 3, 3, rng, stride=2, padding=1, dilation=1)
    x0 = rng.normal(size=(2, 2, 6, 6))
    m = _mix((2, 3, 3, 3), 25)
    e = input_grad_err(lambda x: (conv(x) * m).sum(), x0)
    xt = Tensor(x0)
    for p in (conv.weight, conv.bias):
        e = max(e, param_grad_err(lambda: (conv(xt) * m).sum(), p))
    return e


@register("layers.conv_transpose2d")
def _():
    rng = np.random.default_rng(4)
    dec = L.ConvTranspose2d(3, 2, 4, rng, stride=2, padding=1)
    x0 = rng.normal(size=(1, 3, 4, 4))
    m = _mix((1, 2, 8, 8), 26)
    e = input_grad_err(lambda x: (dec(x) * m).sum(), x0)
    xt = Tensor(x0)
    e = max(e, param_grad_err(lambda: (dec(xt) * m).sum(), dec.weight))
    return e


@register("layers.global_avg_pool")
def _():
    x0 = np.random.default_rng(5).normal(size=(2, 3, 4, 4))
    m = _mix((2, 3), 27)
    return input_grad_err(lambda x: (L.global_avg_pool(x) * m).sum(), x0)


@register("layers.bilinear_resize")
def _():
    x0 = np.random.default_rng(6).normal(size=(1, 2, 4, 4))
    m = _mix((1, 2, 7, 7), 28)
    return input_grad_err(
        lambda x: (L.bilinear_resize(x, (7, 7)) * m).sum(), x0)


@register("layers.grid_sample")
def _():
    rng = np.random.default_rng(7)
    f0 = rng.normal(size=(1, 2, 5, 5))
    c0 = rng.uniform(-0.7, 0.7, size=(1, 6, 2))
    ft, ct = Tensor(f0), Tensor(c0)
    m = _mix((1, 2, 6), 29)
    e1 = input_grad_err(
        lambda f: (L.grid_sample_bilinear(f, ct) * m).sum(), f0)
    e2 = input_grad_err(
        lambda c: (L.grid_sample_bilinear(ft, c) * m).sum(), c0)
    return max(e1, e2)


@register("layers.attention")
def _():
    rng = np.random.default_rng(8)
    mha = L.MultiHeadAttention(8, 2, rng)
    x0 = rng.normal(size=(2, 5, 8))
    m = _mix((2, 5, 8), 30)
    e = input_grad_err(lambda x: (mha(x) * m).sum(), x0)
    xt = Tensor(x0)
    e = max(e, param_grad_err(lambda: (mha(xt) * m).sum(), mha.qkv.weight,
                              coords=_sample_coords(mha.qkv.weight.data.size, 8)))
    return e


@register("layers.mlp")
def _():
    rng = np.random.default_rng(9)
    mlp = L.Mlp(6, 12, rng)
    x0 = rng.normal(size=(2, 6))
    m = _mix((2, 6), 31)
    return input_grad_err(lambda x: (mlp(x) * m).sum(), x0)


# --- composite modules -------------------------------------------------------

@register("coord_attention.block")
def _():
    rng = np.random.default_rng(10)
    ca = CoordAttention(4, rng, reduction=2)
    ca.conv_h.weight.data = rng.normal(0, 0.3, ca.conv_h.weight.shape)
    ca.conv_w.weight.data = rng.normal(0, 0.3, ca.conv_w.weight.shape)
    x0 = rng.normal(size=(1, 4, 5, 5))
    m = _mix((1, 4, 5, 5), 32)
    e = input_grad_err(lambda x: (ca(x) * m).sum(), x0)
    xt = Tensor(x0)
    e = max(e, param_grad_err(lambda: (ca(xt) * m).sum(), ca.shared.weight))
    return e


@register("swin.block")
def _():
    rng = np.random.default_rng(11)
    blk = SwinBlock(8, 2, 4, shift=2, rng=rng)
    x0 = rng.normal(size=(1, 8, 8, 8))
    m = _mix((1, 8, 8, 8), 33)
    coords = _sample_coords(x0.size, 24)
    return input_grad_err(lambda x: (blk(x) * m).sum(), x0, coords=coords)


@register("fusion.pyramid")
def _():
    rng = np.random.default_rng(12)
    fuse = FusePyramid((2, 3, 4, 5), 4, rng, rates=(1, 2), use_aspp=True)
    stages0 = [rng.normal(size=(1, c, s, s))
               for c, s in zip((2, 3, 4, 5), (8, 4, 2, 1))]
    mixes = [_mix((1, 4, s, s), 40 + i) for i, s in enumerate((2, 4, 8))]
    gmix = _mix((1, 5), 44)

    def loss_for(stage_i):
        def f(x):
            stages = [Tensor(s) for s in stages0]
            stages[stage_i] = x
            pyr = fuse(stages)
            out = (pyr.global_vec * gmix).sum()
            for lvl, m in zip(pyr.levels, mixes):
                out = out + (lvl * m).sum()
            return out
        return f

    e = 0.0
    for i in (0, 3):
        coords = _sample_coords(stages0[i].size, 12)
        e = max(e, input_grad_err(loss_for(i), stages0[i], coords=coords))
    return e


@register("temporal.fusion")
def _():
    rng = np.random.default_rng(13)
    tf = TemporalFusion(3, 5, rng, dim=8, t_max=4, spatial_depth=1,
                        temporal_depth=1, num_heads=2)
    tf.out_proj.weight.data = rng.normal(0, 0.3, tf.out_proj.weight.shape)
    levels0 = [rng.normal(size=(1, 3, s, s)) for s in (1, 2, 4)]
    past = FeaturePyramid(
        levels=[Tensor(rng.normal(size=(1, 3, s, s))) for s in (1, 2, 4)],
        global_vec=Tensor(rng.normal(size=(1, 5))))
    g0 = rng.normal(size=(1, 5))
    m = _mix((1, 5), 45)

    def f(g):
        cur = FeaturePyramid(levels=[Tensor(l) for l in levels0], global_vec=g)
        return (tf([past, cur]).global_vec * m).sum()

    e = input_grad_err(f, g0)

    def f_lvl(x):
        cur = FeaturePyramid(
            levels=[x if i == 0 else Tensor(levels0[i]) for i in range(3)],
            global_vec=Tensor(g0))
        return (tf([past, cur]).global_vec * m).sum()

    e = max(e, input_grad_err(f_lvl, levels0[0],
                              coords=_sample_coords(levels0[0].size, 12)))
    return e


@register("body.rodrigues")
def _():
    rng = np.random.default_rng(14)
    w0 = rng.normal(0, 0.5, size=(2, 3))
    m = _mix((2, 3, 3), 46)
    e = input_grad_err(lambda w: (rodrigues(w) * m).sum(), w0)
    e = max(e, input_grad_err(lambda w: (rodrigues(w) * m).sum(),
                              np.zeros((2, 3))))
    return e


@register("body.kinematics")
def _():
    rng = np.random.default_rng(15)
    bm = BodyModel(build_default_mesh())
    pose0 = rng.normal(0, 0.3, size=(1, 16, 3))
    betas0 = rng.normal(0, 0.5, size=(1, 4))
    scale = Tensor(np.array([[0.8]]))
    trans = Tensor(np.array([[0.05, -0.02]]))
    m = _mix((1, 216, 2), 47)
    bt = Tensor(betas0)

    def f_pose(p):
        v, _ = bm.forward(p, bt)
        return (project_weak_perspective(v, scale, trans) * m).sum()

    e = input_grad_err(f_pose, pose0, coords=_sample_coords(pose0.size, 10))
    pt = Tensor(pose0)

    def f_betas(b):
        v, _ = bm.forward(pt, b)
        return (project_weak_perspective(v, scale, trans) * m).sum()

    e = max(e, input_grad_err(f_betas, betas0))
    return e


@register("model.e2e_tiny", tol=1e-4)
def _():
    from .config import RunConfig
    from .data import synth_generate
    from .model import pyramid_sizes
    from .training import prepare_gt

    cfg = RunConfig(variant="pycat4", img_size=32, width=4, pyramid_width=8,
                    depths=(1, 1, 1, 1), heads=(1, 1, 2, 2), window=4,
                    ca_reduction=4, t_max=3, temporal_dim=8, sample_verts=8,
                    augment=False)
    model = PoseNetwork(np.random.default_rng(3), **cfg.model_kwargs())
    # zero-init heads block gradient flow into most parameters; jitter them
    rng = np.random.default_rng(4)
    for name, p in model.named_parameters():
        if p.data.size and not p.data.any():
            p.data = rng.normal(0, 0.05, p.data.shape)
    rec = synth_generate(1, seed=5, img_size=32)[0]
    sizes = pyramid_sizes(cfg.variant, cfg.img_size)
    gt = prepare_gt([rec], cfg, sizes)

    def f(img):
        steps, dense = model.forward(img)
        return total_loss(steps, dense, gt, weights=cfg.loss_weights())[0]

    x0 = rec.image[None]
    e = input_grad_err(f, x0, coords=_sample_coords(x0.size, 6), h=1e-4)
    img_t = Tensor(x0)
    probe = dict(model.named_parameters())["backbone.embed.proj.weight"] \
        if "swin" in model.flags else model.parameters()[0]
    e = max(e, param_grad_err(lambda: f(img_t), probe,
                              coords=_sample_coords(probe.data.size, 4),
                              h=1e-4))
    return e


# --- driver ------------------------------------------------------------------

@dataclasses.dataclass
class CheckResult:
    name: str
    rel_err: float
    tol: float
    passed: bool
    seconds: float


def run_checks(module=None):
    """Run all (or one module prefix's) checks; returns CheckResults."""
    selected = [c for c in CHECKS
                if module is None or c[0] == module
                or c[0].split(".")[0] == module]
    if not selected:
        names = sorted({c[0].split(".")[0] for c in CHECKS})
        raise ContractError(f"no checks match {module!r}; modules: {names}")
    results = []
    for name, fn, tol in selected:
        t0 = time.time()
        err = float(fn())
        results.append(CheckResult(name=name, rel_err=err, tol=tol,
                                   passed=err < tol,
                                   seconds=time.time() - t0))
    return results


def format_results(results):
    lines = []
    for r in results:
        status = "ok  " if r.passed else "FAIL"
        lines.append(f"[{status}] {r.name:<26} rel_err={r.rel_err:.3e} "
                     f"tol={r.tol:.0e} ({r.seconds:.2f}s)")
    worst = max(results, key=lambda r: r.rel_err / r.tol)
    lines.append(f"{sum(r.passed for r in results)}/{len(results)} passed; "
                 f"worst {worst.name} at {worst.rel_err:.3e}")
    return "\n".join(lines)


__all__ = ["CheckResult", "run_checks", "format_results", "input_grad_err",
           "param_grad_err", "CHECKS"]
