"""Dense N-D tensors with reverse-mode automatic differentiation.

Every tensor wraps a numpy array and carries a globally unique node id.
Operations record themselves onto the active tape (one per thread); calling
:func:`backward` on a scalar loss walks that tape in reverse and returns a
map from node id to gradient.  Creation order is topological order, so the
reverse walk visits each recorded operation exactly once.
"""

import itertools
import threading
from contextlib import contextmanager

import numpy as np
from scipy.special import erf

DEFAULT_DTYPE = np.float64

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)

_node_counter = itertools.count()


class DimensionError(ValueError):
    """Shapes passed to an operation do not satisfy its contract."""


class ContractError(ValueError):
    """An operation precondition other than a shape constraint was violated."""


class Tape:
    """Ordered record of operations: (input node ids, output node id, backward rule)."""

    def __init__(self):
        self.entries = []

    def record(self, input_ids, output_id, backward_fn):
        self.entries.append((tuple(input_ids), output_id, backward_fn))

    def __len__(self):
        return len(self.entries)


class _State(threading.local):
    def __init__(self):
        self.tapes = [Tape()]
        self.grad_enabled = True


_state = _State()


def active_tape() -> Tape:
    return _state.tapes[-1]


@contextmanager
def new_tape():
    """Push a fresh tape for the duration of the block (one training step, typically)."""
    t = Tape()
    _state.tapes.append(t)
    try:
        yield t
    finally:
        _state.tapes.pop()


@contextmanager
def no_grad():
    """Disable recording; forward values are unaffected."""
    prev = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "node_id")

    def __init__(self, data, requires_grad=False):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=DEFAULT_DTYPE)
        self.requires_grad = bool(requires_grad)
        self.node_id = next(_node_counter)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _fail_scalar(self)

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar; all arithmetic routes through the module-level ops
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_coerce(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_coerce(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return pow_scalar(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def max(self, axis=None, keepdims=False):
        return reduce_max(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def _fail_scalar(t):
    raise ContractError(f"expected a scalar tensor, got shape {t.shape}")


def _coerce(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(inputs, out, backward_fn):
    """Register an op on the active tape if grad mode is on and any input needs it."""
    if _state.grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        active_tape().record([t.node_id for t in inputs], out.node_id, backward_fn)
    return out


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise arithmetic (trailing-dimension broadcast)

def _check_broadcast(a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as e:
        raise DimensionError(f"shapes {a.shape} and {b.shape} do not broadcast") from e


def add(a, b):
    a, b = _coerce(a), _coerce(b)
    _check_broadcast(a.data, b.data)
    out = Tensor(a.data + b.data)
    return _record([a, b], out, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = _coerce(a), _coerce(b)
    _check_broadcast(a.data, b.data)
    out = Tensor(a.data - b.data)
    return _record([a, b], out, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = _coerce(a), _coerce(b)
    _check_broadcast(a.data, b.data)
    out = Tensor(a.data * b.data)
    ad, bd = a.data, b.data
    return _record([a, b], out,
                   lambda g: (_unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)))


def div(a, b):
    a, b = _coerce(a), _coerce(b)
    _check_broadcast(a.data, b.data)
    out = Tensor(a.data / b.data)
    ad, bd = a.data, b.data
    return _record([a, b], out,
                   lambda g: (_unbroadcast(g / bd, a.shape),
                              _unbroadcast(-g * ad / (bd * bd), b.shape)))


def elementwise(a, b, kind):
    """Dispatch on kind in {'add','sub','mul','div'}."""
    try:
        return {"add": add, "sub": sub, "mul": mul, "div": div}[kind](a, b)
    except KeyError:
        raise ContractError(f"unknown elementwise kind {kind!r}") from None


def neg(a):
    a = _coerce(a)
    out = Tensor(-a.data)
    return _record([a], out, lambda g: (-g,))


def pow_scalar(a, p):
    a = _coerce(a)
    p = float(p)
    out = Tensor(a.data ** p)
    ad = a.data
    return _record([a], out, lambda g: (g * p * ad ** (p - 1.0),))


def exp(a):
    a = _coerce(a)
    y = np.exp(a.data)
    out = Tensor(y)
    return _record([a], out, lambda g: (g * y,))


def log(a):
    a = _coerce(a)
    out = Tensor(np.log(a.data))
    ad = a.data
    return _record([a], out, lambda g: (g / ad,))


def sqrt(a):
    a = _coerce(a)
    y = np.sqrt(a.data)
    out = Tensor(y)
    return _record([a], out, lambda g: (g * 0.5 / y,))


def sin(a):
    a = _coerce(a)
    out = Tensor(np.sin(a.data))
    ad = a.data
    return _record([a], out, lambda g: (g * np.cos(ad),))


def cos(a):
    a = _coerce(a)
    out = Tensor(np.cos(a.data))
    ad = a.data
    return _record([a], out, lambda g: (-g * np.sin(ad),))


def tanh(a):
    a = _coerce(a)
    y = np.tanh(a.data)
    out = Tensor(y)
    return _record([a], out, lambda g: (g * (1.0 - y * y),))


def sigmoid(a):
    a = _coerce(a)
    y = np.where(a.data >= 0, 1.0 / (1.0 + np.exp(-np.abs(a.data))),
                 np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))))
    out = Tensor(y)
    return _record([a], out, lambda g: (g * y * (1.0 - y),))


def relu(a):
    a = _coerce(a)
    out = Tensor(np.maximum(a.data, 0.0))
    mask = a.data > 0
    return _record([a], out, lambda g: (g * mask,))


def gelu(a):
    """Exact erf-based GELU."""
    a = _coerce(a)
    ad = a.data
    cdf = 0.5 * (1.0 + erf(ad * _INV_SQRT2))
    out = Tensor(ad * cdf)
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * ad * ad)
    return _record([a], out, lambda g: (g * (cdf + ad * pdf),))


def absolute(a):
    a = _coerce(a)
    out = Tensor(np.abs(a.data))
    sign = np.sign(a.data)
    return _record([a], out, lambda g: (g * sign,))


def where(cond, a, b):
    """Select elementwise by a boolean array (not differentiated through)."""
    a, b = _coerce(a), _coerce(b)
    cond = np.asarray(cond, dtype=bool)
    out = Tensor(np.where(cond, a.data, b.data))
    return _record([a, b], out,
                   lambda g: (_unbroadcast(np.where(cond, g, 0.0), a.shape),
                              _unbroadcast(np.where(cond, 0.0, g), b.shape)))


# ---------------------------------------------------------------------------
# contraction and reductions

def matmul(a, b):
    a, b = _coerce(a), _coerce(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"inner dimensions disagree: {a.shape} @ {b.shape}")
    _check_broadcast_batch(a.shape[:-2], b.shape[:-2])
    out = Tensor(a.data @ b.data)
    ad, bd = a.data, b.data

    def back(g):
        da = g @ np.swapaxes(bd, -1, -2)
        db = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(da, a.shape), _unbroadcast(db, b.shape)

    return _record([a, b], out, back)


def _check_broadcast_batch(sa, sb):
    try:
        np.broadcast_shapes(sa, sb)
    except ValueError as e:
        raise DimensionError(f"batch dimensions {sa} and {sb} do not broadcast") from e


def _norm_axis(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    axis = tuple(a % ndim if -ndim <= a < ndim else _bad_axis(a, ndim) for a in axis)
    return axis


def _bad_axis(a, ndim):
    raise DimensionError(f"axis {a} out of range for {ndim}-d tensor")


def _expand_reduced(g, shape, axis, keepdims):
    if not keepdims:
        if axis is None:
            g = np.reshape(g, (1,) * len(shape))
        else:
            for a in sorted(axis):
                g = np.expand_dims(g, a)
    return np.broadcast_to(g, shape)


def reduce_sum(a, axis=None, keepdims=False):
    a = _coerce(a)
    ax = _norm_axis(axis, a.ndim)
    out = Tensor(a.data.sum(axis=ax, keepdims=keepdims))
    shape = a.shape
    return _record([a], out, lambda g: (_expand_reduced(g, shape, ax, keepdims).copy(),))


def reduce_mean(a, axis=None, keepdims=False):
    a = _coerce(a)
    ax = _norm_axis(axis, a.ndim)
    out = Tensor(a.data.mean(axis=ax, keepdims=keepdims))
    shape = a.shape
    n = a.size if ax is None else int(np.prod([shape[i] for i in ax]))
    return _record([a], out, lambda g: (_expand_reduced(g, shape, ax, keepdims) / n,))


def reduce_max(a, axis=None, keepdims=False):
    """Max reduction; gradient routes to the first argmax along the axis."""
    a = _coerce(a)
    ax = _norm_axis(axis, a.ndim)
    if ax is not None and len(ax) != 1:
        raise DimensionError("max supports a single axis or None")
    out = Tensor(a.data.max(axis=ax[0] if ax else None, keepdims=keepdims))
    ad, shape = a.data, a.shape

    def back(g):
        mask = np.zeros(shape)
        if ax is None:
            flat_idx = np.argmax(ad)
            mask.reshape(-1)[flat_idx] = 1.0
        else:
            idx = np.expand_dims(np.argmax(ad, axis=ax[0]), ax[0])
            np.put_along_axis(mask, idx, 1.0, axis=ax[0])
        return (mask * _expand_reduced(g, shape, ax, keepdims),)

    return _record([a], out, back)


def softmax(a, axis=-1):
    """Numerically stable softmax along `axis` (max subtraction)."""
    a = _coerce(a)
    ax = _norm_axis(axis, a.ndim)
    if ax is None or len(ax) != 1:
        raise DimensionError("softmax needs a single axis")
    ax = ax[0]
    z = a.data - a.data.max(axis=ax, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=ax, keepdims=True)
    out = Tensor(y)
    return _record([a], out,
                   lambda g: (y * (g - (g * y).sum(axis=ax, keepdims=True)),))


def logsumexp(a, axis=-1, keepdims=False):
    a = _coerce(a)
    ax = _norm_axis(axis, a.ndim)
    if ax is None or len(ax) != 1:
        raise DimensionError("logsumexp needs a single axis")
    ax = ax[0]
    m = a.data.max(axis=ax, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=ax, keepdims=True)
    val = np.log(s) + m
    out = Tensor(val if keepdims else np.squeeze(val, axis=ax))
    soft = e / s
    shape = a.shape

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, ax)
        return (soft * g,)

    return _record([a], out, back)


# ---------------------------------------------------------------------------
# data movement

def reshape(a, shape):
    a = _coerce(a)
    out = Tensor(a.data.reshape(shape))
    old = a.shape
    return _record([a], out, lambda g: (g.reshape(old),))


def transpose(a, axes=None):
    a = _coerce(a)
    out = Tensor(a.data.transpose(axes))
    inv = None if axes is None else tuple(np.argsort(axes))
    return _record([a], out, lambda g: (g.transpose(inv),))


def getitem(a, idx):
    """Basic (slice/int) indexing; each output element maps to one input element."""
    a = _coerce(a)
    out = Tensor(a.data[idx])
    shape = a.shape

    def back(g):
        z = np.zeros(shape)
        z[idx] = g
        return (z,)

    return _record([a], out, back)


def take(a, indices, axis=0):
    """Gather along `axis` with a 1-d integer index array (duplicates allowed)."""
    a = _coerce(a)
    indices = np.asarray(indices, dtype=np.intp)
    if indices.ndim != 1:
        raise DimensionError("take expects a 1-d index array; reshape the result instead")
    out = Tensor(np.take(a.data, indices, axis=axis))
    shape = a.shape

    def back(g):
        z = np.zeros(shape)
        # scatter-add so duplicated indices accumulate
        np.add.at(np.moveaxis(z, axis, 0), indices, np.moveaxis(g, axis, 0))
        return (z,)

    return _record([a], out, back)


def concat(tensors, axis=0):
    tensors = [_coerce(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _record(tensors, out, lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(tensors, axis=0):
    tensors = [_coerce(t) for t in tensors]
    out = Tensor(np.stack([t.data for t in tensors], axis=axis))
    return _record(tensors, out,
                   lambda g: tuple(np.moveaxis(g, axis, 0)[i] for i in range(len(tensors))))


def pad(a, pad_width):
    """Zero padding; pad_width as in np.pad."""
    a = _coerce(a)
    out = Tensor(np.pad(a.data, pad_width))
    pw = np.asarray(pad_width)
    if pw.ndim == 1:
        pw = np.tile(pw, (a.ndim, 1))
    sl = tuple(slice(b, b + s) for (b, _), s in zip(pw, a.shape))
    return _record([a], out, lambda g: (g[sl],))


def roll(a, shift, axis):
    a = _coerce(a)
    out = Tensor(np.roll(a.data, shift, axis=axis))
    neg_shift = tuple(-s for s in shift) if isinstance(shift, tuple) else -shift
    return _record([a], out, lambda g: (np.roll(g, neg_shift, axis=axis),))


def primitive(inputs, out_data, backward_fn):
    """Register a custom differentiable op (used by the layer library)."""
    out = Tensor(out_data)
    return _record([_coerce(t) for t in inputs], out, backward_fn)


# ---------------------------------------------------------------------------
# backward pass

def backward(loss, tape=None):
    """Reverse-accumulate gradients of a scalar `loss` over the given tape.

    Returns {node_id: Tensor} for every node touched on the path, leaves
    included.  Each tape entry is visited at most once, in reverse recording
    order (which is reverse topological order by construction).
    """
    if not isinstance(loss, Tensor):
        raise ContractError("loss must be a Tensor")
    if loss.data.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.shape}")
    tape = tape or active_tape()
    grads = {loss.node_id: np.ones_like(loss.data)}
    for input_ids, output_id, backward_fn in reversed(tape.entries):
        g = grads.get(output_id)
        if g is None:
            continue
        contribs = backward_fn(g)
        for nid, contrib in zip(input_ids, contribs):
            if contrib is None:
                continue
            acc = grads.get(nid)
            grads[nid] = contrib if acc is None else acc + contrib
    return {nid: Tensor(g) for nid, g in grads.items()}


def grad_of(grads, t):
    """Gradient for tensor `t` out of a backward() result (zeros if untouched)."""
    g = grads.get(t.node_id)
    return g if g is not None else Tensor(np.zeros(t.shape))


# ---------------------------------------------------------------------------
# finite-difference oracle

def finite_diff_grad(f, x, h=1e-5, coords=None):
    """Central-difference gradient of scalar f at x: (f(x+h*e_i) - f(x-h*e_i)) / 2h.

    `coords` restricts evaluation to a list of flat indices (None = all).
    Returns an array shaped like x (unchecked coordinates are zero).
    """
    x = _coerce(x)
    base = x.data.copy()
    flat = base.reshape(-1)
    out = np.zeros_like(flat)
    idxs = range(flat.size) if coords is None else coords

    def eval_at(values):
        with no_grad():
            r = f(Tensor(values.reshape(base.shape)))
        return float(r.data) if isinstance(r, Tensor) else float(r)

    for i in idxs:
        orig = flat[i]
        flat[i] = orig + h
        fp = eval_at(flat)
        flat[i] = orig - h
        fm = eval_at(flat)
        flat[i] = orig
        out[i] = (fp - fm) / (2.0 * h)
    return out.reshape(base.shape)


__all__ = [
    "Tensor", "Tape", "DimensionError", "ContractError",
    "active_tape", "new_tape", "no_grad",
    "add", "sub", "mul", "div", "elementwise", "neg", "pow_scalar",
    "exp", "log", "sqrt", "sin", "cos", "tanh", "sigmoid", "relu", "gelu",
    "absolute", "where", "matmul",
    "reduce_sum", "reduce_mean", "reduce_max", "softmax", "logsumexp",
    "reshape", "transpose", "getitem", "take", "concat", "stack", "pad", "roll",
    "primitive", "backward", "grad_of", "finite_diff_grad",
]
