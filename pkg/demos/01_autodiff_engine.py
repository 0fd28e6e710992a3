"""Tour of the tensor engine: tapes, backward passes, finite-difference audit.

Everything downstream (attention, mesh skinning, the training loop) is built
from the ops shown here, so this is the right place to start reading.
"""

import numpy as np

from pycat4.tensor import (Tensor, backward, finite_diff_grad, grad_of,
                           new_tape, no_grad)

rng = np.random.default_rng(0)

# Tensors wrap float64 numpy arrays.  Mark leaves you want gradients for.
x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
w = Tensor(rng.normal(size=(4, 2)), requires_grad=True)

# Ops record themselves on the active tape; a fresh tape scopes one backward
# pass (the training loop opens one per step for the same reason).
with new_tape():
    y = Tensor.__matmul__(x, w)          # same as x @ w
    loss = ((y * y).mean() + x.sum() * 0.1)
    grads = backward(loss)
    gx = grad_of(grads, x).data
    gw = grad_of(grads, w).data

print("loss                 :", f"{loss.item():.6f}")
print("dloss/dx shape       :", gx.shape)
print("dloss/dw shape       :", gw.shape)

# The same loss as a plain function of x lets central differences check the
# reverse-mode result.  finite_diff_grad runs it with recording disabled.
def f(xt):
    return (xt @ w) * (xt @ w)


def loss_of_x(xt):
    return (f(xt)).mean() + xt.sum() * 0.1


fd = finite_diff_grad(loss_of_x, Tensor(x.data))
rel = np.abs(gx - fd).max() / max(np.abs(gx).max(), np.abs(fd).max())
print("worst relative error :", f"{rel:.2e}  (finite differences agree)")

# no_grad() turns recording off entirely; inference paths use it so the tape
# stays empty and memory stays flat.
with new_tape() as tape:
    with no_grad():
        _ = x @ w
    print("ops recorded under no_grad:", len(tape))

# Untouched leaves get a zero gradient rather than an error, which keeps
# optimizer code free of special cases.
z = Tensor(np.ones(3), requires_grad=True)
with new_tape():
    grads = backward((x * x).sum())
print("gradient of unused leaf:", grad_of(grads, z).data)
