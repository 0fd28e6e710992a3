"""Adam optimizer, functional core plus a stateful wrapper."""

import numpy as np

from .tensor import DimensionError, Tensor, grad_of


def adam_step(params, grads, state, lr=5e-5, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update over aligned lists of arrays.

    `state` is {'m': [...], 'v': [...], 't': int} or {} on the first call.
    Returns (new_params, new_state); inputs are not mutated.
    """
    params = [np.asarray(p, dtype=np.float64) for p in params]
    grads = [np.asarray(g, dtype=np.float64) for g in grads]
    if len(params) != len(grads):
        raise DimensionError(f"{len(params)} params vs {len(grads)} grads")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise DimensionError(f"param shape {p.shape} vs grad shape {g.shape}")
    if not state:
        state = {"m": [np.zeros_like(p) for p in params],
                 "v": [np.zeros_like(p) for p in params], "t": 0}
    t = state["t"] + 1
    new_m, new_v, new_p = [], [], []
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        new_p.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, {"m": new_m, "v": new_v, "t": t}


class Adam:
    """Holds first/second moment state for a fixed ordered set of parameter tensors."""

    def __init__(self, params, lr=5e-5, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = {}

    def step(self, grads):
        """Apply one update in place; `grads` is a backward() result dict."""
        glist = [grad_of(grads, p).data for p in self.params]
        new_p, self.state = adam_step([p.data for p in self.params], glist, self.state,
                                      self.lr, self.beta1, self.beta2, self.eps)
        for p, npv in zip(self.params, new_p):
            p.data = npv

    def state_arrays(self):
        """Flat view of optimizer state for checkpointing."""
        if not self.state:
            return {"t": np.zeros((), dtype=np.float64)}
        out = {"t": np.asarray(float(self.state["t"]))}
        for i, (m, v) in enumerate(zip(self.state["m"], self.state["v"])):
            out[f"m{i}"] = m
            out[f"v{i}"] = v
        return out

    def load_state_arrays(self, arrays):
        t = int(arrays["t"])
        if t == 0:
            self.state = {}
            return
        n = len(self.params)
        self.state = {"t": t,
                      "m": [arrays[f"m{i}"] for i in range(n)],
                      "v": [arrays[f"v{i}"] for i in range(n)]}


__all__ = ["adam_step", "Adam"]
