"""Central finite-difference gradient verification.

The numeric side only ever calls the forward pass, so it stays independent
of the tape it is checking. Error metric: max over entries of
|analytic - numeric| / max(1e-6, ||analytic||_inf, ||numeric||_inf).
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, no_grad


def numeric_gradient(fn, arrays: list[np.ndarray], eps: float = 1e-6) -> list[np.ndarray]:
    """Central differences of a scalar-valued fn(*arrays) w.r.t. every entry."""
    arrays = [np.ascontiguousarray(a, dtype=np.float64) for a in arrays]
    grads = []
    for base in arrays:
        flat = base.reshape(-1)
        g = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            with no_grad():
                hi = fn(*arrays)
            flat[i] = orig - eps
            with no_grad():
                lo = fn(*arrays)
            flat[i] = orig
            g[i] = (hi - lo) / (2.0 * eps)
        grads.append(g.reshape(base.shape))
    return grads


def analytic_gradient(fn, arrays: list[np.ndarray]) -> tuple[float, list[np.ndarray]]:
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = fn(*tensors)
    out.backward()
    return out.item(), [
        t.grad if t.grad is not None else np.zeros_like(t.values) for t in tensors
    ]


def relative_gradient_error(build_fn, arrays: list[np.ndarray], eps: float = 1e-6) -> float:
    """Worst relative disagreement between tape and finite differences.

    ``build_fn`` maps inputs (Tensors or ndarrays) to a scalar; it is called
    with Tensors for the analytic pass and ndarrays for the numeric one.
    """

    def numeric_fn(*arrs):
        out = build_fn(*[Tensor(a) for a in arrs])
        return out.item()

    _, analytic = analytic_gradient(build_fn, arrays)
    numeric = numeric_gradient(numeric_fn, [a.copy() for a in arrays], eps=eps)
    worst = 0.0
    for ga, gn in zip(analytic, numeric):
        scale = max(1e-6, float(np.abs(ga).max(initial=0.0)), float(np.abs(gn).max(initial=0.0)))
        worst = max(worst, float(np.abs(ga - gn).max(initial=0.0)) / scale)
    return worst
