"""Central-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, backward


@dataclass
class GradcheckReport:
    max_rel_err: float
    worst_input: int
    worst_index: tuple
    n_checked: int

    def ok(self, tol=1e-4):
        return self.max_rel_err < tol


def gradcheck(fn, inputs, delta=1e-5, max_coords=None, rng=None):
    """Compare autodiff gradients of scalar ``fn(*inputs)`` with central differences.

    ``inputs`` are Tensors with ``requires_grad``. ``max_coords`` caps the
    number of probed coordinates per input (chosen with ``rng``) for large
    parameter blocks.
    """
    for x in inputs:
        x.grad = None
    out = fn(*inputs)
    backward(out)
    analytic = [np.zeros_like(x.data) if x.grad is None else x.grad.copy() for x in inputs]

    worst = (0.0, -1, ())
    n = 0
    for k, x in enumerate(inputs):
        coords = list(np.ndindex(*x.shape)) if x.ndim else [()]
        if max_coords is not None and len(coords) > max_coords:
            rng = rng or np.random.default_rng(0)
            pick = rng.choice(len(coords), size=max_coords, replace=False)
            coords = [coords[i] for i in sorted(pick)]
        for idx in coords:
            orig = x.data[idx].copy()
            x.data[idx] = orig + delta
            f_plus = float(fn(*inputs).data)
            x.data[idx] = orig - delta
            f_minus = float(fn(*inputs).data)
            x.data[idx] = orig
            num = (f_plus - f_minus) / (2.0 * delta)
            a = float(analytic[k][idx])
            rel = abs(a - num) / max(abs(a), abs(num), 1e-8)
            n += 1
            if rel > worst[0]:
                worst = (rel, k, idx)
    for x in inputs:
        x.grad = None
    return GradcheckReport(worst[0], worst[1], worst[2], n)


def check_tensors(*arrays):
    return [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
