"""Adam with bias correction and a cosine-annealed learning rate."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class OptimizerError(FloatingPointError):
    pass


@dataclass
class AdamState:
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, state, grads=None, lr=None):
    """One Adam update, in place on ``params[i].data``.

    ``grads`` defaults to each parameter's ``.grad``; a missing gradient is
    treated as zero.
    """
    if grads is None:
        grads = [p.grad for p in params]
    lr = state.lr if lr is None else lr
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is not None and g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {_label(p, i)} {p.shape}")
        if g is not None and not np.all(np.isfinite(g)):
            raise OptimizerError(f"non-finite gradient for parameter {_label(p, i)}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m.get(i)
        if m is None:
            m = state.m[i] = np.zeros_like(p.data)
            state.v[i] = np.zeros_like(p.data)
        v = state.v[i]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


def _label(p, i):
    return repr(p.name) if getattr(p, "name", None) else f"#{i}"


def cosine_lr(step, total_steps, lr_max, lr_min=0.0):
    if total_steps <= 0 or step >= total_steps:
        return lr_min
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * step / total_steps))
