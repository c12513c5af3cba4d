"""Short- and long-range memory blocks.

SRM: cross-interval attention. Queries come from the current feature map,
keys and values from the previous interval's map, and the attended values
are added back to the current map.

LRM: a ConvLSTM whose carried (h, c) are scaled by one scalar weight per
step, ``w = (cos(emb(F_prev), emb(x)) + 1) / 2``, before the gates run.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import tensor as T
from .nn.layers import Conv2d, Module, Pointwise
from .nn.tensor import ShapeError, Tensor


class SRM(Module):
    def __init__(self, channels, reduction=8, rng=None, dtype=np.float64):
        super().__init__()
        if channels % reduction:
            raise ValueError(f"channels {channels} not divisible by reduction {reduction}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channels, self.reduction = channels, reduction
        self.theta = Pointwise(channels, channels // reduction, rng, dtype)
        self.phi = Pointwise(channels, channels // reduction, rng, dtype)
        self.psi = Pointwise(channels, channels, rng, dtype)

    def __call__(self, feat, prev):
        return srm_forward(feat, prev, self)


def attention_map(feat, prev, srm):
    h, w, c = feat.shape
    ck = c // srm.reduction
    q = T.reshape(srm.theta(feat), (h * w, ck))
    k = T.reshape(srm.phi(prev), (h * w, ck))
    return T.softmax(T.matmul(q, T.transpose(k)) * (1.0 / np.sqrt(ck)), axis=1)


def srm_forward(feat, prev, srm):
    if feat.shape != prev.shape:
        raise ShapeError(f"SRM interval shape mismatch: {feat.shape} vs {prev.shape}")
    h, w, c = feat.shape
    a = attention_map(feat, prev, srm)
    v = T.reshape(srm.psi(prev), (h * w, c))
    return feat + T.reshape(T.matmul(a, v), (h, w, c))


@dataclass
class LRMState:
    h: Tensor
    c: Tensor

    @classmethod
    def zeros(cls, shape, dtype=np.float64):
        return cls(Tensor(np.zeros(shape, dtype=dtype)), Tensor(np.zeros(shape, dtype=dtype)))

    def detach(self):
        return LRMState(self.h.detach(), self.c.detach())


class AdaptiveConvLSTM(Module):
    """ConvLSTM cell with hidden width equal to input width.

    ``adaptive=False`` pins the memory weight to 1 (plain ConvLSTM).
    """

    def __init__(self, channels, rng=None, dtype=np.float64, k=3, adaptive=True):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channels, self.adaptive = channels, adaptive
        self.embed = Conv2d(channels, channels, rng, k=k, dtype=dtype)
        self.gates = Conv2d(2 * channels, 4 * channels, rng, k=k, dtype=dtype)

    def memory_weight(self, x, prev_feat):
        e_prev = self.embed(prev_feat)
        e_cur = self.embed(x)
        return (T.cosine_similarity(e_prev, e_cur) + 1.0) * 0.5

    def __call__(self, x, state, prev_feat):
        return adaptive_convlstm_step(x, state, prev_feat, self)


def convlstm_gates(x, h, c, gates):
    z = gates(T.concat([x, h], axis=-1))
    zi, zf, zo, zg = T.split(z, 4, axis=-1)
    i, f, o, g = T.sigmoid(zi), T.sigmoid(zf), T.sigmoid(zo), T.tanh(zg)
    c_new = f * c + i * g
    h_new = o * T.tanh(c_new)
    return h_new, c_new, (i, f, o, g)


def adaptive_convlstm_step(x, state, prev_feat, cell, weight=None):
    """One step; returns ``(h_k, new_state)``. ``weight`` overrides the adaptive weight."""
    if state.h.shape != x.shape or state.c.shape != x.shape:
        raise ShapeError(f"LRM state {state.h.shape}/{state.c.shape} does not match input {x.shape}")
    if weight is None:
        weight = cell.memory_weight(x, prev_feat) if cell.adaptive else 1.0
    h_prev = state.h * weight
    c_prev = state.c * weight
    h_new, c_new, _ = convlstm_gates(x, h_prev, c_prev, cell.gates)
    return h_new, LRMState(h_new, c_new)


def lrm_forward(features, states, prev_features, cells):
    if not (len(features) == len(states) == len(prev_features) == len(cells)):
        raise ValueError(f"LRM scale count mismatch: {len(features)} features, {len(states)} states, "
                         f"{len(prev_features)} previous maps, {len(cells)} cells")
    outs, new_states = [], []
    for x, s, p, cell in zip(features, states, prev_features, cells):
        h, ns = adaptive_convlstm_step(x, s, p, cell)
        outs.append(h)
        new_states.append(ns)
    return outs, new_states


def save_state(path, states):
    """Write per-scale LRM states as checkpoint entries ``lrm.scale<i>.h`` / ``.c``."""
    from .nn.checkpoint import save_checkpoint

    arrays = {}
    for i, s in enumerate(states):
        arrays[f"lrm.scale{i}.h"] = s.h.data
        arrays[f"lrm.scale{i}.c"] = s.c.data
    save_checkpoint(path, arrays)


def load_state(path, dtype=np.float64):
    from .nn.checkpoint import CheckpointError, load_checkpoint

    arrays = load_checkpoint(path)
    states, i = [], 0
    while f"lrm.scale{i}.h" in arrays:
        try:
            h, c = arrays[f"lrm.scale{i}.h"], arrays[f"lrm.scale{i}.c"]
        except KeyError:
            raise CheckpointError(f"{path}: missing lrm.scale{i}.c") from None
        states.append(LRMState(Tensor(h.astype(dtype)), Tensor(c.astype(dtype))))
        i += 1
    return states
