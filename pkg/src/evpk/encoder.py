"""Learnable pillar encoder and scatter to a pseudo-image.

Per retained event slot: 1x1 conv -> batchnorm -> relu, then a max over the
slots of each pillar (empty slots excluded), then a scatter of pillar rows
to their pixels. Positive and negative events use separate encoders and
their pseudo-images are concatenated channel-wise (positive first).
"""

from __future__ import annotations

import numpy as np

from .nn import tensor as T
from .nn.layers import BatchNorm, Module, Pointwise
from .nn.tensor import Tensor
from .pillars import N_FEATURES, PillarConfig, augment, build_pillars


class PillarEncoder(Module):
    def __init__(self, out_channels=16, rng=None, dtype=np.float64):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.out_channels = out_channels
        self.conv = Pointwise(N_FEATURES, out_channels, rng, dtype)
        self.bn = BatchNorm(out_channels, dtype)

    @property
    def dtype(self):
        return self.conv.weight.data.dtype

    def encode_slots(self, x, training):
        return T.relu(self.bn(self.conv(x), training))


def encode_pillars(pset, encoder, training=True, full=True):
    """Pillar features T3 of shape K x C' (``full``) or n_pillars x C'."""
    c = encoder.out_channels
    n_p = pset.n_pillars
    rows_out = pset.capacity if full else n_p
    if n_p == 0:
        return Tensor(np.zeros((rows_out, c), dtype=encoder.dtype))
    rows, slots = pset.slot_index()
    x = Tensor(pset.features[rows, slots].astype(encoder.dtype))
    y = encoder.encode_slots(x, training)
    buf = T.place(y, (rows, slots), (n_p, pset.features.shape[1], c), fill=-np.inf)
    t3, _ = T.max_reduce(buf, axis=1)
    if full and rows_out > n_p:
        t3 = T.place(t3, slice(0, n_p), (rows_out, c))
    return t3


class ScatterError(RuntimeError):
    pass


def scatter(t3, coords, n_pillars, geometry, slices=1, cell=1):
    """Write pillar rows to an H x W x C' image; rows sharing a pixel combine by max."""
    c = t3.shape[1]
    h, w = geometry.height, geometry.width
    if n_pillars == 0:
        return Tensor(np.zeros((h, w, c), dtype=t3.data.dtype))
    if cell != 1:
        raise NotImplementedError("scatter is defined for 1x1 cells only")
    xy = coords[:n_pillars]
    cells = xy[:, 1] * w + xy[:, 0]
    if slices == 1 and len(np.unique(cells)) != len(cells):
        raise ScatterError("duplicate pillar coordinates with a single temporal slice")
    rows = t3 if t3.shape[0] == n_pillars else T.slice_(t3, slice(0, n_pillars))
    flat, _ = T.scatter_max(rows, cells, h * w)
    return T.reshape(flat, (h, w, c))


class EventPillars(Module):
    def __init__(self, config=None, out_channels=16, rng=None, dtype=np.float64):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.config = config or PillarConfig()
        self.pos = PillarEncoder(out_channels, rng, dtype)
        self.neg = PillarEncoder(out_channels, rng, dtype)

    @property
    def out_channels(self):
        return 2 * self.pos.out_channels

    def __call__(self, window, training=True, config=None, psets=None):
        return eventpillars_forward(window, config or self.config, self.pos, self.neg, training, psets)


def eventpillars_forward(window, config, enc_pos, enc_neg, training=True, psets=None):
    """Pseudo-image H x W x 2C' (positive channels, then negative).

    ``psets`` may carry precomputed augmented ``(positive, negative)`` pillar
    sets for ``window`` built with ``config``.
    """
    halves = []
    for i, (polarity, enc) in enumerate(((1, enc_pos), (-1, enc_neg))):
        if psets is not None:
            pset = psets[i]
        else:
            pset = augment(build_pillars(window, config, polarity))
        t3 = encode_pillars(pset, enc, training, full=False)
        halves.append(scatter(t3, pset.coords, pset.n_pillars, window.geometry, config.slices, config.cell))
    return T.concat(halves, axis=-1)
