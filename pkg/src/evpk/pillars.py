"""Pillar construction: grid/slice assignment, capped sampling, mean-offset augmentation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

N_FEATURES = 6


@dataclass(frozen=True)
class PillarConfig:
    max_events: int = 5  # M
    max_pillars: int = 100_000  # K
    slices: int = 1  # D
    cell: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.max_events < 1 or self.max_pillars < 1 or self.slices < 1 or self.cell < 1:
            raise ValueError(f"invalid pillar config {self}")


@dataclass(eq=False)
class PillarSet:
    """K x M x 6 features, K x 3 ``(x_cell, y_cell, slice)`` coords, K counts.

    Rows ``[0, n_pillars)`` are populated in ``(slice, y, x)`` order; the rest
    are zero. ``n_events`` is the polarity's event count before any dropping.
    """

    features: np.ndarray
    coords: np.ndarray
    counts: np.ndarray
    polarity: int
    n_pillars: int
    n_events: int
    n_nonempty: int
    dropped_by_cap: int = 0
    dropped_by_limit: int = 0
    augmented: bool = False

    @property
    def capacity(self):
        return self.features.shape[0]

    def slot_index(self):
        """(row, slot) arrays addressing every retained event, row-major."""
        c = self.counts[:self.n_pillars]
        rows = np.repeat(np.arange(self.n_pillars), c)
        slots = np.arange(len(rows)) - np.repeat(np.cumsum(c) - c, c)
        return rows, slots

    def trim(self):
        """Copy holding only the populated rows (capacity == n_pillars)."""
        n = self.n_pillars
        return PillarSet(self.features[:n].copy(), self.coords[:n].copy(), self.counts[:n].copy(),
                         self.polarity, n, self.n_events, self.n_nonempty, self.dropped_by_cap,
                         self.dropped_by_limit, self.augmented)

    def dump(self):
        lines = []
        for k in range(self.n_pillars):
            x, y, d = self.coords[k]
            lines.append(f"{k},{x},{y},{d},{self.counts[k]}")
        return "\n".join(lines)


@dataclass(frozen=True)
class PillarStats:
    non_empty: int
    retained: int
    dropped: int
    dropped_by_cap: int
    dropped_by_limit: int


def _rng(config, polarity):
    return np.random.default_rng([config.seed, 0 if polarity > 0 else 1])


def build_pillars(window, config, polarity):
    K, M, D = config.max_pillars, config.max_events, config.slices
    g = window.geometry
    wc = -(-g.width // config.cell)
    hc = -(-g.height // config.cell)
    ev = window.events
    sel = ev.p == polarity
    x, y, t = ev.x[sel], ev.y[sel], ev.t[sel]
    n = len(t)
    features = np.zeros((K, M, N_FEATURES))
    coords = np.zeros((K, 3), dtype=np.int64)
    counts = np.zeros(K, dtype=np.int64)
    if n == 0:
        return PillarSet(features, coords, counts, polarity, 0, 0, 0)

    rel = t - window.t_start
    d = np.minimum(rel * D // window.duration, D - 1)
    xc, yc = x // config.cell, y // config.cell
    key = (d * hc + yc) * wc + xc
    order = np.argsort(key, kind="stable")  # chronological within each pillar
    sk = key[order]
    starts = np.flatnonzero(np.r_[True, sk[1:] != sk[:-1]])
    sizes = np.diff(np.r_[starts, n])
    n_nonempty = len(starts)

    seg = np.repeat(np.arange(n_nonempty), sizes)
    keep_seg = np.ones(n_nonempty, dtype=bool)
    if n_nonempty > K:
        top = np.lexsort((sk[starts], -sizes))[:K]
        keep_seg[:] = False
        keep_seg[top] = True

    keep_ev = keep_seg[seg]
    if sizes.max() > M:
        # uniform random subset per pillar: the M smallest of i.i.d. uniform tags
        tag = _rng(config, polarity).random(n)[order]
        by_tag = np.lexsort((tag, seg))
        rank = np.empty(n, dtype=np.int64)
        rank[by_tag] = np.arange(n) - np.repeat(starts, sizes)
        keep_ev &= rank < M

    kept = order[keep_ev]
    kseg = seg[keep_ev]
    # renumber retained pillars 0..n_pillars-1 in key order
    seg_ids, kc = np.unique(kseg, return_counts=True)
    row = np.searchsorted(seg_ids, kseg)
    slot = np.arange(len(kept)) - np.repeat(np.cumsum(kc) - kc, kc)
    n_p = len(seg_ids)

    features[row, slot, 0] = x[kept]
    features[row, slot, 1] = y[kept]
    features[row, slot, 2] = rel[kept] / float(window.duration)
    ukey = sk[starts][seg_ids]
    coords[:n_p, 0] = ukey % wc
    coords[:n_p, 1] = (ukey // wc) % hc
    coords[:n_p, 2] = ukey // (wc * hc)
    counts[:n_p] = kc
    by_limit = int(sizes[~keep_seg].sum())
    by_cap = int(np.maximum(sizes[keep_seg] - M, 0).sum())
    return PillarSet(features, coords, counts, polarity, n_p, n, n_nonempty, by_cap, by_limit)


def augment(pset):
    """Append offsets from each pillar's mean ``(x, y, t)`` over its retained events."""
    f = np.zeros(pset.features.shape)
    f[:pset.n_pillars] = pset.features[:pset.n_pillars]
    rows, slots = pset.slot_index()
    if len(rows):
        c = pset.counts[:pset.n_pillars].astype(np.float64)
        base = f[rows, slots, :3]
        sums = np.zeros((pset.n_pillars, 3))
        np.add.at(sums, rows, base)
        means = sums / c[:, None]
        f[rows, slots, 3:] = base - means[rows]
    return PillarSet(f, pset.coords, pset.counts, pset.polarity, pset.n_pillars, pset.n_events,
                     pset.n_nonempty, pset.dropped_by_cap, pset.dropped_by_limit, augmented=True)


def pillar_stats(pset):
    retained = int(pset.counts.sum())
    return PillarStats(pset.n_pillars, retained, pset.n_events - retained,
                       pset.dropped_by_cap, pset.dropped_by_limit)
