"""Hand-crafted dense event representations.

Each builder maps one ``EventWindow`` to an H x W x C ``GridTensor`` in raw
units (no per-image normalization). Timestamps are normalized within the
window as ``(t - t_start) / duration``. Where newer events overwrite older
ones, ties on equal timestamps go to the event later in stream order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

KINDS = ("event_frame", "event_count", "timestamp_image", "time_surface", "ev_segnet_stats", "voxel_grid")
GTN_MAGIC = b"GTN1"


@dataclass(eq=False)
class GridTensor:
    data: np.ndarray
    channels: list = field(default_factory=list)

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ValueError(f"grid tensor must be H x W x C, got shape {self.data.shape}")
        if not self.channels:
            self.channels = [f"c{i}" for i in range(self.data.shape[2])]
        if len(self.channels) != self.data.shape[2]:
            raise ValueError("channel labels do not match channel count")

    @property
    def shape(self):
        return self.data.shape


@dataclass(frozen=True)
class ReprConfig:
    kind: str = "voxel_grid"
    bins: int = 5
    tau_decay: float | None = None  # microseconds; None -> window length

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown representation {self.kind!r}; valid kinds: {', '.join(KINDS)}")
        if self.bins < 1:
            raise ValueError(f"bins must be >= 1, got {self.bins}")
        if self.tau_decay is not None and self.tau_decay <= 0:
            raise ValueError(f"tau_decay must be positive, got {self.tau_decay}")

    def channels(self):
        return {"event_frame": 1, "event_count": 2, "timestamp_image": 2, "time_surface": 2,
                "ev_segnet_stats": 6, "voxel_grid": self.bins}[self.kind]


def _pixels(window):
    g = window.geometry
    ev = window.events
    return ev.y * g.width + ev.x, g.height * g.width


def _grid(flat_channels, window):
    g = window.geometry
    return np.stack(flat_channels, axis=-1).reshape(g.height, g.width, len(flat_channels))


def _norm_time(window):
    return (window.events.t - window.t_start) / float(window.duration)


def event_frame(window):
    idx, n = _pixels(window)
    frame = np.bincount(idx, weights=window.events.p.astype(np.float64), minlength=n)
    return GridTensor(_grid([frame], window), ["polarity_sum"])


def event_count(window):
    idx, n = _pixels(window)
    p = window.events.p
    pos = np.bincount(idx[p > 0], minlength=n).astype(np.float64)
    neg = np.bincount(idx[p < 0], minlength=n).astype(np.float64)
    return GridTensor(_grid([pos, neg], window), ["count_pos", "count_neg"])


def _latest(idx, values, n):
    """Per-pixel value of the last event in stream order."""
    out = np.zeros(n)
    # fancy assignment keeps the last write for repeated indices
    out[idx] = values
    return out


def timestamp_image(window):
    idx, n = _pixels(window)
    p = window.events.p
    th = _norm_time(window)
    chans = [_latest(idx[p == s], th[p == s], n) for s in (1, -1)]
    return GridTensor(_grid(chans, window), ["last_t_pos", "last_t_neg"])


def time_surface(window, tau_decay=None):
    tau = float(window.duration if tau_decay is None else tau_decay)
    if tau <= 0:
        raise ValueError(f"tau_decay must be positive, got {tau}")
    idx, n = _pixels(window)
    ev = window.events
    decay = np.exp(-(window.t_end - ev.t) / tau)
    chans = [_latest(idx[ev.p == s], decay[ev.p == s], n) for s in (1, -1)]
    return GridTensor(_grid(chans, window), ["surface_pos", "surface_neg"])


def ev_segnet_stats(window):
    idx, n = _pixels(window)
    p = window.events.p
    th = _norm_time(window)
    chans, labels = [], []
    for s, tag in ((1, "pos"), (-1, "neg")):
        m = p == s
        cnt = np.bincount(idx[m], minlength=n).astype(np.float64)
        tot = np.bincount(idx[m], weights=th[m], minlength=n)
        mean = np.divide(tot, cnt, out=np.zeros(n), where=cnt > 0)
        dev = th[m] - mean[idx[m]]
        var = np.divide(np.bincount(idx[m], weights=dev * dev, minlength=n), cnt,
                        out=np.zeros(n), where=cnt > 0)
        chans += [cnt, mean, np.sqrt(var)]
        labels += [f"count_{tag}", f"mean_t_{tag}", f"std_t_{tag}"]
    return GridTensor(_grid(chans, window), labels)


def voxel_grid(window, bins=5):
    if bins < 1:
        raise ValueError(f"bins must be >= 1, got {bins}")
    idx, n = _pixels(window)
    p = window.events.p.astype(np.float64)
    g = window.geometry
    if bins == 1:
        vol = np.bincount(idx, weights=p, minlength=n)[:, None]
    else:
        tb = _norm_time(window) * (bins - 1)
        lo = np.floor(tb).astype(np.int64)
        w_hi = tb - lo
        hi = np.minimum(lo + 1, bins - 1)
        vol = np.bincount(idx * bins + lo, weights=p * (1.0 - w_hi), minlength=n * bins)
        vol += np.bincount(idx * bins + hi, weights=p * w_hi, minlength=n * bins)
        vol = vol.reshape(n, bins)
    return GridTensor(vol.reshape(g.height, g.width, bins), [f"bin{i}" for i in range(bins)])


def build(window, config):
    k = config.kind
    if k == "voxel_grid":
        return voxel_grid(window, config.bins)
    if k == "time_surface":
        return time_surface(window, config.tau_decay)
    return {"event_frame": event_frame, "event_count": event_count,
            "timestamp_image": timestamp_image, "ev_segnet_stats": ev_segnet_stats}[k](window)


# -- GTN1 serialization ------------------------------------------------------

def write_grid(grid, path):
    data = np.asarray(grid.data if isinstance(grid, GridTensor) else grid)
    h, w, c = data.shape
    with open(path, "wb") as fh:
        fh.write(GTN_MAGIC)
        fh.write(struct.pack("<HHH", h, w, c))
        fh.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def read_grid(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != GTN_MAGIC:
        raise ValueError(f"{path}: bad magic {blob[:4]!r}")
    h, w, c = struct.unpack_from("<HHH", blob, 4)
    if len(blob) != 10 + 4 * h * w * c:
        raise ValueError(f"{path}: size mismatch for {h}x{w}x{c} grid")
    data = np.frombuffer(blob, dtype="<f4", offset=10).reshape(h, w, c).copy()
    return GridTensor(data)
