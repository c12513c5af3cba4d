"""Deterministic moving-box event generator with ground-truth boxes.

Boxes are rendered as a piecewise-constant intensity image (background 0.3,
bright boxes 0.7, dark boxes 0.1) at ``micro_steps`` frames per window. A
pixel whose log intensity moves by ``n * C`` between consecutive frames
emits ``n`` events of the sign of the change, timestamped where the ramp
crosses each threshold multiple.
"""

from __future__ import annotations

import json
import math

import numpy as np

from .model import EventStream, EventWindow, GroundTruthBox, MovingBox, SceneSpec, SensorGeometry
from .windows import slice_windows

BACKGROUND = 0.3
LEVELS = {1: 0.7, -1: 0.1}


def render(spec, t_us):
    g = spec.geometry
    img = np.full((g.height, g.width), BACKGROUND)
    for box in spec.boxes:
        x0, y0 = box.position(t_us)
        x0, y0 = int(round(x0)), int(round(y0))
        xa, xb = max(x0, 0), min(x0 + box.width, g.width)
        ya, yb = max(y0, 0), min(y0 + box.height, g.height)
        if xa < xb and ya < yb:
            img[ya:yb, xa:xb] = LEVELS[box.contrast]
    return img


def gt_box(box, t_us, geometry):
    """Pixel-edge box at time ``t_us`` clipped to the sensor, or None if fully outside."""
    x0, y0 = box.position(t_us)
    x0, y0 = int(round(x0)), int(round(y0))
    xa, xb = max(x0, 0), min(x0 + box.width, geometry.width)
    ya, yb = max(y0, 0), min(y0 + box.height, geometry.height)
    if xa >= xb or ya >= yb:
        return None
    return xa, ya, xb, yb


def generate_stream(spec, micro_step_us):
    g = spec.geometry
    c = spec.threshold
    rng = np.random.default_rng(spec.seed)
    xs, ys, ts, ps = [], [], [], []
    prev = np.log(np.full((g.height, g.width), BACKGROUND))
    prev_t = 0
    n_frames = int(math.ceil(spec.duration / micro_step_us))
    for j in range(n_frames):
        t_j = j * micro_step_us
        cur = np.log(render(spec, t_j))
        diff = cur - prev
        # tiny slack so exact multiples of C are not lost to rounding
        counts = np.floor(np.abs(diff) / c + 1e-9).astype(np.int64)
        yy, xx = np.nonzero(counts)
        if len(yy):
            n = counts[yy, xx]
            mag = np.abs(diff[yy, xx])
            sign = np.sign(diff[yy, xx]).astype(np.int64)
            rep = np.repeat(np.arange(len(yy)), n)
            k = np.arange(len(rep)) - np.repeat(np.cumsum(n) - n, n) + 1
            frac = np.minimum(k * c / mag[rep], 1.0)
            te = prev_t + np.round(frac * (t_j - prev_t)).astype(np.int64)
            order = np.argsort(te, kind="stable")
            xs.append(xx[rep][order])
            ys.append(yy[rep][order])
            ts.append(te[order])
            ps.append(sign[rep][order])
        prev, prev_t = cur, t_j

    if spec.noise_rate > 0:
        lam = spec.noise_rate * g.width * g.height * spec.duration * 1e-6
        n = rng.poisson(lam)
        xs.append(rng.integers(0, g.width, n))
        ys.append(rng.integers(0, g.height, n))
        ts.append(rng.integers(0, spec.duration, n))
        ps.append(rng.choice(np.array([-1, 1]), n))

    if not ts:
        return EventStream.empty(g)
    x, y, t, p = (np.concatenate(a) for a in (xs, ys, ts, ps))
    order = np.argsort(t, kind="stable")
    return EventStream(x[order], y[order], t[order], p[order], g)


def generate_synthetic(spec, delta_us, micro_steps=10):
    """Windows of ``delta_us`` plus per-window ground truth at each window end."""
    if micro_steps < 10:
        raise ValueError("need at least 10 micro-frames per window")
    micro = max(1, int(delta_us) // int(micro_steps))
    stream = generate_stream(spec, micro)
    n_windows = int(math.ceil(spec.duration / delta_us))
    windows = slice_windows(stream, delta_us, t0=0, n_windows=n_windows)
    labels = []
    for k, w in enumerate(windows):
        t_end = min(w.t_end, spec.duration)
        boxes = []
        for box in spec.boxes:
            r = gt_box(box, t_end, spec.geometry)
            if r is not None:
                boxes.append(GroundTruthBox(k, box.class_id, *r))
        labels.append(boxes)
    return windows, labels


# -- scene files (JSON) ------------------------------------------------------

def scene_to_dict(spec):
    return {
        "width": spec.geometry.width,
        "height": spec.geometry.height,
        "duration_us": spec.duration,
        "threshold": spec.threshold,
        "noise_rate": spec.noise_rate,
        "seed": spec.seed,
        "boxes": [
            {"x": b.x, "y": b.y, "width": b.width, "height": b.height, "vx": b.vx, "vy": b.vy,
             "contrast": b.contrast, "class_id": b.class_id, "stops": [list(s) for s in b.stops]}
            for b in spec.boxes
        ],
    }


def scene_from_dict(d):
    boxes = tuple(
        MovingBox(float(b["x"]), float(b["y"]), int(b["width"]), int(b["height"]),
                  float(b.get("vx", 0.0)), float(b.get("vy", 0.0)), int(b.get("contrast", 1)),
                  int(b.get("class_id", 0)), tuple(tuple(int(v) for v in s) for s in b.get("stops", ())))
        for b in d["boxes"]
    )
    return SceneSpec(SensorGeometry(int(d["width"]), int(d["height"])), boxes, int(d["duration_us"]),
                     float(d.get("threshold", 0.2)), float(d.get("noise_rate", 0.0)), int(d.get("seed", 0)))


def load_scene(path):
    with open(path, "r", encoding="utf-8") as fh:
        return scene_from_dict(json.load(fh))


def save_scene(spec, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scene_to_dict(spec), fh, indent=2)


def random_window(geometry, n, duration_us=50_000, seed=0, t_start=0):
    """Uniformly random events over one window (benchmarks and property tests)."""
    rng = np.random.default_rng(seed)
    t = np.sort(rng.integers(t_start, t_start + duration_us, n))
    stream = EventStream(rng.integers(0, geometry.width, n), rng.integers(0, geometry.height, n), t,
                         rng.choice(np.array([-1, 1]), n), geometry)
    return EventWindow(stream, t_start, t_start + duration_us)
