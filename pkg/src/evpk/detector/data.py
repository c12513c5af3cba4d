"""Synthetic detection sequences: moving boxes that pause, two size classes.

A paused box emits no events, so a detector without temporal memory loses
it until it moves again; that is the regime the memory ablation probes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..events import MovingBox, SceneSpec, SensorGeometry, generate_synthetic
from ..pillars import PillarConfig, augment, build_pillars
from ..representations import ReprConfig, build
from .targets import assign_targets

CLASS_SIDES = {0: (8, 11), 1: (15, 20)}


@dataclass
class Sequence:
    windows: list
    labels: list  # list of GroundTruthBox lists, one per window
    targets: list = field(default_factory=list)
    grids: list = field(default_factory=list)  # precomputed non-learned inputs
    pillars: list = field(default_factory=list)  # cached (pos, neg) pillar sets

    def __len__(self):
        return len(self.windows)


def _box_path(rng, side, size, moving_us, speed):
    """Start position and velocity keeping the box inside the frame."""
    for _ in range(100):
        ang = rng.uniform(0, 2 * np.pi)
        vx, vy = speed * np.cos(ang), speed * np.sin(ang)
        dx, dy = vx * moving_us * 1e-6, vy * moving_us * 1e-6
        lo_x, hi_x = max(0.0, -dx), min(size - side, size - side - dx)
        lo_y, hi_y = max(0.0, -dy), min(size - side, size - side - dy)
        if lo_x <= hi_x and lo_y <= hi_y:
            return rng.uniform(lo_x, hi_x), rng.uniform(lo_y, hi_y), vx, vy
        speed *= 0.8
    return rng.uniform(0, size - side), rng.uniform(0, size - side), 0.0, 0.0


def random_scene(rng, size=64, n_windows=10, window_us=50_000, max_boxes=2,
                 noise_rate=0.2, pause=True, seed=None):
    duration = n_windows * window_us
    boxes = []
    for _ in range(int(rng.integers(1, max_boxes + 1))):
        cls = int(rng.integers(0, 2))
        side = int(rng.integers(CLASS_SIDES[cls][0], CLASS_SIDES[cls][1] + 1))
        stops = ()
        if pause:
            k0 = int(rng.integers(2, max(3, n_windows // 2)))
            k1 = min(n_windows, k0 + int(rng.integers(3, 6)))
            # pause starts mid-window so the stopping window still sees motion
            stops = ((k0 * window_us + window_us // 2, k1 * window_us + window_us // 2),)
        paused = sum(min(b, duration) - a for a, b in stops if a < duration)
        speed = rng.uniform(80.0, 200.0)
        x, y, vx, vy = _box_path(rng, side, size, duration - paused, speed)
        boxes.append(MovingBox(x, y, side, side, vx, vy, int(rng.choice([-1, 1])), cls, stops))
    return SceneSpec(SensorGeometry(size, size), tuple(boxes), duration, 0.2, noise_rate,
                     int(rng.integers(2**31)) if seed is None else seed)


def overfit_scene(seed=0, size=64, n_windows=20, window_us=50_000):
    """One box sweeping diagonally, never pausing."""
    rng = np.random.default_rng(seed)
    side = 16
    duration = n_windows * window_us
    x, y, vx, vy = _box_path(rng, side, size, duration, 40.0)
    box = MovingBox(x, y, side, side, vx, vy, 1, 1)
    return SceneSpec(SensorGeometry(size, size), (box,), duration, 0.2, 0.0, seed)


def prepare(spec, config, anchors):
    windows, labels = generate_synthetic(spec, config.window_us)
    seq = Sequence(windows, labels)
    attach_inputs(seq, config, anchors)
    return seq


def attach_inputs(seq, config, anchors):
    seq.targets = [
        assign_targets(anchors, [g.box for g in gts], [g.class_id for g in gts], config.pos_iou, config.neg_iou)
        for gts in seq.labels
    ]
    if config.representation == "eventpillars":
        pcfg = PillarConfig(config.max_events, config.max_pillars, config.slices, 1, config.seed)
        seq.pillars = [tuple(augment(build_pillars(w, pcfg, s)).trim() for s in (1, -1)) for w in seq.windows]
        seq.grids = [None] * len(seq.windows)
    else:
        rc = ReprConfig(config.representation, config.bins)
        seq.grids = [build(w, rc).data for w in seq.windows]
        seq.pillars = [None] * len(seq.windows)
    return seq


def make_benchmark(config, anchors, n_train=None, n_test=None, seed=None, test_only=False):
    """(train, test) sequence lists of the standard synthetic benchmark.

    ``test_only`` still draws the train scenes (so the test split is the
    same) but skips simulating them.
    """
    n_train = config.train_sequences if n_train is None else n_train
    n_test = config.test_sequences if n_test is None else n_test
    rng = np.random.default_rng(config.data_seed if seed is None else seed)
    scenes = [random_scene(rng, config.input_size, config.sequence_windows, config.window_us)
              for _ in range(n_train + n_test)]
    train = [] if test_only else [prepare(s, config, anchors) for s in scenes[:n_train]]
    return train, [prepare(s, config, anchors) for s in scenes[n_train:]]
