"""Truncated-BPTT training and sequential inference."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..nn import tensor as T
from ..nn.optim import AdamState, adam_step, cosine_lr
from .model import DMANet, make_anchors
from .targets import decode_and_nms, focal_loss, smooth_l1_loss

log = logging.getLogger(__name__)


class TrainingError(FloatingPointError):
    pass


@dataclass
class TrainResult:
    model: DMANet
    losses: list = field(default_factory=list)  # (step, lr, total, cls, box)

    @property
    def totals(self):
        return [r[2] for r in self.losses]


def window_loss(model, seq, k, state, training=True):
    cfg = model.config
    logits, deltas, state = model.forward_window(seq.windows[k], state, training, seq.grids[k], seq.pillars[k])
    tg = seq.targets[k]
    cls = focal_loss(logits, tg.classes, cfg.focal_gamma, cfg.focal_alpha)
    box = smooth_l1_loss(deltas, tg.deltas, tg.weights)
    return cls, box, state


def chunk_loss(model, seq, start, stop, state, training=True):
    """Mean per-window loss over windows ``[start, stop)`` with state threaded through."""
    total, cls_sum, box_sum = None, 0.0, 0.0
    w = model.config.box_loss_weight
    for k in range(start, stop):
        cls, box, state = window_loss(model, seq, k, state, training)
        term = cls + box * w
        total = term if total is None else total + term
        cls_sum += float(cls.data)
        box_sum += float(box.data)
    n = stop - start
    return total * (1.0 / n), cls_sum / n, box_sum / n, state


def count_steps(sequences, bptt):
    return sum(math.ceil(len(s) / bptt) for s in sequences)


def train_sequences(model, sequences, epochs=None, steps=None, seed=None, callback=None):
    """Adam + cosine schedule; gradients cut every ``bptt`` windows, state values carried.

    Each optimizer step covers one chunk of at most ``bptt`` windows of one
    sequence. ``steps`` (or ``config.steps``) fixes the step budget, else
    ``epochs`` passes over the shuffled sequences.
    """
    cfg = model.config
    seed = cfg.seed if seed is None else seed
    per_epoch = count_steps(sequences, cfg.bptt)
    steps = steps or cfg.steps or per_epoch * (epochs or cfg.epochs)
    rng = np.random.default_rng(seed)
    params = model.parameters()
    adam = AdamState(lr=cfg.lr)
    result = TrainResult(model)
    step = 0
    while step < steps:
        for si in rng.permutation(len(sequences)):
            seq = sequences[si]
            state = model.initial_state()
            for start in range(0, len(seq), cfg.bptt):
                stop = min(start + cfg.bptt, len(seq))
                lr = cosine_lr(step, steps, cfg.lr, cfg.lr_min)
                model.zero_grad()
                loss, cls, box, state = chunk_loss(model, seq, start, stop, state, training=True)
                value = float(loss.data)
                if not math.isfinite(value):
                    raise TrainingError(f"non-finite loss at step {step}: cls={cls} box={box}")
                T.backward(loss)
                adam_step(params, adam, lr=lr)
                state = state.detach()
                result.losses.append((step, lr, value, cls, box))
                if callback is not None:
                    callback(step, value, cls, box)
                step += 1
                if step >= steps:
                    return result
    return result


def predict_sequence(model, seq, training=False):
    """Per-window detections with state carried across the whole sequence."""
    anchors = make_anchors(model.config)
    state = model.initial_state()
    out = []
    for k, window in enumerate(seq.windows):
        grid = seq.grids[k] if seq.grids else None
        psets = seq.pillars[k] if seq.pillars else None
        logits, deltas, state = model.forward_window(window, state, training, grid, psets)
        state = state.detach()
        out.append(decode_and_nms(logits, deltas, anchors, model.config, window=k))
    return out


def evaluate(model, sequences):
    """mAP over sequences; window ids are made unique across sequences."""
    from ..evalmap import map_coco
    from .targets import Detection
    from ..events import GroundTruthBox

    dets, gts = [], []
    offset = 0
    for seq in sequences:
        for k, window_dets in enumerate(predict_sequence(model, seq)):
            for d in window_dets:
                dets.append(Detection(d.x_min, d.y_min, d.x_max, d.y_max, d.score, d.class_id, offset + k))
            for g in seq.labels[k]:
                gts.append(GroundTruthBox(offset + k, g.class_id, g.x_min, g.y_min, g.x_max, g.y_max))
        offset += len(seq)
    return map_coco(dets, gts)


def pillar_sweep(model, sequences, ks):
    """mAP@0.5 per pillar budget K, re-pillarizing ``sequences`` for each K."""
    from .data import attach_inputs

    anchors = make_anchors(model.config)
    rows = []
    for k in ks:
        cfg = model.config.replace(max_pillars=int(k))
        for seq in sequences:
            attach_inputs(seq, cfg, anchors)
        rows.append((int(k), evaluate(model, sequences)))
    return rows


def saturation_k(ks, maps, tol=0.005):
    """Smallest K after which every later mAP stays within ``tol`` of mAP(K)."""
    for i, k in enumerate(ks):
        if all(abs(m - maps[i]) < tol for m in maps[i + 1:]):
            return k
    return ks[-1]
