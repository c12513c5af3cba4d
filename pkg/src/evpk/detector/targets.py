"""Anchor assignment, focal / smooth-L1 losses, decoding and NMS."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..nn import tensor as T

IGNORE = -2
BACKGROUND = -1


@dataclass(frozen=True)
class Detection:
    x_min: float
    y_min: float
    x_max: float
    y_max: float
    score: float
    class_id: int
    window: int = 0

    @property
    def box(self):
        return (self.x_min, self.y_min, self.x_max, self.y_max)


def iou_matrix(a, b):
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    ix = np.clip(np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0]), 0, None)
    iy = np.clip(np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1]), 0, None)
    inter = ix * iy
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)


def encode_deltas(anchors, boxes):
    wa = anchors[:, 2] - anchors[:, 0]
    ha = anchors[:, 3] - anchors[:, 1]
    cxa = anchors[:, 0] + 0.5 * wa
    cya = anchors[:, 1] + 0.5 * ha
    w = boxes[:, 2] - boxes[:, 0]
    h = boxes[:, 3] - boxes[:, 1]
    cx = boxes[:, 0] + 0.5 * w
    cy = boxes[:, 1] + 0.5 * h
    return np.stack([(cx - cxa) / wa, (cy - cya) / ha, np.log(w / wa), np.log(h / ha)], axis=1)


def decode_deltas(anchors, deltas):
    wa = anchors[:, 2] - anchors[:, 0]
    ha = anchors[:, 3] - anchors[:, 1]
    cxa = anchors[:, 0] + 0.5 * wa
    cya = anchors[:, 1] + 0.5 * ha
    # cap the log-scale so a wild prediction cannot overflow exp
    dw = np.minimum(deltas[:, 2], np.log(1000.0 / 16))
    dh = np.minimum(deltas[:, 3], np.log(1000.0 / 16))
    cx = cxa + deltas[:, 0] * wa
    cy = cya + deltas[:, 1] * ha
    w = wa * np.exp(dw)
    h = ha * np.exp(dh)
    return np.stack([cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], axis=1)


@dataclass
class Targets:
    classes: np.ndarray  # class id, BACKGROUND or IGNORE per anchor
    deltas: np.ndarray  # N x 4 (zeros off positives)
    weights: np.ndarray  # 1.0 on positives

    @property
    def n_pos(self):
        return int((self.classes >= 0).sum())


def assign_targets(anchors, gt_boxes, gt_classes, pos_iou=0.5, neg_iou=0.4):
    n = len(anchors)
    classes = np.full(n, BACKGROUND, dtype=np.int64)
    deltas = np.zeros((n, 4))
    weights = np.zeros(n)
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    if len(gt_boxes) == 0:
        return Targets(classes, deltas, weights)
    ious = iou_matrix(anchors, gt_boxes)
    best = ious.argmax(axis=1)  # lowest GT index on ties
    best_iou = ious[np.arange(n), best]
    pos = best_iou >= pos_iou
    classes[(best_iou >= neg_iou) & ~pos] = IGNORE
    classes[pos] = np.asarray(gt_classes)[best[pos]]
    if pos.any():
        deltas[pos] = encode_deltas(anchors[pos], gt_boxes[best[pos]])
        weights[pos] = 1.0
    return Targets(classes, deltas, weights)


def focal_loss(logits, classes, gamma=2.0, alpha=0.25):
    """Sigmoid focal loss summed over non-ignored anchors / max(1, positives)."""
    n, k = logits.shape
    onehot = np.zeros((n, k), dtype=logits.data.dtype)
    pos = classes >= 0
    onehot[np.flatnonzero(pos), classes[pos]] = 1.0
    keep = (classes != IGNORE).astype(logits.data.dtype)[:, None]
    sign = 2.0 * onehot - 1.0
    log_pt = T.log_sigmoid(logits * sign)
    alpha_t = np.where(onehot > 0, alpha, 1.0 - alpha) * keep
    loss = log_pt * alpha_t
    if gamma:
        loss = loss * T.exp(T.log_sigmoid(logits * (-sign)) * gamma)  # (1 - p_t)^gamma
    return T.tsum(loss) * (-1.0 / max(1, int(pos.sum())))


def smooth_l1_loss(pred, target, weights):
    npos = max(1.0, float((weights > 0).sum()))
    w = np.asarray(weights, dtype=pred.data.dtype)[:, None]
    diff = pred - np.asarray(target, dtype=pred.data.dtype)
    return T.tsum(T.smooth_l1(diff) * w) * (1.0 / npos)


def nms(boxes, scores, iou_threshold=0.5):
    """Greedy NMS; order is score descending, then index ascending. Returns kept indices."""
    order = np.lexsort((np.arange(len(scores)), -np.asarray(scores)))
    keep = []
    suppressed = np.zeros(len(scores), dtype=bool)
    for pos, i in enumerate(order):
        if suppressed[i]:
            continue
        keep.append(int(i))
        rest = order[pos + 1:]
        rest = rest[~suppressed[rest]]
        if len(rest):
            ious = iou_matrix(boxes[i], boxes[rest])[0]
            suppressed[rest[ious > iou_threshold]] = True
    return np.array(keep, dtype=np.int64)


def decode_and_nms(logits, deltas, anchors, config, window=0):
    logits = np.asarray(getattr(logits, "data", logits), dtype=np.float64)
    deltas = np.asarray(getattr(deltas, "data", deltas), dtype=np.float64)
    scores = 1.0 / (1.0 + np.exp(-logits))
    boxes = np.clip(decode_deltas(anchors, deltas), 0.0, float(config.input_size))
    valid = (boxes[:, 2] > boxes[:, 0]) & (boxes[:, 3] > boxes[:, 1])
    dets = []
    for c in range(scores.shape[1]):
        cand = np.flatnonzero((scores[:, c] >= config.score_threshold) & valid)
        if not len(cand):
            continue
        kept = cand[nms(boxes[cand], scores[cand, c], config.nms_iou)]
        for i in kept:
            b = boxes[i]
            dets.append(Detection(float(b[0]), float(b[1]), float(b[2]), float(b[3]),
                                  float(scores[i, c]), c, window))
    dets.sort(key=lambda d: -d.score)
    return dets[:config.max_detections]
