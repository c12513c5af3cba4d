"""COCO-style detection metrics: greedy matching and 101-point interpolated AP."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

IOU_THRESHOLDS = tuple(np.round(np.arange(0.5, 0.951, 0.05), 2))
RECALL_POINTS = np.linspace(0.0, 1.0, 101)


def iou(a, b):
    for box in (a, b):
        if box[2] <= box[0] or box[3] <= box[1]:
            raise ValueError(f"degenerate box {tuple(box)}")
    ix = min(a[2], b[2]) - max(a[0], b[0])
    iy = min(a[3], b[3]) - max(a[1], b[1])
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union


def match_detections(det_boxes, gt_boxes, iou_thr):
    """Greedy matching of score-sorted detections to one class's GT boxes in one window."""
    flags = []
    taken = [False] * len(gt_boxes)
    for d in det_boxes:
        best, best_iou = -1, iou_thr
        for j, g in enumerate(gt_boxes):
            if taken[j]:
                continue
            v = iou(d, g)
            if v >= best_iou and (best < 0 or v > best_iou):
                best, best_iou = j, v
        if best >= 0:
            taken[best] = True
        flags.append(best >= 0)
    return flags


def average_precision(flags, scores, n_gt):
    """101-point interpolated AP; None when there is neither GT nor a detection."""
    flags = np.asarray(flags, dtype=bool)
    if n_gt == 0:
        return None if len(flags) == 0 else 0.0
    if len(flags) == 0:
        return 0.0
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="mergesort")
    tp = np.cumsum(flags[order])
    fp = np.cumsum(~flags[order])
    recall = tp / n_gt
    precision = tp / (tp + fp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    sampled = np.where(idx < len(envelope), envelope[np.minimum(idx, len(envelope) - 1)], 0.0)
    return float(sampled.mean())


@dataclass
class EvalResult:
    ap: dict  # class -> {threshold: AP}
    map50: float
    map: float
    n_gt: int
    n_det: int
    n_matched: int  # at IoU 0.5
    thresholds: tuple = field(default=IOU_THRESHOLDS)

    def report(self):
        lines = [
            f"mAP@0.5={self.map50:.6f}",
            f"mAP@0.5:0.95={self.map:.6f}",
            f"n_gt={self.n_gt}",
            f"n_det={self.n_det}",
            f"n_matched@0.5={self.n_matched}",
        ]
        for c in sorted(self.ap):
            row = self.ap[c]
            for thr in self.thresholds:
                v = row[thr]
                lines.append(f"class{c}.AP@{thr:.2f}=" + ("nan" if v is None else f"{v:.6f}"))
        return "\n".join(lines) + "\n"


def _box(obj):
    return tuple(obj.box) if hasattr(obj, "box") else tuple(obj)


def _group(dets, gts):
    gt_by = defaultdict(list)
    for g in gts:
        gt_by[(g.class_id, g.window)].append(_box(g))
    det_by = defaultdict(list)
    for d in dets:
        det_by[(d.class_id, d.window)].append(d)
    return gt_by, det_by


def _class_flags(gt_by, det_by, c, windows, thr):
    flags, scores = [], []
    for w in windows:
        ds = sorted(det_by.get((c, w), []), key=lambda d: -d.score)
        flags += match_detections([_box(d) for d in ds], gt_by.get((c, w), []), thr)
        scores += [d.score for d in ds]
    return flags, scores


def pr_curve(dets, gts, class_id, iou_thr=0.5):
    """(recall, precision) arrays along descending score for one class."""
    gt_by, det_by = _group(dets, gts)
    n_gt = sum(len(v) for (c, _), v in gt_by.items() if c == class_id)
    windows = sorted({w for c, w in gt_by if c == class_id} | {w for c, w in det_by if c == class_id})
    flags, scores = _class_flags(gt_by, det_by, class_id, windows, iou_thr)
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="mergesort")
    tp = np.cumsum(np.asarray(flags, dtype=bool)[order])
    recall = tp / max(n_gt, 1)
    precision = tp / np.arange(1, len(tp) + 1)
    return recall, precision


def map_coco(dets, gts, thresholds=IOU_THRESHOLDS):
    """``dets``: objects with window, class_id, score, box; ``gts``: window, class_id, box."""
    gt_by, det_by = _group(dets, gts)
    classes = sorted({c for c, _ in gt_by} | {c for c, _ in det_by})

    ap = {}
    matched50 = 0
    for c in classes:
        n_gt = sum(len(v) for (cc, _), v in gt_by.items() if cc == c)
        windows = sorted({w for cc, w in gt_by if cc == c} | {w for cc, w in det_by if cc == c})
        ap[c] = {}
        for thr in thresholds:
            flags, scores = _class_flags(gt_by, det_by, c, windows, thr)
            ap[c][thr] = average_precision(flags, scores, n_gt)
            if thr == thresholds[0]:
                matched50 += int(sum(flags))

    defined = [c for c in classes if ap[c][thresholds[0]] is not None]
    if defined:
        map50 = float(np.mean([ap[c][thresholds[0]] for c in defined]))
        mapall = float(np.mean([ap[c][t] for c in defined for t in thresholds]))
    else:
        map50 = mapall = 0.0
    return EvalResult(ap, map50, mapall, len(gts), len(dets), matched50, tuple(thresholds))


# -- detections CSV ---------------------------------------------------------

def write_detections(dets, path):
    with open(path, "w", encoding="ascii") as fh:
        for d in dets:
            fh.write(f"{d.window},{d.class_id},{d.score:.6f},{d.x_min:.6f},{d.y_min:.6f},"
                     f"{d.x_max:.6f},{d.y_max:.6f}\n")


def read_detections(path):
    from .detector.targets import Detection

    out = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 7:
                raise ValueError(f"{path}:{lineno}: expected 7 fields, got {len(parts)}")
            try:
                w, c = int(parts[0]), int(parts[1])
                s, x0, y0, x1, y1 = (float(v) for v in parts[2:])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: malformed detection line {line!r}") from None
            out.append(Detection(x0, y0, x1, y1, s, c, w))
    return out
