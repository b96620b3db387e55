"""Detection and classification metrics.

Two evaluation styles share one detection format: IoU-based average
precision for natural-image benchmarks, and FROC (recall at fixed false
positives per image, center-hit rule), AUC, and F1 for lesion-style
benchmarks. Everything is pure and order-independent: predictions are
re-sorted internally with deterministic tie-breaks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import rankdata

from .boxes import box_centers, centers_inside, nms, pairwise_iou
from .detector import DetectionSet

FPI_POINTS = (0.05, 0.3, 0.5, 1.0)


@dataclass
class ImageDetections:
    """Flat per-image detections: one row per (box, class, confidence)."""
    boxes: np.ndarray   # (n, 4)
    scores: np.ndarray  # (n,)
    labels: np.ndarray  # (n,) int

    def __len__(self) -> int:
        return len(self.scores)


@dataclass
class EvalReport:
    per_class_ap: dict
    map: Optional[float]
    recall_at_fpi: dict
    auc: Optional[float]
    f1: Optional[float]
    f1_threshold: Optional[float]
    counts: dict
    froc_curve: list = field(default_factory=list)  # (threshold, fpi, recall)

    def to_json(self) -> dict:
        return {
            "per_class_ap": {str(k): v for k, v in self.per_class_ap.items()},
            "mAP": self.map,
            "recall_at_fpi": {str(k): v for k, v in self.recall_at_fpi.items()},
            "auc": self.auc,
            "f1": self.f1,
            "f1_threshold": self.f1_threshold,
            "counts": self.counts,
        }


def flatten_detections(ds: DetectionSet) -> ImageDetections:
    """Expand (n, K) per-class scores into one scored candidate per pair."""
    n, k = ds.scores.shape
    boxes = np.repeat(np.asarray(ds.boxes, dtype=np.float64), k, axis=0)
    scores = np.asarray(ds.scores, dtype=np.float64).reshape(-1)
    labels = np.tile(np.arange(k, dtype=np.int64), n)
    return ImageDetections(boxes=boxes, scores=scores, labels=labels)


def apply_nms(dets: ImageDetections, iou_threshold: float = 0.1) -> ImageDetections:
    """Greedy score-descending suppression within each class."""
    keep_all = []
    for c in np.unique(dets.labels):
        idx = np.flatnonzero(dets.labels == c)
        kept = nms(dets.boxes[idx], dets.scores[idx], iou_threshold)
        keep_all.append(idx[kept])
    if not keep_all:
        return dets
    keep = np.concatenate(keep_all)
    keep.sort()
    return ImageDetections(boxes=dets.boxes[keep], scores=dets.scores[keep],
                           labels=dets.labels[keep])


def _sorted_class_preds(preds: list, cls: int):
    """(image, score, box) rows of one class, deterministically score-sorted."""
    rows = []
    for img, det in enumerate(preds):
        for j in np.flatnonzero(det.labels == cls):
            rows.append((img, float(det.scores[j]), det.boxes[j]))
    rows.sort(key=lambda r: (-r[1], r[0], tuple(r[2])))
    return rows


def average_precision(preds: list, gts: list,
                      iou_threshold: float = 0.5) -> tuple[dict, Optional[float]]:
    """Per-class AP and their mean over classes present in the ground truth.

    preds: list of ImageDetections, one per image. gts: list of
    (boxes, labels) pairs. Greedy matching in score order; all-point
    interpolation of the precision-recall curve.
    """
    if len(preds) != len(gts):
        raise ValueError("prediction and ground-truth image counts differ")
    classes = sorted({int(c) for _, labels in gts for c in np.asarray(labels).ravel()})
    per_class = {}
    for cls in classes:
        gt_boxes = [np.asarray(b, dtype=np.float64).reshape(-1, 4)[
            np.asarray(l, dtype=np.int64).reshape(-1) == cls] for b, l in gts]
        total_gt = sum(len(b) for b in gt_boxes)
        rows = _sorted_class_preds(preds, cls)
        matched = [np.zeros(len(b), dtype=bool) for b in gt_boxes]
        tp = np.zeros(len(rows))
        for i, (img, _, box) in enumerate(rows):
            cand = gt_boxes[img]
            if len(cand) == 0:
                continue
            ious = pairwise_iou(box[None], cand)[0]
            ious[matched[img]] = -1.0
            best = int(np.argmax(ious))
            if ious[best] >= iou_threshold:
                matched[img][best] = True
                tp[i] = 1.0
        per_class[cls] = _area_under_pr(tp, total_gt)
    valid = [v for v in per_class.values() if v is not None]
    return per_class, (float(np.mean(valid)) if valid else None)


def _area_under_pr(tp: np.ndarray, total_gt: int) -> Optional[float]:
    if total_gt == 0:
        return None
    if len(tp) == 0:
        return 0.0
    cum_tp = np.cumsum(tp)
    recall = cum_tp / total_gt
    precision = cum_tp / np.arange(1, len(tp) + 1)
    # upper precision envelope, then sum rectangle areas at recall steps
    r = np.concatenate([[0.0], recall])
    p = np.concatenate([[1.0], precision])
    for i in range(len(p) - 2, -1, -1):
        p[i] = max(p[i], p[i + 1])
    steps = np.flatnonzero(np.diff(r) > 0)
    return float(np.sum((r[steps + 1] - r[steps]) * p[steps + 1]))


def froc(preds: list, gts: list, fpi_points=FPI_POINTS
         ) -> tuple[dict, list]:
    """Recall at fixed false positives per image, center-hit TP rule.

    A prediction is a true positive when its box center falls inside a
    still-unmatched ground-truth box (closed boundaries, class-agnostic).
    Returns ({fpi: recall}, staircase rows (threshold, fpi, recall)).
    """
    num_images = len(gts)
    if num_images == 0:
        raise ValueError("froc needs at least one image")
    if len(preds) != num_images:
        raise ValueError("prediction and ground-truth image counts differ")
    total_gt = sum(np.asarray(b, dtype=np.float64).reshape(-1, 4).shape[0]
                   for b, _ in gts)
    # greedy decisions depend only on within-image score order, so each
    # prediction's TP/FP verdict is threshold-independent
    verdicts = []  # (score, is_tp)
    for det, (gb, _) in zip(preds, gts):
        gb = np.asarray(gb, dtype=np.float64).reshape(-1, 4)
        order = sorted(range(len(det)),
                       key=lambda j: (-det.scores[j], tuple(det.boxes[j])))
        taken = np.zeros(len(gb), dtype=bool)
        for j in order:
            hit = False
            if len(gb):
                inside = centers_inside(gb, box_centers(det.boxes[j][None]))[:, 0]
                free = np.flatnonzero(inside & ~taken)
                if len(free):
                    taken[free[0]] = True
                    hit = True
            verdicts.append((float(det.scores[j]), hit))
    verdicts.sort(key=lambda r: -r[0])
    scores = np.array([v[0] for v in verdicts])
    is_tp = np.array([v[1] for v in verdicts], dtype=np.float64)
    curve = [(float("inf"), 0.0, 0.0)]
    if len(scores):
        cum_tp = np.cumsum(is_tp)
        cum_fp = np.cumsum(1.0 - is_tp)
        # group tied scores: a threshold admits every prediction >= it
        last_of_group = np.flatnonzero(np.diff(scores, append=-np.inf) != 0.0)
        for i in last_of_group:
            recall = cum_tp[i] / total_gt if total_gt else 0.0
            curve.append((float(scores[i]), float(cum_fp[i] / num_images),
                          float(recall)))
    out = {}
    for f in fpi_points:
        reachable = [r for _, fpi, r in curve if fpi <= f]
        out[float(f)] = max(reachable) if reachable else 0.0
    return out, curve


def classification_scores(scores, labels) -> tuple[Optional[float], Optional[float], Optional[float]]:
    """(AUC, best F1, threshold achieving it) for image-level labels.

    AUC is the Mann-Whitney rank statistic with tied ranks averaged; absent
    (None) when only one label value occurs. F1 scans every distinct score
    as a >= threshold; absent when there are no positives.
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must align")
    pos = labels == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    auc = None
    if n_pos and n_neg:
        ranks = rankdata(scores)
        auc = float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0)
                    / (n_pos * n_neg))
    if not n_pos:
        return auc, None, None
    best_f1, best_thr = -1.0, None
    for thr in sorted(set(scores.tolist()), reverse=True):
        pred = scores >= thr
        tp = int((pred & pos).sum())
        fp = int((pred & ~pos).sum())
        fn = n_pos - tp
        f1 = 2.0 * tp / (2.0 * tp + fp + fn) if tp else 0.0
        if f1 > best_f1:
            best_f1, best_thr = f1, float(thr)
    return auc, float(best_f1), best_thr


def image_score(det: ImageDetections) -> float:
    """Image-level score: maximum box confidence, 0 if nothing was detected."""
    return float(det.scores.max()) if len(det) else 0.0


def evaluate(preds: list, gts: list, image_labels=None,
             iou_threshold: float = 0.5, fpi_points=FPI_POINTS) -> EvalReport:
    """Full report over one split.

    preds: per-image ImageDetections (already NMS-filtered). gts: per-image
    (boxes, labels). image_labels: optional 0/1 per-image classification
    targets; when omitted, an image is positive iff it has any ground truth,
    which makes AUC degenerate (absent) on all-positive splits.
    """
    per_class, mean_ap = average_precision(preds, gts, iou_threshold)
    recall_at, curve = froc(preds, gts, fpi_points)
    if image_labels is None:
        image_labels = [1 if len(np.asarray(b).reshape(-1, 4)) else 0 for b, _ in gts]
    scores = [image_score(d) for d in preds]
    auc, f1, thr = classification_scores(scores, image_labels)
    tp_total = 0
    fp_total = 0
    gt_total = 0
    for det, (gb, gl) in zip(preds, gts):
        gb = np.asarray(gb, dtype=np.float64).reshape(-1, 4)
        gt_total += len(gb)
    # counts at the operating point FPI<=0.5 are not canonical; report the
    # raw sweep extremes instead: everything admitted
    tp_total = round(curve[-1][2] * gt_total) if len(curve) > 1 else 0
    fp_total = round(curve[-1][1] * len(gts)) if len(curve) > 1 else 0
    counts = {"tp": int(tp_total), "fp": int(fp_total),
              "fn": int(gt_total - tp_total), "gt": int(gt_total)}
    return EvalReport(per_class_ap=per_class, map=mean_ap,
                      recall_at_fpi=recall_at, auc=auc, f1=f1,
                      f1_threshold=thr, counts=counts, froc_curve=curve)


def write_froc_csv(path, curve) -> None:
    """staircase rows as 'threshold,fpi,recall' with repr-exact floats."""
    with open(path, "w") as f:
        f.write("threshold,fpi,recall\n")
        for thr, fpi, recall in curve:
            f.write(f"{thr!r},{fpi!r},{recall!r}\n")
