"""Differentiable detection losses: focal classification, L1 and GIoU boxes.

The scalarization follows the standard set-prediction recipe: every query
carries a per-class sigmoid focal term (matched queries target their class,
unmatched target all-background), matched queries additionally pay L1 and
GIoU box costs, and all three sums are divided by the number of matched
boxes (floored at one).
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

DEFAULT_LOSS_COEFS = {"cls": 1.0, "bbox": 5.0, "giou": 2.0}
EPS = 1e-12


def sigmoid_focal_loss(logits: Tensor, targets: np.ndarray,
                       alpha: float = 0.25, gamma: float = 2.0) -> Tensor:
    """Elementwise focal-modulated BCE on logits; targets are 0/1 floats."""
    t = ad.Tensor(np.asarray(targets, dtype=np.float64))
    bce = ad.softplus(logits) - logits * t
    p = ad.sigmoid(logits)
    p_t = p * t + (1.0 - p) * (1.0 - t)
    alpha_t = alpha * t + (1.0 - alpha) * (1.0 - t)
    return alpha_t * (1.0 - p_t) ** gamma * bce


def giou_aligned(pred: Tensor, target: np.ndarray) -> Tensor:
    """GIoU between pred[i] and target[i]; pred is (n,4) xyxy, target constant."""
    tb = np.asarray(target, dtype=np.float64).reshape(-1, 4)
    px1, py1, px2, py2 = pred[:, 0], pred[:, 1], pred[:, 2], pred[:, 3]
    tx1, ty1, tx2, ty2 = tb[:, 0], tb[:, 1], tb[:, 2], tb[:, 3]
    ix1 = ad.maximum(px1, tx1)
    iy1 = ad.maximum(py1, ty1)
    ix2 = ad.minimum(px2, tx2)
    iy2 = ad.minimum(py2, ty2)
    inter = ad.relu(ix2 - ix1) * ad.relu(iy2 - iy1)
    area_p = (px2 - px1) * (py2 - py1)
    area_t = (tx2 - tx1) * (ty2 - ty1)
    union = area_p + area_t - inter
    iou = inter / ad.maximum(union, EPS)
    hx1 = ad.minimum(px1, tx1)
    hy1 = ad.minimum(py1, ty1)
    hx2 = ad.maximum(px2, tx2)
    hy2 = ad.maximum(py2, ty2)
    hull = (hx2 - hx1) * (hy2 - hy1)
    return iou - (hull - union) / ad.maximum(hull, EPS)


def detection_loss(logits: Tensor, boxes: Tensor,
                   gt_boxes: list, gt_labels: list, matchings: list,
                   coefs=None, focal_alpha: float = 0.25,
                   focal_gamma: float = 2.0) -> tuple[Tensor, dict]:
    """Scalar detection loss over a batch plus a float breakdown.

    logits: (B, M, K); boxes: (B, M, 4); gt_boxes[b]: (G_b, 4);
    gt_labels[b]: (G_b,) ints; matchings[b]: (G_b,) pred indices.
    """
    w = dict(DEFAULT_LOSS_COEFS if coefs is None else coefs)
    bsz, m, k = logits.shape
    if m == 0:
        raise ValueError("empty prediction set")
    if not (len(gt_boxes) == len(gt_labels) == len(matchings) == bsz):
        raise ValueError("per-image target lists must match the batch size")

    targets = np.zeros((bsz, m, k))
    sel_b, sel_q, sel_t = [], [], []
    for b in range(bsz):
        lbl = np.asarray(gt_labels[b], dtype=np.int64)
        mt = np.asarray(matchings[b], dtype=np.int64)
        if len(mt) != len(lbl):
            raise ValueError("matching length differs from ground-truth count")
        if len(mt) == 0:
            continue
        targets[b, mt, lbl] = 1.0
        sel_b.append(np.full(len(mt), b, dtype=np.int64))
        sel_q.append(mt)
        sel_t.append(np.asarray(gt_boxes[b], dtype=np.float64).reshape(-1, 4))

    num_boxes = max(1, sum(len(x) for x in sel_q))
    focal = ad.reduce_sum(sigmoid_focal_loss(logits, targets, focal_alpha,
                                             focal_gamma)) / num_boxes
    if sel_q:
        bi = np.concatenate(sel_b)
        qi = np.concatenate(sel_q)
        tgt = np.concatenate(sel_t, axis=0)
        matched = boxes[(bi, qi)]
        l1 = ad.reduce_sum(ad.absolute(matched - ad.Tensor(tgt))) / num_boxes
        giou = ad.reduce_sum(1.0 - giou_aligned(matched, tgt)) / num_boxes
    else:
        l1 = ad.Tensor(0.0)
        giou = ad.Tensor(0.0)

    total = w["cls"] * focal + w["bbox"] * l1 + w["giou"] * giou
    breakdown = {
        "cls": float(focal.data),
        "bbox": float(l1.data),
        "giou": float(giou.data),
        "total": float(total.data),
        "num_boxes": num_boxes,
    }
    return total, breakdown
