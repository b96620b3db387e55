"""Bipartite assignment of ground-truth objects to predicted queries.

The cost couples a focal-style classification term with L1 and GIoU box
terms, weighted class:bbox:giou = 2:5:2. The assignment itself is delegated
to scipy's linear_sum_assignment, which returns the exact global optimum;
tests verify it against exhaustive permutation search.
"""

import numpy as np
from scipy.optimize import linear_sum_assignment

from .boxes import pairwise_giou

DEFAULT_COST_WEIGHTS = {"class": 2.0, "bbox": 5.0, "giou": 2.0}


def solve_assignment(cost: np.ndarray) -> np.ndarray:
    """Column choice per row minimizing total cost; rows must fit in columns."""
    cost = np.asarray(cost, dtype=np.float64)
    rows, cols = cost.shape
    if rows > cols:
        raise ValueError(f"assignment needs rows <= cols, got {rows}x{cols}")
    r, c = linear_sum_assignment(cost)
    out = np.empty(rows, dtype=np.int64)
    out[r] = c
    return out


def match_cost(pred_boxes: np.ndarray, pred_scores: np.ndarray,
               gt_boxes: np.ndarray, gt_labels: np.ndarray,
               weights=None, focal_alpha: float = 0.25,
               focal_gamma: float = 2.0) -> np.ndarray:
    """Weighted cost matrix of shape (num_gt, num_pred)."""
    w = dict(DEFAULT_COST_WEIGHTS if weights is None else weights)
    p = np.clip(np.asarray(pred_scores, dtype=np.float64), 0.0, 1.0)
    labels = np.asarray(gt_labels, dtype=np.int64)
    eps = 1e-8
    pos = focal_alpha * (1.0 - p) ** focal_gamma * (-np.log(p + eps))
    neg = (1.0 - focal_alpha) * p ** focal_gamma * (-np.log(1.0 - p + eps))
    cost_class = pos[:, labels] - neg[:, labels]                     # (M, G)
    cost_bbox = np.abs(np.asarray(pred_boxes, dtype=np.float64)[:, None, :]
                       - np.asarray(gt_boxes, dtype=np.float64)[None, :, :]).sum(-1)
    cost_giou = -pairwise_giou(pred_boxes, gt_boxes)
    total = w["class"] * cost_class + w["bbox"] * cost_bbox + w["giou"] * cost_giou
    return total.T


def hungarian_match(pred_boxes: np.ndarray, pred_scores: np.ndarray,
                    gt_boxes: np.ndarray, gt_labels: np.ndarray,
                    weights=None) -> np.ndarray:
    """Optimal injective map gt index -> pred index.

    Returns an int array a with a[g] = matched prediction for ground truth g.
    """
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    if len(gt_boxes) == 0:
        return np.empty(0, dtype=np.int64)
    if len(gt_boxes) > len(pred_boxes):
        raise ValueError(
            f"{len(gt_boxes)} ground truths but only {len(pred_boxes)} predictions")
    return solve_assignment(
        match_cost(pred_boxes, pred_scores, gt_boxes, gt_labels, weights))
