"""Axis-aligned box geometry on (x1, y1, x2, y2) arrays, numpy only.

All functions take normalized corner coordinates with x1 <= x2, y1 <= y2.
Degenerate denominators are floored at 1e-12 so exact self-comparison gives
IoU 1 and GIoU 1 without special-casing.
"""

import numpy as np

EPS = 1e-12


def box_area(boxes: np.ndarray) -> np.ndarray:
    boxes = np.asarray(boxes, dtype=np.float64)
    return (boxes[..., 2] - boxes[..., 0]) * (boxes[..., 3] - boxes[..., 1])


def pairwise_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """IoU matrix of shape (len(a), len(b))."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    x1 = np.maximum(a[:, None, 0], b[None, :, 0])
    y1 = np.maximum(a[:, None, 1], b[None, :, 1])
    x2 = np.minimum(a[:, None, 2], b[None, :, 2])
    y2 = np.minimum(a[:, None, 3], b[None, :, 3])
    inter = np.clip(x2 - x1, 0.0, None) * np.clip(y2 - y1, 0.0, None)
    union = box_area(a)[:, None] + box_area(b)[None, :] - inter
    return inter / np.maximum(union, EPS)


def pairwise_giou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Generalized IoU matrix: IoU minus the hull-excess penalty, in [-1, 1]."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    x1 = np.maximum(a[:, None, 0], b[None, :, 0])
    y1 = np.maximum(a[:, None, 1], b[None, :, 1])
    x2 = np.minimum(a[:, None, 2], b[None, :, 2])
    y2 = np.minimum(a[:, None, 3], b[None, :, 3])
    inter = np.clip(x2 - x1, 0.0, None) * np.clip(y2 - y1, 0.0, None)
    union = box_area(a)[:, None] + box_area(b)[None, :] - inter
    iou = inter / np.maximum(union, EPS)
    hx1 = np.minimum(a[:, None, 0], b[None, :, 0])
    hy1 = np.minimum(a[:, None, 1], b[None, :, 1])
    hx2 = np.maximum(a[:, None, 2], b[None, :, 2])
    hy2 = np.maximum(a[:, None, 3], b[None, :, 3])
    hull = (hx2 - hx1) * (hy2 - hy1)
    return iou - (hull - union) / np.maximum(hull, EPS)


def box_centers(boxes: np.ndarray) -> np.ndarray:
    boxes = np.asarray(boxes, dtype=np.float64)
    cx = 0.5 * (boxes[..., 0] + boxes[..., 2])
    cy = 0.5 * (boxes[..., 1] + boxes[..., 3])
    return np.stack([cx, cy], axis=-1)


def centers_inside(boxes: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Boolean matrix (len(boxes), len(centers)): center in closed box."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 2)
    cx, cy = centers[None, :, 0], centers[None, :, 1]
    return ((boxes[:, 0:1] <= cx) & (cx <= boxes[:, 2:3])
            & (boxes[:, 1:2] <= cy) & (cy <= boxes[:, 3:4]))


def nms(boxes: np.ndarray, scores: np.ndarray, iou_threshold: float) -> np.ndarray:
    """Greedy non-maximum suppression; returns kept indices, score-descending.

    Ties in score break toward the lower original index so results do not
    depend on sort internals.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    order = np.lexsort((np.arange(len(scores)), -scores))
    keep = []
    alive = np.ones(len(scores), dtype=bool)
    for i in order:
        if not alive[i]:
            continue
        keep.append(int(i))
        drop = pairwise_iou(boxes[i:i + 1], boxes)[0] > iou_threshold
        drop[i] = False
        alive &= ~drop
    return np.array(keep, dtype=np.int64)
