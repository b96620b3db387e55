"""Box geometry and NMS unit tests."""

import numpy as np

from titan import boxes as bx


def test_iou_self_is_one():
    b = np.array([[0.1, 0.2, 0.5, 0.9]])
    assert bx.pairwise_iou(b, b)[0, 0] == 1.0
    assert bx.pairwise_giou(b, b)[0, 0] == 1.0


def test_giou_disjoint_hand_value():
    a = np.array([[0.0, 0.0, 1.0, 1.0]])
    b = np.array([[2.0, 2.0, 3.0, 3.0]])
    g = bx.pairwise_giou(a, b)[0, 0]
    np.testing.assert_allclose(g, -7.0 / 9.0, rtol=0, atol=1e-15)
    assert 1.0 - g > 1.0


def test_iou_known_overlap():
    a = np.array([[0.0, 0.0, 2.0, 2.0]])
    b = np.array([[1.0, 1.0, 3.0, 3.0]])
    # intersection 1, union 7
    np.testing.assert_allclose(bx.pairwise_iou(a, b)[0, 0], 1.0 / 7.0)


def test_centers_inside_closed_boundary():
    box = np.array([[0.2, 0.2, 0.6, 0.6]])
    centers = np.array([[0.2, 0.2], [0.6, 0.6], [0.61, 0.4], [0.4, 0.4]])
    hit = bx.centers_inside(box, centers)[0]
    assert hit.tolist() == [True, True, False, True]


def test_nms_duplicate_suppression():
    b = np.array([[0.1, 0.1, 0.4, 0.4], [0.1, 0.1, 0.4, 0.4]])
    keep = bx.nms(b, np.array([0.9, 0.8]), 0.1)
    assert keep.tolist() == [0]


def test_nms_keeps_disjoint():
    b = np.array([[0.0, 0.0, 0.2, 0.2], [0.5, 0.5, 0.7, 0.7]])
    keep = bx.nms(b, np.array([0.3, 0.8]), 0.1)
    assert sorted(keep.tolist()) == [0, 1]
    assert keep.tolist()[0] == 1  # score-descending


def _nms_oracle(boxes, scores, thr):
    # quadratic restatement of greedy suppression
    idx = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    keep, removed = [], set()
    for i in idx:
        if i in removed:
            continue
        keep.append(i)
        for j in idx:
            if j != i and j not in removed:
                if bx.pairwise_iou(boxes[i:i + 1], boxes[j:j + 1])[0, 0] > thr:
                    removed.add(j)
    return keep


def test_nms_matches_oracle_randomized():
    rng = np.random.default_rng(123)
    for _ in range(200):
        n = int(rng.integers(1, 12))
        xy = rng.uniform(0, 0.7, size=(n, 2))
        wh = rng.uniform(0.05, 0.3, size=(n, 2))
        boxes = np.concatenate([xy, xy + wh], axis=1)
        scores = np.round(rng.uniform(size=n), 2)  # rounding forces ties
        thr = float(rng.choice([0.1, 0.3, 0.5]))
        assert bx.nms(boxes, scores, thr).tolist() == _nms_oracle(boxes, scores, thr)
