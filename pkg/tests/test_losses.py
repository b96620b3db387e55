"""Detection loss tests: hand values, invariants, gradient checks."""

import numpy as np
import pytest

from titan import autodiff as ad
from titan import losses
from gradcheck import check_gradients


def test_perfect_match_zeroes_box_terms():
    gt = np.array([[0.2, 0.2, 0.6, 0.7]])
    logits = ad.Tensor(np.array([[[8.0, -8.0, -8.0]]]))  # near-saturated
    boxes = ad.Tensor(gt[None])
    total, br = losses.detection_loss(logits, boxes, [gt], [np.array([0])],
                                      [np.array([0])])
    assert br["bbox"] == 0.0
    assert br["giou"] == 0.0
    assert br["cls"] > 0.0  # finite logits never fully saturate
    assert float(total.data) == pytest.approx(br["total"])


def test_disjoint_boxes_giou_term_exceeds_one():
    gt = np.array([[2.0, 2.0, 3.0, 3.0]])
    pred = np.array([[[0.0, 0.0, 1.0, 1.0]]])
    logits = ad.Tensor(np.zeros((1, 1, 3)))
    _, br = losses.detection_loss(logits, ad.Tensor(pred), [gt],
                                  [np.array([1])], [np.array([0])])
    np.testing.assert_allclose(br["giou"], 1.0 + 7.0 / 9.0, atol=1e-12)


def test_no_ground_truth_keeps_background_focal_only():
    logits = ad.Tensor(np.full((1, 4, 3), -2.0))
    boxes = ad.Tensor(np.tile([0.1, 0.1, 0.2, 0.2], (1, 4, 1)))
    total, br = losses.detection_loss(logits, boxes, [np.zeros((0, 4))],
                                      [np.zeros(0, dtype=int)],
                                      [np.zeros(0, dtype=int)])
    assert br["bbox"] == 0.0 and br["giou"] == 0.0
    assert br["num_boxes"] == 1
    assert float(total.data) > 0.0


def test_empty_prediction_set_rejected():
    with pytest.raises(ValueError):
        losses.detection_loss(ad.Tensor(np.zeros((1, 0, 3))),
                              ad.Tensor(np.zeros((1, 0, 4))),
                              [np.zeros((1, 4))], [np.zeros(1, dtype=int)],
                              [np.zeros(1, dtype=int)])


def test_loss_nonnegative_randomized():
    rng = np.random.default_rng(77)
    for _ in range(50):
        m, g, k = 5, int(rng.integers(0, 4)), 3
        logits = ad.Tensor(rng.normal(size=(1, m, k)))
        xy = rng.uniform(0, 0.5, size=(m, 2))
        wh = rng.uniform(0.05, 0.5, size=(m, 2))
        boxes = ad.Tensor(np.concatenate([xy, xy + wh], 1)[None])
        gxy = rng.uniform(0, 0.5, size=(g, 2))
        gwh = rng.uniform(0.05, 0.5, size=(g, 2))
        gts = np.concatenate([gxy, gxy + gwh], 1)
        labels = rng.integers(0, k, size=g)
        match = rng.permutation(m)[:g]
        total, br = losses.detection_loss(logits, boxes, [gts], [labels], [match])
        assert float(total.data) >= 0.0
        assert br["cls"] >= 0.0 and br["bbox"] >= 0.0


def test_focal_loss_hand_value_at_zero_logit():
    # p = 0.5: focal = alpha_t * 0.25 * log(2) for either target value
    logits = ad.Tensor(np.zeros((1, 1)))
    pos = losses.sigmoid_focal_loss(logits, np.ones((1, 1)))
    neg = losses.sigmoid_focal_loss(logits, np.zeros((1, 1)))
    np.testing.assert_allclose(pos.data[0, 0], 0.25 * 0.25 * np.log(2.0), atol=1e-15)
    np.testing.assert_allclose(neg.data[0, 0], 0.75 * 0.25 * np.log(2.0), atol=1e-15)


def test_detection_loss_gradients_match_finite_differences():
    rng = np.random.default_rng(41)
    m, k = 4, 3
    gts = [np.array([[0.1, 0.1, 0.4, 0.5], [0.5, 0.5, 0.9, 0.8]]),
           np.array([[0.2, 0.3, 0.7, 0.9]])]
    labels = [np.array([0, 2]), np.array([1])]
    matchings = [np.array([1, 3]), np.array([0])]
    params = {
        "logits": rng.normal(size=(2, m, k)),
        "raw": rng.normal(scale=0.5, size=(2, m, 4)),
    }

    def build(p):
        s = ad.sigmoid(p["raw"])
        cx, cy = s[:, :, 0], s[:, :, 1]
        hw, hh = s[:, :, 2] * 0.5, s[:, :, 3] * 0.5
        boxes = ad.stack([cx - hw, cy - hh, cx + hw, cy + hh], axis=-1)
        boxes = ad.clip(boxes, 0.0, 1.0)
        total, _ = losses.detection_loss(p["logits"], boxes, gts, labels, matchings)
        return total

    worst = check_gradients(build, params, rng, n_coords=60)
    assert worst < 1e-4
