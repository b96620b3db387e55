"""Detector forward-pass contracts."""

import numpy as np

from titan import autodiff as ad
from titan import detector as det
from titan.losses import detection_loss
from titan.matching import hungarian_match
from gradcheck import check_gradients

SMALL = det.DetectorConfig(image_size=8, patch_size=4, hidden_dim=8,
                           num_heads=2, enc_layers=2, dec_layers=2,
                           ffn_dim=12, num_queries=5, num_classes=3)


def _images(rng, cfg, b=2):
    return rng.uniform(size=(b, cfg.image_size, cfg.image_size, 3))


def test_state_shapes_and_counts():
    rng = np.random.default_rng(0)
    params = det.init_detector_params(SMALL, seed=1)
    fp = det.run_detector(SMALL, params, _images(rng, SMALL))
    n, m, c = SMALL.num_tokens, SMALL.num_queries, SMALL.hidden_dim
    assert len(fp.enc_states) == SMALL.enc_layers + 1
    assert len(fp.dec_states) == SMALL.dec_layers + 1
    for s in fp.enc_states:
        assert s.shape == (2, n + 1, c)
    for s in fp.dec_states:
        assert s.shape == (2, m + 1, c)
    assert fp.logits.shape == (2, m, SMALL.num_classes)
    assert fp.boxes.shape == (2, m, 4)


def test_detection_set_excludes_domain_slot():
    rng = np.random.default_rng(0)
    params = det.init_detector_params(SMALL, seed=1)
    fp = det.run_detector(SMALL, params, _images(rng, SMALL))
    d = fp.detections(0)
    assert len(d) == SMALL.num_queries
    assert d.scores.shape == (SMALL.num_queries, SMALL.num_classes)


def test_box_invariants_hold():
    rng = np.random.default_rng(2)
    params = det.init_detector_params(SMALL, seed=5)
    fp = det.run_detector(SMALL, params, _images(rng, SMALL, b=3))
    b = fp.boxes.data
    assert (b >= 0.0).all() and (b <= 1.0).all()
    assert (b[..., 2] >= b[..., 0]).all()
    assert (b[..., 3] >= b[..., 1]).all()


def test_zero_weights_propagate_embedded_inputs():
    params = {k: np.zeros_like(v) for k, v in
              det.init_detector_params(SMALL, seed=1).items()}
    rng = np.random.default_rng(3)
    fp = det.run_detector(SMALL, params, _images(rng, SMALL))
    for s in fp.enc_states[1:]:
        np.testing.assert_array_equal(s.data, fp.enc_states[0].data)
    for s in fp.dec_states[1:]:
        np.testing.assert_array_equal(s.data, fp.dec_states[0].data)
    # zero heads: logits all 0 -> scores 0.5; all boxes identical
    d = fp.detections(0)
    np.testing.assert_array_equal(d.scores, 0.5)
    assert np.ptp(fp.boxes.data, axis=(0, 1)).max() == 0.0


def test_forward_bit_reproducible():
    rng = np.random.default_rng(4)
    imgs = _images(rng, SMALL)
    params = det.init_detector_params(SMALL, seed=9)
    a = det.run_detector(SMALL, params, imgs)
    b = det.run_detector(SMALL, params, imgs)
    np.testing.assert_array_equal(a.boxes.data, b.boxes.data)
    np.testing.assert_array_equal(a.logits.data, b.logits.data)
    for sa, sb in zip(a.enc_states, b.enc_states):
        np.testing.assert_array_equal(sa.data, sb.data)


def test_init_deterministic_given_seed():
    p1 = det.init_detector_params(SMALL, seed=123)
    p2 = det.init_detector_params(SMALL, seed=123)
    assert sorted(p1) == sorted(p2)
    for k in p1:
        np.testing.assert_array_equal(p1[k], p2[k])


def test_query_permutation_equivariance():
    rng = np.random.default_rng(8)
    imgs = _images(rng, SMALL, b=1)
    params = det.init_detector_params(SMALL, seed=21)
    perm = np.random.default_rng(1).permutation(SMALL.num_queries)

    permuted = {k: v.copy() for k, v in params.items()}
    permuted["dec.queries"] = params["dec.queries"][perm]
    permuted["dec.pos"] = np.concatenate(
        [params["dec.pos"][:1], params["dec.pos"][1:][perm]], axis=0)

    base = det.run_detector(SMALL, params, imgs)
    swapped = det.run_detector(SMALL, permuted, imgs)
    np.testing.assert_allclose(swapped.logits.data[0], base.logits.data[0][perm],
                               atol=1e-12)
    np.testing.assert_allclose(swapped.boxes.data[0], base.boxes.data[0][perm],
                               atol=1e-12)


def test_mc_dropout_masks_differ_but_seeded_run_repeats():
    rng = np.random.default_rng(5)
    imgs = _images(rng, SMALL, b=1)
    params = det.init_detector_params(SMALL, seed=2)
    a = det.run_detector(SMALL, params, imgs, dropout_p=0.3, mode="train", rng=10)
    b = det.run_detector(SMALL, params, imgs, dropout_p=0.3, mode="train", rng=11)
    c = det.run_detector(SMALL, params, imgs, dropout_p=0.3, mode="train", rng=10)
    assert not np.array_equal(a.boxes.data, b.boxes.data)
    np.testing.assert_array_equal(a.boxes.data, c.boxes.data)


def test_full_pipeline_gradient_matches_finite_differences():
    cfg = det.DetectorConfig(image_size=8, patch_size=4, hidden_dim=8,
                             num_heads=2, enc_layers=1, dec_layers=1,
                             ffn_dim=12, num_queries=4, num_classes=2)
    rng = np.random.default_rng(6)
    imgs = _images(rng, cfg, b=1)
    params = det.init_detector_params(cfg, seed=31)
    gts = [np.array([[0.1, 0.2, 0.5, 0.6]])]
    labels = [np.array([1])]
    fp0 = det.run_detector(cfg, params, imgs)
    d0 = fp0.detections(0)
    match = [hungarian_match(d0.boxes, d0.scores, gts[0], labels[0])]

    def build(p):
        fp = det.forward(cfg, p, imgs)
        total, _ = detection_loss(fp.logits, fp.boxes, gts, labels, match)
        return total

    worst = check_gradients(build, params, rng, n_coords=50)
    assert worst < 1e-4
