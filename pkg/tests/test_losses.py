"""Task-based losses (corner, Frobenius, transfer) and direct feature losses."""

import math

import numpy as np
import pytest

from xspecreg.errors import EmptyMatches, NonFinite
from xspecreg.featuregrid import DetectionResponse, DetectorTarget
from xspecreg.geometry import Frame, Homography, normalize_homography
from xspecreg.losses import (
    DescriptorLossConfig,
    DetectorLossWeights,
    LossTerms,
    LossWeights,
    corner_loss,
    descriptor_correspondence,
    descriptor_loss,
    detector_loss,
    frobenius_loss,
    total_loss,
    transfer_loss,
    welsch,
)

W_HALF = 1.0 - math.exp(-0.5)


def norm_h(m):
    return Homography(np.asarray(m, dtype=float), Frame.normalized())


class TestWelsch:
    def test_zero(self):
        assert welsch(0.0) == 0.0

    def test_at_alpha(self):
        assert welsch(0.1, 0.1) == pytest.approx(0.3934693402873666, abs=1e-12)

    def test_saturation(self):
        assert welsch(10.0, 0.1) == pytest.approx(1.0, abs=1e-12)

    def test_bounded(self):
        e = np.linspace(-50, 50, 1001)
        v = welsch(e, 0.1)
        assert np.all((v >= 0) & (v < 1.0 + 1e-15))


class TestCornerLoss:
    def test_identical(self):
        h = norm_h([[1.1, 0.02, 0.01], [0, 1, 0.05], [0.001, 0, 1]])
        assert corner_loss(h, h) == pytest.approx(0.0, abs=1e-12)

    def test_translation_hand_value(self):
        h_gt = norm_h(np.eye(3))
        h_est = norm_h([[1, 0, 0.1], [0, 1, 0], [0, 0, 1]])
        assert corner_loss(h_gt, h_est) == pytest.approx(W_HALF / 2, abs=1e-9)

    def test_swap_symmetry(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            a = norm_h(np.eye(3) + 0.05 * rng.standard_normal((3, 3)))
            b = norm_h(np.eye(3) + 0.05 * rng.standard_normal((3, 3)))
            assert corner_loss(a, b) == pytest.approx(corner_loss(b, a), abs=1e-12)

    def test_in_unit_interval(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            a = norm_h(np.eye(3) + 0.1 * rng.standard_normal((3, 3)))
            b = norm_h(np.eye(3) + 0.1 * rng.standard_normal((3, 3)))
            assert 0.0 <= corner_loss(a, b) < 1.0


class TestFrobeniusLoss:
    def test_identical(self):
        h = norm_h([[1, 0, 0.2], [0, 1.05, 0], [0, 0.001, 1]])
        assert frobenius_loss(h, h) == pytest.approx(0.0, abs=1e-12)

    def test_single_entry_composition(self):
        h_gt = norm_h(np.eye(3))
        h_est = norm_h(np.diag([1.1, 1.0, 1.0]))
        # forward: diag(1.1)-I has one 0.1 entry; inverse: one -1/11 entry
        expected = (welsch(0.1) + welsch(1.0 / 1.1 - 1.0)) / 18.0
        assert frobenius_loss(h_gt, h_est) == pytest.approx(expected, abs=1e-12)

    def test_scale_fixing_makes_invariant(self):
        h_gt = norm_h(np.eye(3))
        m = np.array([[1.05, 0.01, 0.0], [0.0, 1.0, 0.02], [0.0, 0.0, 1.0]])
        assert frobenius_loss(h_gt, norm_h(m)) == pytest.approx(
            frobenius_loss(h_gt, norm_h(2.0 * m)), abs=1e-12
        )

    def test_swap_symmetry(self):
        a = norm_h(np.eye(3))
        b = norm_h([[1.02, 0, 0.05], [0, 0.98, 0], [0.001, 0, 1]])
        assert frobenius_loss(a, b) == pytest.approx(frobenius_loss(b, a), abs=1e-12)


class TestTransferLoss:
    def test_perfect_matches(self):
        h = Homography(
            np.array([[1, 0, 10.0], [0, 1, -5.0], [0, 0, 1]]), Frame.pixel(320, 240)
        )
        hn = normalize_homography(h)
        rng = np.random.default_rng(2)
        src = rng.uniform(-0.8, 0.8, (2, 12))
        from xspecreg.geometry import apply_homography

        tgt = apply_homography(hn.m, src)
        assert transfer_loss(hn, src, tgt) == pytest.approx(0.0, abs=1e-12)

    def test_identity_hand_value(self):
        hn = norm_h(np.eye(3))
        src = np.array([[0.0], [0.0]])
        tgt = np.array([[0.1], [0.0]])
        assert transfer_loss(hn, src, tgt) == pytest.approx(W_HALF / 2, abs=1e-9)

    def test_second_perfect_match_halves(self):
        hn = norm_h(np.eye(3))
        src = np.array([[0.0, 0.5], [0.0, 0.5]])
        tgt = np.array([[0.1, 0.5], [0.0, 0.5]])
        one = transfer_loss(hn, src[:, :1], tgt[:, :1])
        two = transfer_loss(hn, src, tgt)
        assert two == pytest.approx(one / 2, abs=1e-12)

    def test_empty_raises(self):
        with pytest.raises(EmptyMatches):
            transfer_loss(norm_h(np.eye(3)), np.zeros((2, 0)), np.zeros((2, 0)))


class TestDescriptorLoss:
    def unit(self, *vals):
        d = np.zeros(4)
        for i, v in zip(range(len(vals)), vals):
            d[i] = v
        return d / np.linalg.norm(d)

    def grids(self, d_src, d_tgt, hc=2, wc=2):
        src = np.tile(d_src, (hc, wc, 1)).astype(float)
        tgt = np.tile(d_tgt, (hc, wc, 1)).astype(float)
        return src, tgt

    def test_corresponding_identical_is_zero(self):
        d = self.unit(1.0)
        src, tgt = self.grids(d, d, hc=1, wc=1)
        h = Homography(np.eye(3), Frame.pixel(8, 8))
        assert descriptor_loss(src, tgt, h) == pytest.approx(0.0, abs=1e-12)

    def test_non_corresponding_orthogonal_is_zero(self):
        # shift by two cells: no correspondences between distinct descriptors
        src = np.zeros((1, 4, 4))
        src[:, :, 0] = 1.0
        tgt = np.zeros((1, 4, 4))
        tgt[:, :, 1] = 1.0
        h = Homography(
            np.array([[1, 0, 1000.0], [0, 1, 0], [0, 0, 1]]), Frame.pixel(32, 8)
        )
        assert descriptor_loss(src, tgt, h) == pytest.approx(0.0, abs=1e-12)

    def test_corresponding_orthogonal_penalty(self):
        e1, e2 = self.unit(1.0), self.unit(0.0, 1.0)
        src, tgt = self.grids(e1, e2, hc=1, wc=1)
        h = Homography(np.eye(3), Frame.pixel(8, 8))
        # single pair, corresponding, dot 0: loss 250 * (1 - 0) pre-averaging
        assert descriptor_loss(src, tgt, h) == pytest.approx(250.0, abs=1e-9)

    def test_correspondence_radius(self):
        h = Homography(
            np.array([[1, 0, 3.9], [0, 1, 0], [0, 0, 1.0]]), Frame.pixel(16, 8)
        )
        corr = descriptor_correspondence((1, 2), (1, 2), h)
        # cell centers 3.5 and 11.5; warped 3.5 -> 7.4: within 4 of neither? 11.5-7.4=4.1
        assert corr[0, 0] == 1.0  # |7.4 - 3.5| = 3.9 <= 4
        assert corr[0, 1] == 0.0

    def test_gradient_bound(self):
        cfg = DescriptorLossConfig()
        assert cfg.positive_weight == 250.0
        assert cfg.positive_margin == 1.0
        assert cfg.negative_margin == 0.2


class TestDetectorLoss:
    def make(self, logits, label):
        resp = DetectionResponse(np.asarray(logits, dtype=float))
        tgt = DetectorTarget.from_labels(np.asarray(label))
        return resp, tgt

    def test_saturated_true_class(self):
        logits = np.zeros((1, 1, 65))
        logits[0, 0, 7] = 40.0
        resp, tgt = self.make(logits, [[7]])
        assert detector_loss((resp, resp), (tgt, tgt)) < 1e-12

    def test_uniform_keypoint_class(self):
        resp, tgt = self.make(np.zeros((1, 1, 65)), [[12]])
        expected = (64.0 / 65.0) * math.log(65.0)
        assert detector_loss((resp, resp), (tgt, tgt)) == pytest.approx(expected, abs=1e-9)

    def test_uniform_dustbin(self):
        resp, tgt = self.make(np.zeros((1, 1, 65)), [[64]])
        expected = (1.0 / 65.0) * math.log(65.0)
        assert detector_loss((resp, resp), (tgt, tgt)) == pytest.approx(expected, abs=1e-9)

    def test_uniform_weights_equal_plain_ce(self):
        rng = np.random.default_rng(3)
        logits = rng.standard_normal((2, 3, 65))
        labels = rng.integers(0, 65, (2, 3))
        resp, tgt = self.make(logits, labels)
        w = DetectorLossWeights.uniform()
        z = logits - logits.max(axis=2, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=2, keepdims=True))
        rows, cols = np.indices(labels.shape)
        plain = float(-logp[rows, cols, labels].mean())
        assert detector_loss((resp, resp), (tgt, tgt), w) == pytest.approx(plain, abs=1e-12)

    def test_averages_over_both_images(self):
        logits_a = np.zeros((1, 1, 65))
        logits_b = np.zeros((1, 1, 65))
        resp_a, tgt_a = self.make(logits_a, [[3]])
        resp_b, tgt_b = self.make(logits_b, [[64]])
        lone = detector_loss((resp_a, resp_b), (tgt_a, tgt_b))
        la = (64.0 / 65.0) * math.log(65.0)
        lb = (1.0 / 65.0) * math.log(65.0)
        assert lone == pytest.approx((la + lb) / 2, abs=1e-12)


class TestTotalLoss:
    def test_all_zero_weights(self):
        terms = LossTerms(0.3, 0.2, 0.5, 1.0, 2.0)
        assert total_loss(terms, LossWeights(0, 0, 0, 0, 0)) == 0.0

    def test_single_weight(self):
        terms = LossTerms(0.3, 0.2, 0.5, 1.0, 2.0)
        assert total_loss(terms, LossWeights(0, 0, 1, 0, 0)) == pytest.approx(0.5)

    def test_linearity_in_weight(self):
        terms = LossTerms(0.1, 0.1, 0.5, 0.2, 0.3)
        base = total_loss(terms, LossWeights(0, 0, 1, 1, 1))
        double = total_loss(terms, LossWeights(0, 0, 2, 1, 1))
        assert double - base == pytest.approx(0.5, abs=1e-12)

    def test_default_weights_match_final_model(self):
        w = LossWeights()
        assert (w.corner, w.frobenius, w.transfer, w.descriptor, w.detector) == (
            0.0,
            0.0,
            1.0,
            1.0,
            1.0,
        )

    def test_non_finite_rejected(self):
        with pytest.raises(NonFinite):
            total_loss(LossTerms(math.nan, 0, 0, 0, 0), LossWeights())

    def test_detector_weight_defaults(self):
        w = DetectorLossWeights()
        np.testing.assert_allclose(w.w[:64], 64.0 / 65.0)
        assert w.w[64] == pytest.approx(1.0 / 65.0)
