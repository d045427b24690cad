"""Registration and feature metrics against brute-force oracles."""

import math

import numpy as np
import pytest

import oracles
from xspecreg.geometry import (
    Frame,
    Homography,
    HomographySamplerConfig,
    sample_homography,
)
from xspecreg.metrics import (
    MetricsConfig,
    ace,
    average_precision,
    matching_score,
    mean_ap,
    mma,
    repeatability,
    success_fractions,
)

W, H = 640, 512


def pixel_h(m, width=W, height=H):
    return Homography(np.asarray(m, dtype=float), Frame.pixel(width, height))


class TestAce:
    def test_identical(self):
        h = sample_homography(HomographySamplerConfig(), W, H, 0)
        assert ace(h, h, W, H) == pytest.approx(0.0, abs=1e-9)

    def test_translation_is_five(self):
        h_gt = pixel_h([[1, 0, 3], [0, 1, 4], [0, 0, 1]])
        h_est = pixel_h(np.eye(3))
        assert ace(h_gt, h_est, W, H) == pytest.approx(5.0, abs=1e-12)

    def test_rotation_about_center(self):
        theta = math.radians(10.0)
        cu, cv = (W - 1) / 2, (H - 1) / 2
        c, s = math.cos(theta), math.sin(theta)
        rot = np.array(
            [[c, -s, cu - c * cu + s * cv], [s, c, cv - s * cu - c * cv], [0, 0, 1]]
        )
        expected = 2 * math.sin(theta / 2) * math.hypot(cu, cv)
        assert ace(pixel_h(rot), pixel_h(np.eye(3)), W, H) == pytest.approx(
            expected, abs=1e-9
        )

    def test_scale_invariance(self):
        h_gt = sample_homography(HomographySamplerConfig(), W, H, 1)
        h_est = sample_homography(HomographySamplerConfig(), W, H, 2)
        scaled = Homography(h_est.m * 7.3, h_est.frame)
        assert ace(h_gt, h_est, W, H) == pytest.approx(
            ace(h_gt, scaled, W, H), abs=1e-9
        )

    def test_matches_brute_force(self):
        for seed in range(10):
            h_gt = sample_homography(HomographySamplerConfig(), W, H, seed)
            h_est = sample_homography(HomographySamplerConfig(), W, H, 100 + seed)
            assert ace(h_gt, h_est, W, H) == pytest.approx(
                oracles.ace_brute(h_gt.m, h_est.m, W, H), abs=1e-9
            )


class TestSuccessFractions:
    def test_hand_count(self):
        np.testing.assert_allclose(
            success_fractions([1, 3, 7, 30], (2, 5, 10, 25)), [0.25, 0.5, 0.75, 0.75]
        )

    def test_empty(self):
        np.testing.assert_array_equal(success_fractions([], (2, 5)), [0.0, 0.0])

    def test_all_zero(self):
        np.testing.assert_array_equal(success_fractions([0, 0], (2, 5)), [1.0, 1.0])

    def test_inf_counts_as_failure(self):
        fr = success_fractions([1.0, math.inf], (2, 5, 10, 25))
        np.testing.assert_allclose(fr, [0.5, 0.5, 0.5, 0.5])

    def test_monotone(self):
        rng = np.random.default_rng(0)
        vals = rng.uniform(0, 40, 50)
        fr = success_fractions(vals, (2, 5, 10, 25))
        assert np.all(np.diff(fr) >= 0)


class TestRepeatability:
    def test_identical_sets(self):
        kps = np.array([[10.0, 100.0, 50.0], [10.0, 100.0, 25.0]])
        h = pixel_h(np.eye(3))
        assert repeatability(kps, kps, h, 3.0) == 1.0

    def test_disjoint_sets(self):
        a = np.array([[10.0], [10.0]])
        b = np.array([[400.0], [400.0]])
        assert repeatability(a, b, pixel_h(np.eye(3)), 3.0) == 0.0

    def test_spec_example(self):
        a = np.array([[10.0, 100.0], [10.0, 100.0]])
        b = np.array([[11.0], [10.0]])
        assert repeatability(a, b, pixel_h(np.eye(3)), 3.0) == pytest.approx(2.0 / 3.0)

    def test_swap_symmetry(self):
        rng = np.random.default_rng(1)
        h = sample_homography(HomographySamplerConfig(), W, H, 5)
        a = np.vstack([rng.uniform(50, 590, 12), rng.uniform(50, 460, 12)])
        b = np.vstack([rng.uniform(50, 590, 9), rng.uniform(50, 460, 9)])
        assert repeatability(a, b, h, 3.0) == pytest.approx(
            repeatability(b, a, h.inverse(), 3.0), abs=1e-12
        )

    def test_empty(self):
        empty = np.zeros((2, 0))
        assert repeatability(empty, empty, pixel_h(np.eye(3)), 3.0) == 0.0


class TestMatchingScoreAndMma:
    def test_all_correct(self):
        pts = np.array([[10.0, 50.0, 90.0], [10.0, 50.0, 90.0]])
        h = pixel_h(np.eye(3))
        assert matching_score(pts, pts, pts, pts, h, 3.0) == 1.0
        assert mma(pts, pts, h, 3.0) == 1.0

    def test_no_matches(self):
        pts = np.array([[10.0], [10.0]])
        empty = np.zeros((2, 0))
        h = pixel_h(np.eye(3))
        assert matching_score(pts, pts, empty, empty, h, 3.0) == 0.0
        assert mma(empty, empty, h, 3.0) == 0.0

    def test_spec_denominator(self):
        rng = np.random.default_rng(2)
        h = pixel_h(np.eye(3))
        kps_a = np.vstack([rng.uniform(50, 590, 10), rng.uniform(50, 460, 10)])
        kps_b = np.vstack([rng.uniform(50, 590, 10), rng.uniform(50, 460, 10)])
        m_src = kps_a[:, :3]
        m_tgt = m_src + rng.uniform(-0.5, 0.5, (2, 3))  # 3 correct matches
        assert matching_score(kps_a, kps_b, m_src, m_tgt, h, 3.0) == pytest.approx(0.3)

    def test_mma_three_of_five(self):
        h = pixel_h(np.eye(3))
        src = np.vstack([np.arange(5.0) * 30 + 50, np.full(5, 100.0)])
        tgt = src.copy()
        tgt[0, 3] += 50.0
        tgt[0, 4] += 50.0
        assert mma(src, tgt, h, 3.0) == pytest.approx(0.6)


class TestAveragePrecision:
    def test_all_correct(self):
        assert average_precision(np.array([True, True]), np.array([0.9, 0.8])) == 1.0

    def test_all_incorrect(self):
        assert average_precision(np.array([False, False]), np.array([0.9, 0.8])) == 0.0

    def test_spec_ranking(self):
        correct = np.array([True, False, True, False])
        scores = np.array([0.9, 0.8, 0.7, 0.6])
        assert average_precision(correct, scores) == pytest.approx(
            oracles.average_precision_brute(list(correct), list(scores)), abs=1e-12
        )

    def test_matches_brute_on_random(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            n = rng.integers(1, 15)
            correct = rng.random(n) < 0.5
            scores = rng.random(n)
            assert average_precision(correct, scores) == pytest.approx(
                oracles.average_precision_brute(list(correct), list(scores)), abs=1e-12
            )


class TestOracleEquivalenceSuite:
    """All metrics agree with independent brute force on random instances."""

    def random_instance(self, rng):
        h = sample_homography(HomographySamplerConfig(), W, H, int(rng.integers(1e6)))
        n_a = int(rng.integers(3, 21))
        n_b = int(rng.integers(3, 21))
        kps_a = np.vstack([rng.uniform(20, 620, n_a), rng.uniform(20, 490, n_a)])
        kps_b = np.vstack([rng.uniform(20, 620, n_b), rng.uniform(20, 490, n_b)])
        n_m = int(rng.integers(1, min(n_a, n_b) + 1))
        from xspecreg.geometry import apply_homography

        m_src = kps_a[:, :n_m]
        m_tgt = apply_homography(h.m, m_src) + rng.normal(0, 2.5, (2, n_m))
        scores = rng.random(n_m)
        return h, kps_a, kps_b, m_src, m_tgt, scores

    def test_fifty_instances(self):
        rng = np.random.default_rng(42)
        pooled_entries = []
        for _ in range(50):
            h, kps_a, kps_b, m_src, m_tgt, scores = self.random_instance(rng)
            assert repeatability(kps_a, kps_b, h, 3.0) == pytest.approx(
                oracles.repeatability_brute(kps_a, kps_b, h.m, W, H, 3.0), abs=1e-12
            )
            assert matching_score(kps_a, kps_b, m_src, m_tgt, h, 3.0) == pytest.approx(
                oracles.matching_score_brute(
                    kps_a, kps_b, m_src, m_tgt, h.m, W, H, 3.0
                ),
                abs=1e-12,
            )
            assert mma(m_src, m_tgt, h, 3.0) == pytest.approx(
                oracles.mma_brute(m_src, m_tgt, h.m, 3.0), abs=1e-12
            )
            pooled_entries.append((m_src, m_tgt, scores, h))
        lhs = mean_ap(pooled_entries, 3.0)
        rhs = oracles.mean_ap_brute(
            [(s, t, sc, h.m) for s, t, sc, h in pooled_entries], 3.0
        )
        assert lhs == pytest.approx(rhs, abs=1e-12)


class TestMetricsConfig:
    def test_defaults(self):
        cfg = MetricsConfig()
        assert cfg.ace_thresholds == (2.0, 5.0, 10.0, 25.0)
        assert cfg.correct_dist == 3.0
        assert (cfg.eval_width, cfg.eval_height) == (640, 512)

    def test_rejects_unsorted(self):
        with pytest.raises(ValueError):
            MetricsConfig(ace_thresholds=(5.0, 2.0))
