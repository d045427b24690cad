"""ZNCC, soft matching, match scoring, and mutual nearest neighbours."""

import numpy as np
import pytest

from oracles import mutual_nn_brute, zncc_brute
from xspecreg.errors import EmptyTargetSet, ZeroVariance
from xspecreg.extraction import Keypoint
from xspecreg.featuregrid import DescriptorMap, Heatmap
from xspecreg.matching import (
    MatcherConfig,
    match_score,
    mutual_nn,
    soft_match,
    zncc,
    zncc_matrix,
)


def kp(u, v, desc, score=0.5):
    d = np.asarray(desc, dtype=float)
    return Keypoint(u, v, score, d / np.linalg.norm(d))


class TestZncc:
    def test_self_correlation(self):
        rng = np.random.default_rng(0)
        d = rng.standard_normal(16)
        assert zncc(d, d) == pytest.approx(1.0, abs=1e-12)

    def test_anti_correlation(self):
        rng = np.random.default_rng(1)
        d = rng.standard_normal(16)
        assert zncc(d, -d) == pytest.approx(-1.0, abs=1e-12)

    def test_hand_value_c4(self):
        assert zncc(np.array([1.0, 0, 0, 0]), np.array([0.0, 1, 0, 0])) == pytest.approx(
            -1.0 / 3.0, abs=1e-9
        )

    def test_matches_brute_force(self):
        rng = np.random.default_rng(2)
        for _ in range(25):
            a = rng.standard_normal(12)
            b = rng.standard_normal(12)
            assert zncc(a, b) == pytest.approx(zncc_brute(list(a), list(b)), abs=1e-12)

    def test_symmetry(self):
        rng = np.random.default_rng(3)
        a, b = rng.standard_normal(10), rng.standard_normal(10)
        assert zncc(a, b) == pytest.approx(zncc(b, a), abs=1e-12)

    def test_constant_raises(self):
        with pytest.raises(ZeroVariance):
            zncc(np.full(8, 0.3), np.arange(8.0))

    def test_matrix_agrees_with_scalar(self):
        rng = np.random.default_rng(4)
        a = rng.standard_normal((3, 8))
        b = rng.standard_normal((5, 8))
        z = zncc_matrix(a, b)
        for i in range(3):
            for j in range(5):
                assert z[i, j] == pytest.approx(zncc(a[i], b[j]), abs=1e-12)


class TestMatchScore:
    def test_identical(self):
        rng = np.random.default_rng(5)
        d = rng.standard_normal(8)
        assert match_score(d, d) == pytest.approx(1.0, abs=1e-12)

    def test_negated(self):
        rng = np.random.default_rng(6)
        d = rng.standard_normal(8)
        assert match_score(d, -d) == pytest.approx(0.0, abs=1e-12)

    def test_hand_value(self):
        assert match_score(
            np.array([1.0, 0, 0, 0]), np.array([0.0, 1, 0, 0])
        ) == pytest.approx(1.0 / 3.0, abs=1e-9)


def constant_target_maps(hc=2, wc=2, c=8):
    rng = np.random.default_rng(9)
    d = rng.standard_normal((hc, wc, c))
    d /= np.linalg.norm(d, axis=2, keepdims=True)
    heat = Heatmap(np.full((hc * 8, wc * 8), 0.3))
    return heat, DescriptorMap(d)


class TestSoftMatch:
    def test_single_target(self):
        rng = np.random.default_rng(10)
        heat, dmap = constant_target_maps()
        tgt = [kp(5.0, 9.0, rng.standard_normal(8))]
        src = [kp(2.0, 2.0, rng.standard_normal(8)) for _ in range(3)]
        matches = soft_match(
            src, tgt, target_heatmap=heat, target_descriptors=dmap
        )
        for m in matches:
            assert (m.pseudo_tgt.u, m.pseudo_tgt.v) == pytest.approx((5.0, 9.0))

    def test_two_equal_targets_midpoint(self):
        heat, dmap = constant_target_maps()
        d = np.zeros(8)
        d[0] = 1.0
        tgt = [kp(2.0, 2.0, d), kp(10.0, 6.0, d)]
        src = [kp(1.0, 1.0, d)]
        m = soft_match(src, tgt, target_heatmap=heat, target_descriptors=dmap)[0]
        assert (m.pseudo_tgt.u, m.pseudo_tgt.v) == pytest.approx((6.0, 4.0), abs=1e-9)

    def test_sharp_temperature_selects_best(self):
        heat, dmap = constant_target_maps()
        rng = np.random.default_rng(11)
        base = rng.standard_normal(8)
        other = rng.standard_normal(8)
        # construct targets with zncc ~0.9 and ~0.1 against the source
        src_d = base
        t_good = base + 0.1 * rng.standard_normal(8)
        tgt = [kp(3.0, 3.0, t_good), kp(12.0, 12.0, other)]
        src = [kp(1.0, 1.0, src_d)]
        m = soft_match(
            src, tgt, MatcherConfig(0.01), target_heatmap=heat, target_descriptors=dmap
        )[0]
        z_good = zncc(src[0].desc, tgt[0].desc)
        z_bad = zncc(src[0].desc, tgt[1].desc)
        assert z_good - z_bad > 0.2
        assert (m.pseudo_tgt.u, m.pseudo_tgt.v) == pytest.approx((3.0, 3.0), abs=1e-10)

    def test_weights_sum_to_one_and_hull(self):
        heat, dmap = constant_target_maps()
        rng = np.random.default_rng(12)
        tgt = [
            kp(rng.uniform(0, 15), rng.uniform(0, 15), rng.standard_normal(8))
            for _ in range(6)
        ]
        src = [kp(1.0, 1.0, rng.standard_normal(8)) for _ in range(4)]
        from xspecreg.extraction import keypoints_to_arrays
        from xspecreg.matching import soft_match_arrays

        sc, _, sd = keypoints_to_arrays(src)
        tc, _, td = keypoints_to_arrays(tgt)
        out = soft_match_arrays(
            sc, sd, tc, td, heat.values, dmap.values, MatcherConfig(),
            return_weights=True,
        )
        np.testing.assert_allclose(out["weights"].sum(axis=1), 1.0, atol=1e-9)
        hull_min = tc.min(axis=1) - 1e-9
        hull_max = tc.max(axis=1) + 1e-9
        assert np.all(out["pseudo_coords"] >= hull_min[:, None])
        assert np.all(out["pseudo_coords"] <= hull_max[:, None])

    def test_empty_target_raises(self):
        heat, dmap = constant_target_maps()
        src = [kp(1.0, 1.0, np.arange(8.0))]
        with pytest.raises(EmptyTargetSet):
            soft_match(src, [], target_heatmap=heat, target_descriptors=dmap)

    def test_match_fields(self):
        heat, dmap = constant_target_maps()
        rng = np.random.default_rng(13)
        tgt = [kp(4.0, 4.0, rng.standard_normal(8))]
        src = [kp(2.0, 2.0, rng.standard_normal(8), score=0.7)]
        m = soft_match(src, tgt, target_heatmap=heat, target_descriptors=dmap)[0]
        assert m.score_in is None and m.weight is None
        assert 0.0 <= m.score_m <= 1.0
        scored = m.with_inlier_score(0.5)
        expected = m.src.score * m.pseudo_tgt.score * m.score_m * 0.5
        assert scored.weight == pytest.approx(expected, abs=1e-9)


class TestMutualNN:
    def test_identity_pairing(self):
        rng = np.random.default_rng(14)
        descs = rng.standard_normal((5, 8))
        descs /= np.linalg.norm(descs, axis=1, keepdims=True)
        kps = [kp(i, i, d) for i, d in enumerate(descs)]
        assert mutual_nn(kps, kps) == [(i, i) for i in range(5)]

    def test_non_mutual_excluded(self):
        sim = np.array([[0.9, 0.0, 0.0], [0.95, 0.1, 0.0], [0.0, 0.0, 0.5]])
        # source 0's best is target 0, but target 0's best source is 1
        expected = mutual_nn_brute(sim)
        assert (0, 0) not in expected
        assert (1, 0) in expected

    def test_matches_brute_force(self):
        rng = np.random.default_rng(15)
        for trial in range(10):
            a = rng.standard_normal((6, 8))
            b = rng.standard_normal((7, 8))
            a /= np.linalg.norm(a, axis=1, keepdims=True)
            b /= np.linalg.norm(b, axis=1, keepdims=True)
            kps_a = [kp(i, 0, d) for i, d in enumerate(a)]
            kps_b = [kp(i, 1, d) for i, d in enumerate(b)]
            assert mutual_nn(kps_a, kps_b, "dot") == mutual_nn_brute(a @ b.T)
            assert mutual_nn(kps_a, kps_b, "zncc") == mutual_nn_brute(
                zncc_matrix(a, b)
            )

    def test_empty_inputs(self):
        assert mutual_nn([], []) == []

    def test_partial_matching_property(self):
        rng = np.random.default_rng(16)
        a = rng.standard_normal((10, 8))
        b = rng.standard_normal((9, 8))
        pairs = mutual_nn(a / np.linalg.norm(a, axis=1, keepdims=True),
                          b / np.linalg.norm(b, axis=1, keepdims=True))
        assert len({i for i, _ in pairs}) == len(pairs)
        assert len({j for _, j in pairs}) == len(pairs)
