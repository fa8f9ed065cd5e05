import itertools
import math

import numpy as np
import pytest

from flowlab import rng as rng_mod
from flowlab.metrics import (
    coupled_w2_upper,
    operator_norm,
    operator_norm_symmetric,
    w2_empirical,
)


def w2_bruteforce(x, y):
    # exact squared-cost assignment by enumeration; n <= 7 only
    n = len(x)
    best = math.inf
    for perm in itertools.permutations(range(n)):
        cost = sum(float(np.sum((x[i] - y[j]) ** 2)) for i, j in enumerate(perm))
        best = min(best, cost)
    return math.sqrt(best / n)


def gaussian_w2(m0, s0, m1, s1, d):
    # closed form for isotropic Gaussians
    return math.sqrt(float(np.sum((np.asarray(m0) - np.asarray(m1)) ** 2)) + d * (s0 - s1) ** 2)


class TestW2Empirical:
    def test_identical_clouds(self):
        x = rng_mod.stream(0, "w2").normal(size=(50, 3))
        assert w2_empirical(x, x.copy()).value == pytest.approx(0.0, abs=1e-12)

    def test_pure_shift(self):
        x = rng_mod.stream(1, "w2").normal(size=(64, 2))
        shift = np.array([3.0, -1.0])
        res = w2_empirical(x, x + shift)
        assert res.value == pytest.approx(float(np.linalg.norm(shift)), rel=1e-12)
        assert res.method == "exact"

    @pytest.mark.parametrize("seed", range(4))
    def test_matches_bruteforce_on_tiny_clouds(self, seed):
        rng = rng_mod.stream(seed, "w2-brute")
        x = rng.normal(size=(6, 2))
        y = rng.normal(size=(6, 2)) + 0.5
        assert w2_empirical(x, y).value == pytest.approx(w2_bruteforce(x, y), rel=1e-12)

    def test_converges_to_gaussian_closed_form(self):
        rng = rng_mod.stream(2, "w2-gauss")
        n, d = 2000, 2
        x = 0.5 * rng.normal(size=(n, d))
        y = 0.8 * rng.normal(size=(n, d)) + np.array([1.0, 0.0])
        expected = gaussian_w2([0.0, 0.0], 0.5, [1.0, 0.0], 0.8, d)
        assert w2_empirical(x, y).value == pytest.approx(expected, rel=0.05)

    def test_sinkhorn_close_to_exact_with_gap_bound(self):
        rng = rng_mod.stream(3, "w2-sink")
        x = rng.normal(size=(300, 2))
        y = rng.normal(size=(300, 2)) + 0.7
        exact = w2_empirical(x, y, method="exact")
        sink = w2_empirical(x, y, method="sinkhorn")
        assert sink.entropic_gap_bound is not None
        # the gap bound lives in squared units; the plan cost dominates the optimum
        assert sink.value**2 <= exact.value**2 + sink.entropic_gap_bound + 1e-9
        assert sink.value >= exact.value - 0.05 * exact.value

    def test_auto_switches_to_sinkhorn_above_cap(self):
        rng = rng_mod.stream(4, "w2-cap")
        x = rng.normal(size=(80, 1))
        y = rng.normal(size=(90, 1))
        res = w2_empirical(x, y, method="auto", exact_cap=64)
        assert res.method == "sinkhorn"
        assert res.n0 == 80 and res.n1 == 90

    def test_rejects_dimension_mismatch(self):
        with pytest.raises(ValueError):
            w2_empirical(np.zeros((4, 2)), np.zeros((4, 3)))


class TestCoupledUpper:
    def test_rms_formula(self):
        x = np.array([[0.0, 0.0], [1.0, 1.0]])
        y = np.array([[3.0, 4.0], [1.0, 1.0]])
        # row distances are 5 and 0
        assert coupled_w2_upper(x, y) == pytest.approx(math.sqrt(12.5), rel=1e-14)

    def test_upper_bounds_empirical_w2(self):
        rng = rng_mod.stream(5, "coupled")
        x = rng.normal(size=(128, 3))
        y = x + 0.3 * rng.normal(size=(128, 3))
        assert coupled_w2_upper(x, y) >= w2_empirical(x, y).value - 1e-12

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValueError):
            coupled_w2_upper(np.zeros((4, 2)), np.zeros((5, 2)))


class TestOperatorNorm:
    @pytest.mark.parametrize("d", [2, 3, 17])
    def test_matches_numpy_spectral_norm(self, d):
        mats = rng_mod.stream(6, "opnorm", d).normal(size=(5, d, d))
        expected = [np.linalg.norm(m, 2) for m in mats]
        np.testing.assert_allclose(operator_norm(mats), expected, rtol=1e-8)

    def test_power_and_svd_agree(self):
        mats = rng_mod.stream(7, "opnorm").normal(size=(4, 6, 6))
        np.testing.assert_allclose(
            operator_norm(mats, method="power"),
            operator_norm(mats, method="svd"),
            rtol=1e-8,
        )

    def test_single_matrix_and_symmetric(self):
        m = np.array([[2.0, 0.0], [0.0, -3.0]])
        assert operator_norm(m) == pytest.approx(3.0, rel=1e-12)
        assert operator_norm_symmetric(m) == pytest.approx(3.0, rel=1e-12)

    def test_symmetric_matches_general_on_symmetric_input(self):
        a = rng_mod.stream(8, "opnorm-sym").normal(size=(3, 5, 5))
        sym = 0.5 * (a + a.transpose(0, 2, 1))
        np.testing.assert_allclose(
            operator_norm_symmetric(sym), operator_norm(sym), rtol=1e-9
        )
