from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import minimize

from oracles import centerline_distances as brute_distances
from oracles import mutual_nn_offset, point_segment_distance
from roadreg.errors import DegenerateSegment, EmptyInput, NoMatches, TooFewSamples, ZeroVariance
from roadreg.metrics import (
    CenterlineSet,
    centerline_distances,
    elevation_correlation,
    fit_mirrored_normal,
    intersection_offset,
    point_to_segment_distance,
    simplify_polyline,
)

coord = st.floats(-100, 100, allow_nan=False)


class TestPointToSegment:
    @pytest.mark.parametrize(
        "p, seg, want",
        [((0, 1), ((0, 0), (2, 0)), 1.0), ((5, 0), ((0, 0), (2, 0)), 3.0), ((1, 1), ((0, 0), (2, 2)), 0.0)],
    )
    def test_examples(self, p, seg, want):
        assert point_to_segment_distance(p, seg) == pytest.approx(want, abs=1e-12)

    def test_degenerate(self):
        with pytest.raises(DegenerateSegment):
            point_to_segment_distance((0, 0), ((1, 1), (1, 1)))

    @given(coord, coord, coord, coord, coord, coord, st.floats(0, 2 * math.pi), coord, coord)
    def test_swap_and_rigid_invariance(self, px, py, ax, ay, bx, by, th, tx, ty):
        if math.hypot(bx - ax, by - ay) < 1e-3:
            return
        d = point_to_segment_distance((px, py), ((ax, ay), (bx, by)))
        assert point_to_segment_distance((px, py), ((bx, by), (ax, ay))) == pytest.approx(d, abs=1e-9)
        c, s = math.cos(th), math.sin(th)

        def m(x, y):
            return (c * x - s * y + tx, s * x + c * y + ty)

        moved = point_to_segment_distance(m(px, py), (m(ax, ay), m(bx, by)))
        assert moved == pytest.approx(d, abs=1e-9)
        assert d == pytest.approx(point_segment_distance((px, py), (ax, ay), (bx, by)), abs=1e-9)


class TestCenterlineDistances:
    def test_on_line(self):
        cl = CenterlineSet([((0, 0), (10, 0))])
        np.testing.assert_array_equal(centerline_distances(np.c_[np.linspace(0, 10, 11), np.zeros(11)], cl), 0)

    def test_uniform_offset(self):
        cl = CenterlineSet([((0, 0), (10, 0)), ((10, 0), (20, 0))])
        np.testing.assert_allclose(centerline_distances(np.c_[np.linspace(0, 20, 30), np.full(30, 2.0)], cl), 2.0)

    def test_empty(self):
        with pytest.raises(EmptyInput):
            centerline_distances(np.zeros((0, 2)), CenterlineSet([((0, 0), (1, 0))]))

    def test_zero_length_rejected(self):
        with pytest.raises(DegenerateSegment):
            CenterlineSet([((0, 0), (0, 0))])

    @pytest.mark.parametrize("m", [50, 400])
    def test_matches_brute_force(self, rng, m):
        # 400 segments takes the pruned path
        pts = rng.uniform(0, 100, (100, 2))
        segs = rng.uniform(0, 100, (m, 2, 2))
        got = centerline_distances(pts, CenterlineSet(segs))
        np.testing.assert_allclose(got, brute_distances(pts, segs), rtol=0, atol=1e-12)


class TestMirroredNormal:
    def test_constant(self):
        s = fit_mirrored_normal([1.0] * 5)
        assert (s.mu_hat, s.sigma_hat, s.tau_outlier) == (0.0, 1.0, 2.0)

    def test_zeros(self):
        s = fit_mirrored_normal([0, 0, 0])
        assert s.sigma_hat == 0 and s.tau_outlier == 0

    def test_closed_form(self):
        assert fit_mirrored_normal([1, 2, 2, 3]).sigma_hat == pytest.approx(math.sqrt(4.5), abs=1e-12)

    def test_numeric_likelihood_agrees(self, rng):
        d = np.abs(rng.normal(0, 1.7, 300))
        sym = np.r_[d, -d]

        def nll(theta):
            mu, log_s = theta
            return len(sym) * log_s + ((sym - mu) ** 2).sum() / (2 * math.exp(2 * log_s))

        res = minimize(nll, x0=[0.3, 0.0], method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 5000})
        s = fit_mirrored_normal(d)
        assert res.x[0] == pytest.approx(0.0, abs=1e-5)
        assert math.exp(res.x[1]) == pytest.approx(s.sigma_hat, rel=1e-5)

    def test_too_few(self):
        with pytest.raises(TooFewSamples):
            fit_mirrored_normal([1.0])

    @given(st.lists(st.floats(0, 1e3), min_size=2, max_size=50), st.floats(0.01, 100))
    def test_mu_zero_and_scale_equivariance(self, d, c):
        a = fit_mirrored_normal(d)
        b = fit_mirrored_normal(np.asarray(d) * c)
        assert a.mu_hat == 0.0
        assert a.tau_outlier == a.mu_hat + 2 * a.sigma_hat
        assert b.sigma_hat == pytest.approx(c * a.sigma_hat, rel=1e-12, abs=1e-300)
        assert b.tau_outlier == pytest.approx(c * a.tau_outlier, rel=1e-12, abs=1e-300)

    def test_summaries(self):
        s = fit_mirrored_normal([1.0, 3.0])
        assert s.raw_mean == 2.0
        assert s.halfnormal_mean == pytest.approx(math.sqrt(5) * math.sqrt(2 / math.pi))
        assert s.outlier_count == 0


class TestIntersectionOffset:
    def test_identical(self, rng):
        p = rng.uniform(0, 100, (12, 2))
        assert intersection_offset(p, p) == (0.0, 12)

    def test_uniform_shift(self, rng):
        p = np.array([[0, 0], [50, 0], [0, 50], [50, 50]], float)
        e, k = intersection_offset(p + (3, 4), p, delta=10)
        assert e == pytest.approx(5.0) and k == 4

    def test_partial(self):
        r = np.random.default_rng(8)
        m = np.arange(10)[:, None] * np.array([[40.0, 0.0]])
        near = m[:7] + r.uniform(-3, 3, (7, 2))
        far = m[7:] + np.array([0.0, 30.0])
        p = np.concatenate([near, far])
        e, k = intersection_offset(p, m, delta=10)
        want, kk = mutual_nn_offset(p, m, 10)
        assert k == kk == 7 and e == pytest.approx(want, abs=1e-12)

    def test_no_matches(self):
        with pytest.raises(NoMatches):
            intersection_offset([[0, 0]], [[100, 100]], delta=5)

    @given(st.integers(0, 100_000))
    def test_oracle_and_symmetry(self, seed):
        r = np.random.default_rng(seed)
        a = r.uniform(0, 50, (int(r.integers(1, 15)), 2))
        b = r.uniform(0, 50, (int(r.integers(1, 15)), 2))
        want, k = mutual_nn_offset(a, b, 10.0)
        if want is None:
            with pytest.raises(NoMatches):
                intersection_offset(a, b, 10.0)
            return
        e, m = intersection_offset(a, b, 10.0)
        e2, m2 = intersection_offset(b, a, 10.0)
        assert m == m2 == k
        assert e == pytest.approx(want, abs=1e-12) and e2 == pytest.approx(e, abs=1e-12)


class TestCorrelation:
    def test_examples(self, rng):
        x = rng.normal(size=50)
        assert elevation_correlation(x, x) == pytest.approx(1.0)
        assert elevation_correlation(x - x.mean(), -(x - x.mean())) == pytest.approx(-1.0)
        assert elevation_correlation(2 * x + 5, x) == pytest.approx(1.0)

    def test_zero_variance(self):
        with pytest.raises(ZeroVariance):
            elevation_correlation([1, 1, 1], [1, 2, 3])

    def test_matches_numpy(self, rng):
        x, y = rng.normal(size=(2, 200))
        assert elevation_correlation(x, y) == pytest.approx(np.corrcoef(x, y)[0, 1], abs=1e-12)


def test_simplify_keeps_corner():
    line = np.array([[0, 0], [1, 0.1], [2, 0], [3, 0], [3, 1], [3, 2]], float)
    out = simplify_polyline(line, 0.5)
    np.testing.assert_array_equal(out, [[0, 0], [3, 0], [3, 2]])
