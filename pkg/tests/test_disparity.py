import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from objstereo.autodiff import check_function, leaf
from objstereo.disparity import (
    DisparityMap,
    StereoGeometry,
    depth_metrics,
    depth_to_disparity,
    evaluate_depth,
    disparity_loss,
    disparity_to_depth,
    soft_argmax,
)


def _sa(logits):
    return soft_argmax(np.asarray(logits, dtype=np.float64)).data


class TestSoftArgmax:
    def test_saturated_logit(self):
        a = np.zeros((8, 1, 1))
        a[5] = 1000.0
        assert _sa(a)[0, 0] == pytest.approx(5.0, abs=1e-6)

    def test_uniform_centre(self):
        assert _sa(np.zeros((48, 2, 3))) == pytest.approx(23.5)

    def test_two_level(self):
        # softmax of [0, ln 3] is [1/4, 3/4]
        assert _sa(np.array([0.0, math.log(3.0)]).reshape(2, 1, 1))[0, 0] == pytest.approx(0.75, abs=1e-15)

    @settings(max_examples=40, deadline=None)
    @given(hnp.arrays(np.float64, (6, 2, 3), elements=st.floats(-50, 50, allow_nan=False)))
    def test_convex_bound(self, a):
        d = _sa(a)
        assert np.all(d >= 0) and np.all(d <= 5)

    @settings(max_examples=40, deadline=None)
    @given(hnp.arrays(np.float64, (7, 1, 4), elements=st.floats(-3, 3, allow_nan=False)))
    def test_sharpening(self, a):
        # the argmax weight grows with t; the index mean itself need not move monotonically
        from objstereo.autodiff import apply

        srt = np.sort(a, axis=0)
        unique = (srt[-1] - srt[-2]) > 1e-2
        target = a.argmax(axis=0)
        cols = np.arange(a.shape[2])
        prev = None
        for t in (1.0, 2.0, 8.0, 32.0, 1e3):
            p = apply("softmax-axis", [a * t], {"axis": 0}).data[target[0], 0, cols]
            if prev is not None:
                assert np.all(p[unique[0]] >= prev[unique[0]] - 1e-12)
            prev = p
        assert np.all(np.abs(_sa(a * 1e3) - target)[unique] < 1e-3)

    def test_loss_gradient(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((5, 3, 4))
        gt = rng.uniform(0, 4, (3, 4))
        assert check_function(lambda x: disparity_loss(soft_argmax(x), gt), [a]).passed


class TestDisparityLoss:
    def test_zero(self):
        p = leaf(np.array([[1.0, 2.0]]))
        assert disparity_loss(p, np.array([[1.0, 2.0]])).data[0] == 0.0

    def test_quadratic_branch(self):
        assert disparity_loss(leaf(np.array([[1.5]])), np.array([[2.0]])).data[0] == pytest.approx(0.125)

    def test_linear_branch(self):
        assert disparity_loss(leaf(np.array([[1.0]])), np.array([[3.0]])).data[0] == pytest.approx(1.5)

    def test_mean_over_valid(self):
        pred = leaf(np.array([[1.0, 1.0, 9.0]]))
        gt = np.array([[3.0, 1.0, 0.0]])  # last pixel invalid (zero disparity)
        assert disparity_loss(pred, gt).data[0] == pytest.approx(0.75)

    def test_no_valid_pixels(self):
        with pytest.raises(ValueError, match="no valid"):
            disparity_loss(leaf(np.zeros((1, 2))), np.zeros((1, 2)))


class TestDepth:
    g = StereoGeometry(100.0, 0.5)

    def test_formula(self):
        z, ok = disparity_to_depth(np.array([10.0]), self.g)
        assert z[0] == 5.0 and ok[0]

    def test_double_disparity_halves_depth(self):
        z1, _ = disparity_to_depth(np.array([7.0]), self.g)
        z2, _ = disparity_to_depth(np.array([14.0]), self.g)
        assert z2[0] == pytest.approx(z1[0] / 2)

    def test_zero_invalid(self):
        z, ok = disparity_to_depth(np.array([0.0, 5.0]), self.g)
        assert not ok[0] and np.isfinite(z[0])

    @settings(max_examples=50, deadline=None)
    @given(hnp.arrays(np.float64, 10, elements=st.floats(0.01, 500, allow_nan=False)))
    def test_round_trip(self, d):
        z, ok = disparity_to_depth(d, self.g)
        back, ok2 = depth_to_disparity(z, self.g)
        assert ok.all() and ok2.all()
        np.testing.assert_allclose(back, d, rtol=1e-9)

    def test_geometry_guard(self):
        with pytest.raises(ValueError):
            StereoGeometry(100.0, 0.0)

    def test_disparity_map_default_validity(self):
        m = DisparityMap(np.array([[0.0, 2.0]]))
        np.testing.assert_array_equal(m.valid, [[False, True]])


class TestDepthMetrics:
    def test_perfect(self):
        z = np.array([1.0, 2.0, 5.0])
        assert depth_metrics(z, z) == {"abs_rel": 0.0, "sq_rel": 0.0, "rmse": 0.0}

    def test_single_pixel(self):
        m = depth_metrics(np.array([1.0]), np.array([2.0]))
        assert (m["abs_rel"], m["sq_rel"], m["rmse"]) == (0.5, 0.5, 1.0)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_permutation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        z, zh = rng.uniform(1, 50, (2, 20))
        p = rng.permutation(20)
        a, b = depth_metrics(zh, z), depth_metrics(zh[p], z[p])
        for k in a:
            assert a[k] == pytest.approx(b[k], rel=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            depth_metrics(np.array([0.0]), np.array([1.0]))


class TestEvaluateDepth:
    g = StereoGeometry(100.0, 0.5)

    def test_identical(self):
        d = np.array([[5.0, 10.0]])
        assert evaluate_depth(d, d, self.g) == {"abs_rel": 0.0, "sq_rel": 0.0, "rmse": 0.0}

    def test_missing_disparity_counts_as_far(self):
        m = evaluate_depth(np.array([0.0]), np.array([1.0]), self.g)  # gt 50 m, prediction capped at 80 m
        assert m["rmse"] == pytest.approx(30.0)

    def test_far_ground_truth_excluded(self):
        m = evaluate_depth(np.array([5.0, 9.0]), np.array([5.0, 0.5]), self.g)  # second gt pixel is 100 m
        assert m["rmse"] == 0.0
