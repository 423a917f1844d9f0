import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from objstereo.autodiff import ParamStore, apply, check_function, leaf
from objstereo.volume import (
    aggregate,
    build_cost_volume,
    cost_volume_net,
    extract_features,
    init_aggregate,
    init_features,
    init_refine,
    refine_cost_volume,
)


def _store(refine_out=4, identity=False, dtype=np.float64, seed=0):
    rng = np.random.default_rng(seed)
    s = ParamStore(dtype=dtype)
    init_features(s, rng, 16)
    init_refine(s, rng, 32, refine_out, identity=identity)
    init_aggregate(s, rng, refine_out)
    return s


def _shift_oracle(fl, fr, D):
    C, H, W = fl.shape
    out = np.zeros((2 * C, D, H, W))
    for d in range(D):
        out[:C, d] = fl
        for u in range(d, W):
            out[C:, d, :, u] = fr[:, :, u - d]
    return out


class TestFeatures:
    def test_constant_image_constant_features(self):
        f = extract_features(np.full((6, 9), 0.3), _store()).data
        assert np.allclose(f, f[:, :1, :1], atol=1e-12)

    def test_shared_weights(self):
        img = np.random.default_rng(0).random((8, 10))
        s = _store()
        a = extract_features(img, s, "left").data
        b = extract_features(img, s, "right").data
        assert a.tobytes() == b.tobytes()

    def test_sixteen_channels_full_resolution(self):
        assert extract_features(np.zeros((5, 7)), _store()).shape == (16, 5, 7)

    def test_non_finite_rejected(self):
        img = np.zeros((4, 4))
        img[1, 1] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            extract_features(img, _store())


class TestCostVolume:
    def test_hand_enumeration(self):
        fl = np.array([[[1.0, 2.0, 3.0]]])
        fr = np.array([[[4.0, 5.0, 6.0]]])
        v = build_cost_volume(fl, fr, 2).data
        np.testing.assert_array_equal(v[:, 0, 0], [[1, 2, 3], [4, 5, 6]])
        np.testing.assert_array_equal(v[:, 1, 0], [[1, 2, 3], [0, 4, 5]])

    def test_equal_features_zero_shift(self):
        f = np.random.default_rng(0).standard_normal((3, 4, 5))
        v = build_cost_volume(f, f, 3).data
        np.testing.assert_array_equal(v[:3, 0], v[3:, 0])

    def test_channel_count(self):
        f = np.zeros((16, 2, 6))
        assert build_cost_volume(f, f, 4).shape == (32, 4, 2, 6)

    def test_d_max_above_width_rejected(self):
        f = np.zeros((1, 2, 3))
        with pytest.raises(ValueError, match="exceeds"):
            build_cost_volume(f, f, 4)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 3), st.integers(1, 4), st.integers(2, 9), st.data())
    def test_shift_consistency(self, C, H, W, data):
        D = data.draw(st.integers(1, W))
        rng = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
        fl, fr = rng.standard_normal((2, C, H, W))
        v = build_cost_volume(fl, fr, D).data
        assert v.tobytes() == _shift_oracle(fl, fr, D).tobytes()

    def test_matching_minimum_at_true_disparity(self):
        # identity features: the image itself; integer disparity field with a step
        rng = np.random.default_rng(5)
        H, W, D = 6, 40, 8
        right = rng.random((H, W + D))
        gt = np.where(np.arange(W) < 20, 3, 5)[None].repeat(H, 0)
        left = np.array([[right[v, u - gt[v, u] + D] for u in range(W)] for v in range(H)])
        right = right[:, D:]
        v = build_cost_volume(left[None], right[None], D).data
        cost = np.abs(v[0] - v[1])
        ok = np.arange(W)[None] >= D  # fully inside the right image
        best = cost.argmin(axis=0)
        assert np.all(best[ok.repeat(H, 0)] == gt[ok.repeat(H, 0)])

    def test_fused_first_layer_matches_unfused(self):
        rng = np.random.default_rng(1)
        s = _store(refine_out=4)
        left, right = rng.random((2, 7, 20))
        fused_v, fused_a = cost_volume_net(left, right, s, 6)
        fl = extract_features(left, s)
        fr = extract_features(right, s)
        ref = refine_cost_volume(build_cost_volume(fl, fr, 6), s)
        np.testing.assert_allclose(fused_v.data, ref.data, atol=1e-10)
        np.testing.assert_allclose(fused_a.data, aggregate(ref, s).data, atol=1e-10)

    def test_window_matches_full_volume(self):
        rng = np.random.default_rng(2)
        s = _store(refine_out=4)
        left, right = rng.random((2, 6, 24))
        full, _ = cost_volume_net(left, right, s, 5)
        win, _ = cost_volume_net(left, right, s, 5, u_offset=8, width=10)
        # interior columns of the window see the same receptive field
        np.testing.assert_allclose(win.data[..., 2:-2], full.data[..., 10:16], atol=1e-10)


class TestRefineAggregate:
    def test_identity_stack(self):
        s = _store(refine_out=32, identity=True)
        v = np.abs(np.random.default_rng(0).standard_normal((32, 3, 4, 5)))  # relu-invariant
        np.testing.assert_allclose(refine_cost_volume(v, s).data, v, atol=1e-12)

    def test_zero_volume_bias_only(self):
        s = _store(refine_out=4)
        s["refine.1.b"].data[:] = [0.5, -1.0, 2.0, 0.0]
        out = refine_cost_volume(np.zeros((32, 3, 4, 5)), s).data
        assert np.allclose(out, out[:, :1, :1, :1])
        np.testing.assert_allclose(out[:, 0, 0, 0], [0.5, 0.0, 2.0, 0.0])

    def test_keeps_extents(self):
        s = _store(refine_out=4)
        assert refine_cost_volume(np.zeros((32, 3, 4, 5)), s).shape == (4, 3, 4, 5)

    def test_identity_reduction(self):
        s = ParamStore(dtype=np.float64)
        w = np.zeros((1, 1, 3, 3, 3))
        w[0, 0, 1, 1, 1] = 1.0
        s.add("agg.w", w)
        s.add("agg.b", np.zeros(1))
        v = np.random.default_rng(0).standard_normal((1, 4, 3, 5))
        a = aggregate(v, s)
        assert a.shape == (4, 3, 5)
        np.testing.assert_array_equal(a.data, v[0])

    def test_refine_gradient(self):
        s = _store(refine_out=2, seed=3)
        # shrink to a small input stack
        w0 = s["refine.0.w"].data[:, :3]
        params = {"w0": w0, "b0": s["refine.0.b"].data, "w1": s["refine.1.w"].data, "b1": s["refine.1.b"].data}

        def fn(v):
            x = apply("relu", [apply("conv3d", [v, params["w0"], params["b0"]])])
            return apply("relu", [apply("conv3d", [x, params["w1"], params["b1"]])])

        v = np.random.default_rng(4).standard_normal((3, 3, 3, 4))
        assert check_function(fn, [v]).passed

    def test_aggregate_gradient(self):
        s = _store(refine_out=2, seed=5)
        v = np.random.default_rng(6).standard_normal((2, 3, 3, 4))
        assert check_function(lambda x: aggregate(x, s), [v]).passed

    def test_outputs_finite(self):
        s = _store(refine_out=4, dtype=np.float32)
        left, right = np.random.default_rng(7).random((2, 5, 16))
        v, a = cost_volume_net(left, right, s, 8)
        assert np.all(np.isfinite(v.data)) and np.all(np.isfinite(a.data))
        assert leaf(np.zeros(1)).requires_grad
