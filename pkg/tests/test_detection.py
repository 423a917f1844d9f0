import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import monte_carlo_bev_iou

from objstereo.autodiff import ParamStore, backward, check_function, constant, leaf
from objstereo.detection import (
    DetectionLabelSet,
    ObjectBox,
    assign_anchors,
    average_precision,
    bev_iou,
    decode,
    decode_output,
    encode,
    encode_target,
    generate_anchors,
    header_forward,
    header_loss,
    init_header,
    iou_3d,
    iou_matrix,
    nms,
    total_loss,
)
from objstereo.detection.anchors import IGNORE, NEGATIVE, POSITIVE
from objstereo.detection.header import yaw_from_sincos
from objstereo.detection.rpn import RpnOutput, init_rpn, proposals, rpn_forward, rpn_loss
from objstereo.geometry import Camera
from objstereo.roi import Roi3D


def _box(x=0.0, z=10.0, w=2.0, l=4.0, yaw=0.0, conf=1.0, y=0.0, h=1.5):
    return ObjectBox((x, y, z), (w, h, l), yaw, conf)


box_strategy = st.builds(
    _box,
    x=st.floats(-3, 3), z=st.floats(5, 11), w=st.floats(0.5, 3), l=st.floats(0.5, 5),
    yaw=st.floats(-math.pi, math.pi),
)


class TestAnchors:
    def test_count(self):
        assert len(generate_anchors((48, 64, 64), (8, 8, 8), [(8, 8, 8)])) == 384

    def test_two_extents_double(self):
        assert len(generate_anchors((48, 64, 64), (8, 8, 8), [(8, 8, 8), (4, 4, 4)])) == 768

    def test_centres_inside(self):
        a = generate_anchors((16, 24, 32), (8, 8, 8), [(8, 8, 8)])
        assert np.all(a.centers >= 0)
        assert np.all(a.centers <= np.array([31, 23, 15]))

    def test_ordering_d_major(self):
        a = generate_anchors((16, 8, 16), (8, 8, 8), [(1, 1, 1), (2, 2, 2)])
        assert a.centers[0, 2] < a.centers[-1, 2]
        assert np.array_equal(a.extents[:2], [[1, 1, 1], [2, 2, 2]])
        assert a.centers[2, 0] > a.centers[0, 0]  # u advances after the extent index

    def test_empty_extents(self):
        with pytest.raises(ValueError, match="empty"):
            generate_anchors((8, 8, 8), (8, 8, 8), [])

    def test_identity_positive_disjoint_negative(self):
        anchors = np.array([[0, 0, 0, 1, 1, 1], [5, 5, 5, 6, 6, 6.0]])
        labels, match = assign_anchors(anchors, anchors[:1])
        assert labels.tolist() == [POSITIVE, NEGATIVE]
        assert match[0] == 0

    def test_third_overlap_ignored(self):
        a = np.array([[0, 0, 0, 1, 1, 1.0]])
        b = np.array([[0.5, 0, 0, 1.5, 1, 1.0]])
        assert iou_matrix(a, b)[0, 0] == pytest.approx(1 / 3)
        other = np.array([[9, 9, 9, 10, 10, 10.0]])
        labels, _ = assign_anchors(np.vstack([a, other, b]), b)
        assert labels[0] == NEGATIVE  # 1/3 sits below the 0.35 negative threshold

    def test_ignore_band(self):
        a = np.array([[0, 0, 0, 1, 1, 1.0]])
        b = np.array([[0.4, 0, 0, 1.4, 1, 1.0]])  # IoU 0.6 / 1.4
        assert 0.35 <= iou_matrix(a, b)[0, 0] < 0.5
        labels, _ = assign_anchors(np.vstack([a, b]), b)
        assert labels.tolist() == [IGNORE, POSITIVE]

    def test_force_match(self):
        anchors = np.array([[0, 0, 0, 2, 2, 2.0], [4, 4, 4, 6, 6, 6.0]])
        gt = np.array([[0, 0, 0, 1, 1, 1.0]])  # IoU 1/8 with the first anchor
        labels, match = assign_anchors(anchors, gt)
        assert labels[0] == POSITIVE and match[0] == 0

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_encode_decode_identity(self, seed):
        rng = np.random.default_rng(seed)
        lo = rng.uniform(0, 20, (5, 3))
        boxes = np.hstack([lo, lo + rng.uniform(0.5, 10, (5, 3))])
        c = rng.uniform(0, 20, (5, 3))
        e = rng.uniform(1, 8, (5, 3))
        np.testing.assert_allclose(decode(encode(boxes, c, e), c, e), boxes, atol=1e-6)


class TestRpn:
    def _setup(self, seed=0):
        rng = np.random.default_rng(seed)
        store = ParamStore(dtype=np.float64)
        init_rpn(store, rng, 2, 1, (2, 2, 2), hidden=3)
        anchors = generate_anchors((4, 4, 4), (2, 2, 2), [(2, 2, 2)])
        return store, anchors, rng.standard_normal((2, 4, 4, 4))

    def test_zero_offsets_decode_to_anchor(self):
        a = generate_anchors((8, 8, 8), (4, 4, 4), [(3, 2, 1)])
        np.testing.assert_allclose(decode(np.zeros((len(a), 6)), a.centers, a.extents), a.boxes())

    def test_decoded_boxes_positive(self):
        a = generate_anchors((8, 8, 8), (4, 4, 4), [(3, 2, 1)])
        off = np.random.default_rng(0).normal(0, 5, (len(a), 6))
        b = decode(off, a.centers, a.extents)
        assert np.all(b[:, 3:] > b[:, :3])

    def test_forward_shapes(self):
        store, anchors, vol = self._setup()
        out = rpn_forward(vol, store, (2, 2, 2))
        assert out.logits.shape == (1, 1, 2, 2, 2)
        assert out.offsets.shape == (1, 6, 2, 2, 2)

    def test_head_gradient(self):
        store, anchors, vol = self._setup(1)
        gt = np.array([[0.2, 0.5, 0.3, 2.4, 2.2, 2.6]])
        labels, match = assign_anchors(anchors.boxes(), gt)
        names = store.names()

        def fn(v, *ps):
            return rpn_loss(rpn_forward(v, dict(zip(names, ps)), (2, 2, 2)), labels, match, anchors, gt)

        assert check_function(fn, [vol] + [store[k].data for k in names], richardson=True).passed

    def _two_anchor(self, logits, offsets):
        anchors = generate_anchors((1, 1, 2), (1, 1, 1), [(1, 1, 1)])
        out = RpnOutput(leaf(np.asarray(logits, float).reshape(1, 1, 1, 1, 2)),
                        leaf(np.asarray(offsets, float).T.reshape(1, 6, 1, 1, 2)))
        return anchors, out

    def test_hand_built_two_anchors(self):
        gt = np.array([[-0.3, -0.5, -0.5, 0.7, 0.5, 0.5]])  # anchor 0 box shifted by 0.2 in u
        anchors, out = self._two_anchor([0.5, -1.0], np.zeros((2, 6)))
        labels = np.array([POSITIVE, NEGATIVE])
        match = np.array([0, -1])
        loss = rpn_loss(out, labels, match, anchors, gt).data[0]
        bce = 0.5 * (math.log1p(math.exp(-0.5)) + math.log1p(math.exp(-1.0)))
        sl1 = 0.5 * 0.2 ** 2  # only the u-centre offset is non-zero
        assert loss == pytest.approx(bce + sl1, abs=1e-12)

    def test_perfect_prediction(self):
        gt = np.array([[-0.3, -0.5, -0.5, 0.7, 0.5, 0.5]])
        anchors, _ = self._two_anchor([0, 0], np.zeros((2, 6)))
        t = encode(gt, anchors.centers[:1], anchors.extents[:1])[0]
        _, out = self._two_anchor([60.0, -60.0], np.vstack([t, np.zeros(6)]))
        loss = rpn_loss(out, np.array([POSITIVE, NEGATIVE]), np.array([0, -1]), anchors, gt).data[0]
        assert loss < 1e-20

    def test_all_ignore(self):
        anchors, out = self._two_anchor([0.3, -0.2], np.ones((2, 6)))
        loss = rpn_loss(out, np.array([IGNORE, IGNORE]), np.array([-1, -1]), anchors, np.zeros((0, 6)))
        assert loss.data[0] == 0.0
        backward(loss)
        assert np.all(out.logits.grad == 0) and np.all(out.offsets.grad == 0)

    def test_proposals_sorted(self):
        anchors, out = self._two_anchor([-1.0, 2.0], np.zeros((2, 6)))
        boxes, scores = proposals(out, anchors, top_k=2)
        assert scores.tolist() == [2.0, -1.0]
        np.testing.assert_allclose(boxes[0], anchors.boxes()[1])


class TestHeader:
    cam = Camera()

    def test_yaw_identities(self):
        assert yaw_from_sincos(0.0, 1.0) == 0.0
        assert yaw_from_sincos(1.0, 0.0) == pytest.approx(math.pi / 2)

    def test_sizes_positive(self):
        raw = np.full(9, -50.0)
        box = decode_output(raw, Roi3D((10, 10, 10), (20, 20, 20)), self.cam)
        assert min(box.size) > 0

    def test_encode_decode_round_trip(self):
        box = ObjectBox((1.0, 0.8, 12.0), (1.7, 1.4, 4.1), 0.7)
        roi = Roi3D((120, 60, 6), (170, 90, 12))
        t = encode_target(box, roi, self.cam)
        t[8] = 30.0
        back = decode_output(t, roi, self.cam)
        np.testing.assert_allclose(back.center, box.center, atol=1e-9)
        np.testing.assert_allclose(back.size, box.size, atol=1e-9)
        assert back.yaw == pytest.approx(box.yaw)

    def _loss(self, raw, target, positive=True):
        return header_loss(constant(np.asarray(raw, float)), target, positive).data[0]

    def test_zero_residual(self):
        t = np.array([0.1, -0.2, 0.0, 0.1, 0.0, 0.0, 0.0, 1.0, 1.0])
        raw = t.copy()
        raw[8] = 60.0
        assert self._loss(raw, t) < 1e-20

    def test_heading_flip_costs_two(self):
        t = np.array([0, 0, 0, 0, 0, 0, math.sin(math.pi), math.cos(math.pi), 1.0])
        raw = np.array([0, 0, 0, 0, 0, 0, 0.0, 1.0, 60.0])
        assert self._loss(raw, t) == pytest.approx(2.0, abs=1e-12)

    def test_yaw_representative_invariance(self):
        box = ObjectBox((1.0, 0.8, 12.0), (1.7, 1.4, 4.1), 0.7)
        alt = ObjectBox((1.0, 0.8, 12.0), (1.7, 1.4, 4.1), 0.7 + 2 * math.pi)
        roi = Roi3D((120, 60, 6), (170, 90, 12))
        np.testing.assert_allclose(encode_target(box, roi, self.cam), encode_target(alt, roi, self.cam), atol=1e-12)

    def test_negative_only_confidence(self):
        t = np.zeros(9)
        raw = np.full(9, 5.0)
        raw[8] = 0.0
        assert self._loss(raw, t, positive=False) == pytest.approx(math.log(2.0))

    def test_forward_shape_check(self):
        store = ParamStore(dtype=np.float64)
        init_header(store, np.random.default_rng(0), 3, s=8, hidden=(2, 2), fc=4)
        assert header_forward(np.zeros((3, 8, 8, 8)), store).shape == (9,)
        with pytest.raises(ValueError, match="header expects"):
            header_forward(np.zeros((2, 8, 8, 8)), store)


class TestTotalLoss:
    def test_weights(self):
        assert total_loss(1.0, 1.0, 1.0).data[0] == 4.0

    def test_zero_terms(self):
        assert total_loss(3.25, 0.0, 0.0).data[0] == 3.25

    def test_gradient_split(self):
        parts = [leaf(np.array([0.5])) for _ in range(3)]
        backward(total_loss(*parts))
        assert [p.grad[0] for p in parts] == [1.0, 1.0, 2.0]

    def test_non_finite_named(self):
        with pytest.raises(ValueError, match="l_rpn"):
            total_loss(1.0, float("nan"), 1.0)


class TestIou:
    def test_identity(self):
        b = _box(yaw=0.4)
        assert bev_iou(b, b) == pytest.approx(1.0)
        assert iou_3d(b, b) == pytest.approx(1.0)

    def test_disjoint(self):
        assert bev_iou(_box(x=0), _box(x=50)) == 0.0

    def test_unit_squares_offset(self):
        a = ObjectBox((0, 0, 0.0 + 10), (1, 1, 1), 0.0)
        b = ObjectBox((0.5, 0, 10.0), (1, 1, 1), 0.0)
        assert bev_iou(a, b) == pytest.approx(1 / 3, abs=1e-12)
        assert monte_carlo_bev_iou(a, b) == pytest.approx(1 / 3, abs=2e-3)

    def test_degenerate(self):
        assert bev_iou(_box(w=0.0), _box()) == 0.0

    def test_3d_vertical_overlap(self):
        a, b = _box(y=0.0), _box(y=0.75)
        assert iou_3d(a, b) == pytest.approx(0.75 / 2.25)

    @settings(max_examples=60, deadline=None)
    @given(box_strategy, box_strategy)
    def test_symmetric_bounded(self, a, b):
        x, y = bev_iou(a, b), bev_iou(b, a)
        assert abs(x - y) <= 1e-12
        assert 0.0 <= x <= 1.0

    @settings(max_examples=60, deadline=None)
    @given(box_strategy, box_strategy, st.floats(-math.pi, math.pi))
    def test_rotation_invariant(self, a, b, phi):
        def rot(box):
            x, y, z = box.center
            c, s = math.cos(phi), math.sin(phi)
            # yaw rotates (x, z) clockwise in the BEV frame used by footprint()
            return ObjectBox((c * x + s * (z - 10), y, -s * x + c * (z - 10) + 10), box.size, box.yaw + phi)

        assert bev_iou(rot(a), rot(b)) == pytest.approx(bev_iou(a, b), abs=1e-9)


class TestNms:
    def test_single(self):
        b = _box()
        assert nms([b]) == [b]

    def test_identical(self):
        a, b = _box(conf=0.8), _box(conf=0.9)
        assert nms([a, b]) == [b]

    def test_disjoint(self):
        a, b = _box(x=0, conf=0.5), _box(x=40, conf=0.6)
        assert len(nms([a, b])) == 2

    @settings(max_examples=40, deadline=None)
    @given(st.lists(box_strategy, min_size=1, max_size=8), st.floats(0.05, 0.9))
    def test_subset_and_separated(self, boxes, thr):
        for i, b in enumerate(boxes):
            b.confidence = (i * 7 % 10) / 10
        kept = nms(boxes, thr)
        assert all(any(k is b for b in boxes) for k in kept)
        for i in range(len(kept)):
            for j in range(i + 1, len(kept)):
                assert bev_iou(kept[i], kept[j]) <= thr


class TestAveragePrecision:
    def _labels(self, boxes, tag="easy"):
        return DetectionLabelSet(boxes, [tag] * len(boxes))

    def test_perfect(self):
        gts = [_box(x=0), _box(x=8)]
        ap = average_precision([[_box(x=0, conf=0.9), _box(x=8, conf=0.8)]], [self._labels(gts)])
        assert ap["easy"] == 1.0

    def test_no_detections(self):
        ap = average_precision([[]], [self._labels([_box()])])
        assert ap["easy"] == 0.0

    def test_true_then_false(self):
        ap = average_precision([[_box(conf=0.9), _box(x=30, conf=0.4)]], [self._labels([_box()])])
        assert ap["easy"] == 1.0

    def test_false_then_true(self):
        # precision 0.5 at full recall on every recall point
        ap = average_precision([[_box(x=30, conf=0.9), _box(conf=0.4)]], [self._labels([_box()])])
        assert ap["easy"] == pytest.approx(0.5)

    def test_empty_labels_absent(self):
        ap = average_precision([[_box()]], [self._labels([])])
        assert ap == {"easy": None, "moderate": None, "hard": None}

    def test_harder_boxes_ignored_in_easy(self):
        labels = DetectionLabelSet([_box(x=0), _box(x=8)], ["easy", "hard"])
        ap = average_precision([[_box(x=8, conf=0.9), _box(x=0, conf=0.5)]], [labels])
        assert ap["easy"] == 1.0
        assert ap["hard"] == 1.0

    def test_3d_mode(self):
        ap = average_precision([[_box(y=1.0)]], [self._labels([_box()])], mode="3d")
        assert ap["easy"] == 0.0
