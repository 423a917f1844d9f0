"""The joint stereo + detection network: parameters, training and inference."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import ParamStore, apply, backward, constant, optimizer_step
from .detection import anchors as anc
from .detection.boxes import nms
from .detection.header import decode_output, encode_target, header_forward, header_loss, init_header
from .detection.losses import total_loss
from .detection.rpn import init_rpn, proposals, rpn_forward, rpn_loss
from .disparity import disparity_loss, soft_argmax
from .fusion import back_project, extract_roi2d, fuse
from .roi import Roi3D, roi_select
from .synth import box_to_roi
from .volume import aggregate, cost_volume_net, init_aggregate, init_features, init_refine

HALO = 8  # rows of context for exact tiled inference


def detection_channels(cfg):
    return cfg.refine_channels if cfg.input_volume == "costV" else 1


def header_channels(cfg):
    return detection_channels(cfg) + (0 if cfg.fusion == "none" else 1)


def build_params(cfg, seed=None):
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    store = ParamStore()
    init_features(store, rng, cfg.feature_channels)
    init_refine(store, rng, 2 * cfg.feature_channels, cfg.refine_channels)
    init_aggregate(store, rng, cfg.refine_channels)
    if cfg.rpn_on:
        init_rpn(store, rng, detection_channels(cfg), len(cfg.anchor_extents), cfg.anchor_strides, cfg.rpn_hidden)
    if cfg.header_on:
        init_header(store, rng, header_channels(cfg), cfg.roi_size)
    return store


def detection_input(v, a, cfg):
    if cfg.input_volume == "costV":
        return v
    return apply("reshape", [a], {"shape": (1,) + a.shape})


# ---------------------------------------------------------------- training

@dataclass
class Window:
    scene: int
    row: int
    col: int
    rows: int
    cols: int


class WindowSampler:
    """Training crops centred (with jitter) on a random labelled box."""

    def __init__(self, scenes, size, seed):
        self.scenes = scenes
        self.rows, self.cols = size
        self.rng = np.random.default_rng(seed)

    def __call__(self):
        i = int(self.rng.integers(len(self.scenes)))
        sc = self.scenes[i]
        H, W = sc.left.shape
        boxes = sc.labels.boxes if sc.labels is not None else []
        if boxes:
            b = boxes[int(self.rng.integers(len(boxes)))]
            u, v = b.center_uvd[0], b.center_uvd[1]
            u += self.rng.uniform(-0.25, 0.25) * self.cols
            v += self.rng.uniform(-0.2, 0.2) * self.rows
        else:
            u, v = self.rng.uniform(0, W), self.rng.uniform(0, H)
        r0 = int(np.clip(round(v - self.rows / 2), 0, H - self.rows))
        c0 = int(np.clip(round(u - self.cols / 2), 0, W - self.cols))
        return Window(i, r0, c0, self.rows, self.cols)


def _gt_rois(labels, camera, window, d_max, min_keep=0.5):
    """Label boxes as (u, v, d) RoIs in window coordinates, clipped to it."""
    lo = np.array([0.0, 0.0, 0.0])
    hi = np.array([window.cols - 1.0, window.rows - 1.0, d_max - 1.0])
    rois, keep = [], []
    for k, b in enumerate(labels.boxes):
        r = box_to_roi(b, camera)
        r[[0, 3]] -= window.col
        r[[1, 4]] -= window.row
        c = np.concatenate([np.clip(r[:3], lo, hi), np.clip(r[3:], lo, hi)])
        full = np.prod(r[3:] - r[:3])
        part = np.prod(np.clip(c[3:] - c[:3], 0, None))
        if full > 0 and part / full >= min_keep:
            rois.append(c)
            keep.append(k)
    return np.array(rois).reshape(-1, 6), keep


def _shift(roi_arr, window):
    r = np.array(roi_arr, float)
    r[[0, 3]] += window.col
    r[[1, 4]] += window.row
    return r


def _jitter(roi, rng, scale=0.1):
    c = (roi[:3] + roi[3:]) / 2
    e = roi[3:] - roi[:3]
    c = c + rng.uniform(-scale, scale, 3) * e
    e = e * np.exp(rng.uniform(-scale, scale, 3))
    return np.concatenate([c - e / 2, c + e / 2])


def roi_features(vol, disp_node, roi_local, cfg, valid=None):
    """RoISelect + fusion for one window-local RoI; returns the fused node."""
    roi = Roi3D(tuple(roi_local[:3]), tuple(roi_local[3:]))
    s = cfg.roi_size
    r3d = roi_select(vol, roi, disp_node.data, cfg.sample_mode, s, cfg.selective_margin)
    if cfg.fusion == "none":
        return fuse(r3d, fusion="none")
    r2d = extract_roi2d(disp_node, roi, s, valid)
    if cfg.fusion == "3d":
        return fuse(r3d, back_project(r2d, roi, s), "3d")
    return fuse(r3d, fusion="2d", r2d=r2d)


def window_losses(params, cfg, scene, window, rng, n_header=(2, 2)):
    """Forward pass on one training window; returns (total, parts dict)."""
    rows = (window.row, window.row + window.rows)
    v, a = cost_volume_net(scene.left, scene.right, params, cfg.d_max, rows, window.col, window.cols)
    disp = soft_argmax(a)
    gt = scene.disparity[rows[0]:rows[1], window.col:window.col + window.cols]
    valid = np.isfinite(gt) & (gt > 0) & (gt < cfg.d_max)
    l_disp = disparity_loss(disp, gt, valid)
    l_rpn = l_head = 0.0
    if cfg.rpn_on:
        vol = detection_input(v, a, cfg)
        grid_shape = (cfg.d_max, window.rows, window.cols)
        anchors = anc.generate_anchors(grid_shape, cfg.anchor_strides, cfg.anchor_extents)
        gt_rois, keep = _gt_rois(scene.labels, scene.camera, window, cfg.d_max)
        labels, match = anc.assign_anchors(anchors.boxes(), gt_rois, cfg.pos_iou, cfg.neg_iou)
        out = rpn_forward(vol, params, cfg.anchor_strides)
        l_rpn = rpn_loss(out, labels, match, anchors, gt_rois, cfg.rpn_sample, rng)
        if cfg.header_on:
            l_head = _header_terms(params, cfg, scene, window, vol, disp, out, anchors, gt_rois, keep, rng, n_header)
    total = total_loss(l_disp, l_rpn, l_head, cfg.loss_weights)
    parts = {k: float(x.data[0]) if hasattr(x, "data") else float(x)
             for k, x in (("disp", l_disp), ("rpn", l_rpn), ("header", l_head))}
    parts["total"] = float(total.data[0])
    return total, parts


def _header_terms(params, cfg, scene, window, vol, disp, out, anchors, gt_rois, keep, rng, n_header):
    n_pos, n_prop = n_header
    rois, targets = [], []
    for _ in range(n_pos if len(gt_rois) else 0):
        j = int(rng.integers(len(gt_rois)))
        rois.append(_jitter(gt_rois[j], rng))
        targets.append(j)
    bounds = ((0, 0, 0), (window.cols - 1, window.rows - 1, cfg.d_max - 1))
    props, _ = proposals(out, anchors, top_k=n_prop, bounds=bounds)
    for p in props:
        iou = anc.iou_matrix(p[None], gt_rois)[0] if len(gt_rois) else np.zeros(0)
        j = int(np.argmax(iou)) if iou.size else -1
        rois.append(p)
        targets.append(j if j >= 0 and iou[j] >= cfg.pos_iou else -1)
    terms = []
    for roi, j in zip(rois, targets):
        roi = _valid_roi(roi, bounds)
        if roi is None:
            continue
        fused = roi_features(vol, disp, roi, cfg)
        raw = header_forward(fused, params)
        if j >= 0:
            box = scene.labels.boxes[keep[j]]
            g = _shift(roi, window)
            t = encode_target(box, Roi3D(tuple(g[:3]), tuple(g[3:])), scene.camera)
            terms.append(header_loss(raw, t, True))
        else:
            terms.append(header_loss(raw, np.zeros(9), False))
    if not terms:
        return 0.0
    acc = terms[0]
    for t in terms[1:]:
        acc = apply("elementwise-add", [acc, t])
    scale = constant(np.array([1.0 / len(terms)], dtype=acc.data.dtype))
    return apply("elementwise-mul", [acc, scale])


def _valid_roi(roi, bounds, min_extent=1.0):
    lo = np.asarray(bounds[0], float)
    hi = np.asarray(bounds[1], float)
    a = np.clip(roi[:3], lo, hi)
    b = np.clip(roi[3:], lo, hi)
    if np.any(b - a < min_extent):
        return None
    return np.concatenate([a, b])


@dataclass
class TrainResult:
    params: ParamStore
    history: list = field(default_factory=list)  # dicts: step, disp, rpn, header, total
    seconds: float = 0.0


def train(cfg, scenes, steps=None, log=None, sampler_seed=None, params=None):
    """Adam on random windows; ``log`` receives each history row."""
    steps = cfg.steps if steps is None else steps
    params = params or build_params(cfg)
    sampler = WindowSampler(scenes, cfg.window, cfg.seed if sampler_seed is None else sampler_seed)
    rng = np.random.default_rng(cfg.seed + 1)
    history = []
    t0 = time.perf_counter()
    for step in range(1, steps + 1):
        w = sampler()
        total, parts = window_losses(params, cfg, scenes[w.scene], w, rng)
        if not math.isfinite(parts["total"]):
            raise FloatingPointError(f"non-finite loss at step {step}")
        backward(total)
        optimizer_step(params, cfg.learning_rate)
        row = {"step": step, **parts}
        history.append(row)
        if log is not None:
            log(row)
    return TrainResult(params, history, time.perf_counter() - t0)


# ---------------------------------------------------------------- inference

def infer_volume(params, cfg, left, right, band=32):
    """Refined volume (R, D, H, W) and disparity (H, W), computed in row bands.

    Each band carries HALO rows of context on both sides, which covers the
    receptive field of the feature and refinement convolutions exactly.
    """
    H, W = np.asarray(left).shape
    R = cfg.refine_channels
    v_full = np.zeros((R, cfg.d_max, H, W), dtype=params.dtype)
    for r0 in range(0, H, band):
        r1 = min(H, r0 + band)
        a0, a1 = max(0, r0 - HALO), min(H, r1 + HALO)
        v, _ = cost_volume_net(left, right, params, cfg.d_max, rows=(a0, a1))
        v_full[:, :, r0:r1] = v.data[:, :, r0 - a0:r0 - a0 + (r1 - r0)]
    v_node = constant(v_full)
    a = aggregate(v_node, params)
    disp = soft_argmax(a)
    return v_node, a, disp


def detect(params, cfg, vol, disp, camera, pre_nms=256, roi_nms=0.5, bev_nms=0.1):
    """Proposals -> header -> metric boxes for a full image."""
    if not (cfg.rpn_on and cfg.header_on):
        return []
    H, W = disp.shape
    D = cfg.d_max
    anchors = anc.generate_anchors((D, H, W), cfg.anchor_strides, cfg.anchor_extents)
    out = rpn_forward(vol, params, cfg.anchor_strides)
    bounds = ((0, 0, 0), (W - 1, H - 1, D - 1))
    boxes, scores = proposals(out, anchors, top_k=pre_nms, bounds=bounds)
    keep = []
    for i in range(len(boxes)):
        if len(keep) >= cfg.top_k:
            break
        if not keep or anc.iou_matrix(boxes[i][None], boxes[keep]).max() <= roi_nms:
            keep.append(i)
    dets = []
    for i in keep:
        roi = _valid_roi(boxes[i], bounds)
        if roi is None:
            continue
        fused = roi_features(vol, disp, roi, cfg)
        raw = header_forward(fused, params).data
        try:
            box = decode_output(raw, Roi3D(tuple(roi[:3]), tuple(roi[3:])), camera)
        except (ValueError, OverflowError):
            continue
        if all(np.isfinite(box.center)) and box.center[2] > 0:
            dets.append(box)
    return nms(dets, bev_nms)


def predict(params, cfg, left, right, camera):
    """Disparity map (float32) and detections for one stereo pair."""
    v, a, disp = infer_volume(params, cfg, left, right)
    vol = detection_input(v, a, cfg)
    dets = detect(params, cfg, vol, disp, camera) if cfg.rpn_on and cfg.header_on else []
    return disp.data.astype(np.float32), dets


__all__ = ["TrainResult", "Window", "WindowSampler", "build_params", "detect", "infer_volume",
           "predict", "roi_features", "train", "window_losses"]
