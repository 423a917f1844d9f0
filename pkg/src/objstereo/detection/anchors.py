"""Anchor grid in (u, v, d) volume space, box coding and anchor assignment."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

POSITIVE, NEGATIVE, IGNORE = 1, 0, -1


@dataclass
class Anchors:
    centers: np.ndarray  # (N, 3) as (u, v, d)
    extents: np.ndarray  # (N, 3)
    grid: tuple  # (Dg, Hg, Wg)
    n_types: int

    def __len__(self):
        return len(self.centers)

    def boxes(self):
        """(N, 6) as (u_min, v_min, d_min, u_max, v_max, d_max)."""
        return np.hstack([self.centers - self.extents / 2, self.centers + self.extents / 2])


def generate_anchors(volume_shape, strides, extents, origin=(0, 0, 0)):
    """Dense anchors, ordered d-major, then v, then u, then extent index.

    ``volume_shape`` is (D, H, W); ``strides`` is (s_d, s_v, s_u); each entry
    of ``extents`` is (du, dv, dd). ``origin`` offsets the grid as (u0, v0, d0).
    """
    if len(extents) == 0:
        raise ValueError("anchor extents list is empty")
    D, H, W = volume_shape
    sd, sv, su = strides
    for n, s, axis in ((D, sd, "d"), (H, sv, "v"), (W, su, "u")):
        if n % s:
            raise ValueError(f"stride {s} does not divide volume extent {n} along {axis}")
    Dg, Hg, Wg = D // sd, H // sv, W // su
    ext = np.asarray(extents, float).reshape(-1, 3)
    dd, vv, uu, aa = np.meshgrid(np.arange(Dg), np.arange(Hg), np.arange(Wg), np.arange(len(ext)), indexing="ij")
    centers = np.stack([
        origin[0] + (uu.ravel() + 0.5) * su,
        origin[1] + (vv.ravel() + 0.5) * sv,
        origin[2] + (dd.ravel() + 0.5) * sd,
    ], axis=1) - 0.5
    return Anchors(centers, ext[aa.ravel()], (Dg, Hg, Wg), len(ext))


def encode(boxes, anchors_c, anchors_e):
    """Centre-size offsets (N, 6) of boxes (N, 6) w.r.t. anchors."""
    lo, hi = boxes[:, :3], boxes[:, 3:]
    c = (lo + hi) / 2
    e = np.maximum(hi - lo, 1e-6)
    return np.hstack([(c - anchors_c) / anchors_e, np.log(e / anchors_e)])


def decode(offsets, anchors_c, anchors_e, max_log=4.0):
    c = anchors_c + offsets[:, :3] * anchors_e
    e = anchors_e * np.exp(np.clip(offsets[:, 3:], -max_log, max_log))
    return np.hstack([c - e / 2, c + e / 2])


def iou_matrix(a, b):
    """Axis-aligned 3D IoU between boxes a (N, 6) and b (M, 6)."""
    a = np.asarray(a, float).reshape(-1, 6)
    b = np.asarray(b, float).reshape(-1, 6)
    lo = np.maximum(a[:, None, :3], b[None, :, :3])
    hi = np.minimum(a[:, None, 3:], b[None, :, 3:])
    inter = np.prod(np.clip(hi - lo, 0, None), axis=2)
    va = np.prod(a[:, 3:] - a[:, :3], axis=1)
    vb = np.prod(b[:, 3:] - b[:, :3], axis=1)
    union = va[:, None] + vb[None, :] - inter
    return np.where(union > 0, inter / np.maximum(union, 1e-12), 0.0)


def assign_anchors(anchor_boxes, gt_boxes, pos_iou=0.5, neg_iou=0.35):
    """Per-anchor label (POSITIVE / NEGATIVE / IGNORE) and matched gt index."""
    n = len(anchor_boxes)
    labels = np.full(n, NEGATIVE, dtype=np.int64)
    match = np.full(n, -1, dtype=np.int64)
    gt = np.asarray(gt_boxes, float).reshape(-1, 6)
    if len(gt) == 0:
        return labels, match
    iou = iou_matrix(anchor_boxes, gt)
    best = iou.max(axis=1)
    arg = iou.argmax(axis=1)
    labels[(best >= neg_iou) & (best < pos_iou)] = IGNORE
    pos = best >= pos_iou
    labels[pos] = POSITIVE
    match[pos] = arg[pos]
    for j in range(len(gt)):
        if not np.any(pos & (arg == j)):
            k = int(np.argmax(iou[:, j]))
            if iou[k, j] > 0:
                labels[k] = POSITIVE
                match[k] = j
    return labels, match
