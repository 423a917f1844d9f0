"""Sub-pixel disparity regression, its loss, depth conversion and depth metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ValueNode, apply

MIN_DISPARITY = 1e-3
MAX_EVAL_DEPTH = 80.0  # usual cap of the Eigen depth protocol


@dataclass(frozen=True)
class StereoGeometry:
    focal: float
    baseline: float

    def __post_init__(self):
        if not (self.focal > 0 and self.baseline > 0):
            raise ValueError(f"focal and baseline must be positive, got f={self.focal}, b={self.baseline}")

    @property
    def fb(self):
        return self.focal * self.baseline


@dataclass
class DisparityMap:
    values: np.ndarray
    valid: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.valid is None:
            self.valid = np.isfinite(self.values) & (self.values > 0)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.valid.shape != self.values.shape:
            raise ValueError("validity mask shape differs from the disparity map")


def soft_argmax(logits):
    """Softmax-weighted mean of disparity indices along axis 0 of (D, H, W)."""
    p = apply("softmax-axis", [logits], {"axis": 0})
    return apply("weighted-index-sum", [p], {"axis": 0})


def disparity_loss(pred, gt, valid=None):
    """Mean smooth-L1 of (gt - pred) over valid ground-truth pixels."""
    gt = np.asarray(gt)
    valid = np.isfinite(gt) & (gt > 0) if valid is None else np.asarray(valid, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction shape {list(pred.shape)} != ground truth shape {list(gt.shape)}")
    n = int(valid.sum())
    if n == 0:
        raise ValueError("no valid ground-truth pixels")
    dtype = pred.data.dtype if isinstance(pred, ValueNode) else np.float64
    target = np.where(valid, gt, 0).astype(dtype)
    weight = valid.astype(dtype) / n
    return apply("smooth-l1", [pred], {"target": target, "weight": weight})


def disparity_to_depth(disp, geometry, eps=MIN_DISPARITY):
    """Depth f*b/d with pixels at d <= eps marked invalid (returned as 0)."""
    d = np.asarray(disp, dtype=np.float64)
    valid = np.isfinite(d) & (d > eps)
    z = np.zeros_like(d)
    z[valid] = geometry.fb / d[valid]
    return z, valid


def depth_to_disparity(depth, geometry, eps=MIN_DISPARITY):
    """Inverse of ``disparity_to_depth`` under the same guard."""
    z = np.asarray(depth, dtype=np.float64)
    valid = np.isfinite(z) & (z > 0)
    d = np.zeros_like(z)
    d[valid] = geometry.fb / z[valid]
    valid &= d > eps
    d[~valid] = 0.0
    return d, valid


def depth_metrics(pred, gt, pred_valid=None, gt_valid=None):
    """abs_rel, sq_rel and rmse over pixels valid in both maps."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    pv = np.isfinite(pred) & (pred > 0) if pred_valid is None else np.asarray(pred_valid, bool)
    gv = np.isfinite(gt) & (gt > 0) if gt_valid is None else np.asarray(gt_valid, bool) & (gt > 0)
    m = pv & gv
    if not m.any():
        raise ValueError("no pixel is valid in both depth maps")
    z, zh = gt[m], pred[m]
    diff = z - zh
    return {
        "abs_rel": float(np.mean(np.abs(diff) / z)),
        "sq_rel": float(np.mean(diff * diff / z)),
        "rmse": float(np.sqrt(np.mean(diff * diff))),
    }


def evaluate_depth(pred_disp, gt_disp, geometry, max_depth=MAX_EVAL_DEPTH):
    """Depth metrics of a predicted disparity map against ground-truth disparity.

    Ground truth is evaluated where it is valid and within ``max_depth``;
    predicted depth is clipped to ``max_depth``, so pixels with no usable
    disparity count as maximally far rather than being dropped.
    """
    zg, gv = disparity_to_depth(gt_disp, geometry)
    gv &= zg <= max_depth
    z, zv = disparity_to_depth(pred_disp, geometry)
    z = np.where(zv, np.minimum(z, max_depth), max_depth)
    return depth_metrics(z, zg, np.ones_like(zv), gv)


def disparity_rmse(pred, gt, valid):
    valid = np.asarray(valid, dtype=bool)
    if not valid.any():
        raise ValueError("no valid pixels")
    diff = np.asarray(pred, np.float64)[valid] - np.asarray(gt, np.float64)[valid]
    return float(np.sqrt(np.mean(diff * diff)))
