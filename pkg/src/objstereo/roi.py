"""Fixed-size sampling of 3D RoIs from a cost volume (RoISelect).

A RoI lives in volume coordinates (u, v, d) with voxel centres at integers.
The S x S x S sample grid uses cell centres, and sampled features keep the
volume's axis order: (C, S_d, S_v, S_u).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import apply
from .autodiff import sampling as _sampling

MODES = ("trilinear", "deep", "selective")
MIN_EXTENT = 1e-6


@dataclass(frozen=True)
class Roi3D:
    p_min: tuple
    p_max: tuple

    def __post_init__(self):
        object.__setattr__(self, "p_min", tuple(float(x) for x in self.p_min))
        object.__setattr__(self, "p_max", tuple(float(x) for x in self.p_max))

    @classmethod
    def from_center(cls, center, extent):
        c = np.asarray(center, float)
        e = np.asarray(extent, float)
        return cls(tuple(c - e / 2), tuple(c + e / 2))

    @property
    def extent(self):
        return np.subtract(self.p_max, self.p_min)

    @property
    def center(self):
        return (np.asarray(self.p_min) + np.asarray(self.p_max)) / 2

    @property
    def d_range(self):
        return self.p_min[2], self.p_max[2]

    def volume(self):
        return float(np.prod(np.maximum(self.extent, 0)))

    def clamp(self, volume_shape):
        """Clip to the volume box; ``volume_shape`` is (D, H, W)."""
        D, H, W = volume_shape
        hi = np.array([W - 1, H - 1, D - 1], float)
        lo = np.clip(self.p_min, 0, hi)
        up = np.clip(self.p_max, 0, hi)
        return Roi3D(tuple(lo), tuple(up))

    def validate(self):
        if np.any(self.extent < MIN_EXTENT):
            raise ValueError(f"degenerate RoI {self.p_min} -> {self.p_max}")
        return self

    def as_array(self):
        return np.array(self.p_min + self.p_max)


@dataclass
class SampledRoi:
    features: object  # ValueNode (C, S, S, S)
    valid: np.ndarray
    coords: np.ndarray  # (S, S, S, 3) as (u, v, d)


def cell_centers(lo, hi, s):
    return lo + (np.arange(s) + 0.5) * (hi - lo) / s


def sample_grid(roi, s):
    """(S_d, S_v, S_u, 3) array of (u, v, d) sample coordinates."""
    roi.validate()
    u = cell_centers(roi.p_min[0], roi.p_max[0], s)
    v = cell_centers(roi.p_min[1], roi.p_max[1], s)
    d = cell_centers(roi.p_min[2], roi.p_max[2], s)
    dd, vv, uu = np.meshgrid(d, v, u, indexing="ij")
    return np.stack([uu, vv, dd], axis=-1)


def _sample(kind, volume, roi, s):
    coords = sample_grid(roi, s)
    feats = apply(kind, [volume], {"coords": coords})
    return SampledRoi(feats, np.ones((s, s, s), dtype=bool), coords)


def trilinear_sample(volume, roi, s=16):
    return _sample("trilinear-sample", volume, roi, s)


def deep_sample(volume, roi, s=16):
    """Bilinear in (u, v), Catmull-Rom along the disparity axis."""
    return _sample("cubic-d-sample", volume, roi, s)


def bilinear_patch(image, roi, s):
    """Bilinear samples of a 2D map on the RoI's (u, v) cell-centre grid, (S_v, S_u)."""
    img = np.asarray(image, dtype=np.float64)
    u = cell_centers(roi.p_min[0], roi.p_max[0], s)
    v = cell_centers(roi.p_min[1], roi.p_max[1], s)
    vv, uu = np.meshgrid(v, u, indexing="ij")
    coords = np.stack([uu.ravel(), vv.ravel(), np.zeros(uu.size)], axis=1)
    idx, wts = _sampling.stencil(coords, (1,) + img.shape)
    return _sampling.gather(img[None, None], idx, wts).reshape(s, s)


def _disparity_values(disp):
    values = getattr(disp, "values", disp)
    valid = getattr(disp, "valid", None)
    return np.asarray(values, dtype=np.float64), valid


def selective_mask(roi, disp, s=16, margin=3.0):
    """Voxels near the estimated surface of each (u, v) column.

    A column is kept only if its disparity lies within ``margin`` of the
    RoI's d-range; inside a kept column a voxel survives when its sampled
    disparity is within ``margin`` of the column's disparity.
    """
    values, valid = _disparity_values(disp)
    col = bilinear_patch(values, roi, s)
    col_ok = np.isfinite(col)
    if valid is not None:
        col_ok &= bilinear_patch(np.asarray(valid, float), roi, s) > 0.5
    d_lo, d_hi = roi.d_range
    col_ok &= (col >= d_lo - margin) & (col <= d_hi + margin)
    d = cell_centers(d_lo, d_hi, s)
    near = np.abs(d[:, None, None] - col[None]) <= margin
    return near & col_ok[None]


def roi_select(volume, roi, disp=None, mode="selective", s=16, margin=3.0):
    """RoISelect: the chosen interpolation composed with the confidence mask."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if mode == "trilinear":
        return trilinear_sample(volume, roi, s)
    sampled = deep_sample(volume, roi, s)
    if mode == "deep":
        return sampled
    if disp is None:
        raise ValueError("selective mode needs a disparity map")
    mask = selective_mask(roi, disp, s, margin)
    feats = apply("mask-zero", [sampled.features], {"mask": mask})
    return SampledRoi(feats, mask, sampled.coords)
