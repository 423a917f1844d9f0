"""Fusion-by-occupancy: 2D disparity RoI -> binary 3D occupancy -> fused RoI."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ValueNode, apply, constant
from .roi import Roi3D, SampledRoi, bilinear_patch, sample_grid

FUSIONS = ("none", "2d", "3d")


@dataclass
class Roi2D:
    patch: ValueNode  # (S_v, S_u) disparities
    valid: np.ndarray
    rect: tuple  # (u_min, v_min, u_max, v_max) in pixels


@dataclass
class OccupancyRoi:
    grid: np.ndarray  # (S_d, S_v, S_u) of {0, 1}
    roi: Roi3D


def extract_roi2d(disp, roi, s=16, valid=None):
    """Bilinear samples of the disparity map on the RoI's (u, v) cell-centre grid.

    ``disp`` is an (H, W) array or node; gradients flow back into it.
    """
    node = disp if isinstance(disp, ValueNode) else constant(np.asarray(disp))
    H, W = node.shape
    u0, v0, _ = roi.p_min
    u1, v1, _ = roi.p_max
    if u1 < 0 or v1 < 0 or u0 > W - 1 or v0 > H - 1:
        raise ValueError(f"RoI footprint ({u0:.1f},{v0:.1f})-({u1:.1f},{v1:.1f}) lies outside the {W}x{H} image")
    grid = sample_grid(Roi3D((u0, v0, 0.0), (u1, v1, 1.0)), s)[0].copy()
    grid[..., 2] = 0.0
    img = apply("reshape", [node], {"shape": (1, 1, H, W)})
    patch = apply("trilinear-sample", [img], {"coords": grid})
    patch = apply("reshape", [patch], {"shape": (s, s)})
    if valid is None:
        ok = np.isfinite(patch.data)
    else:
        ok = bilinear_patch(np.asarray(valid, float), roi, s) > 0.5
    return Roi2D(patch, ok, (u0, v0, u1, v1))


def occupancy_index(disp, d_min, d_max, s):
    """Nearest cell index (half-up) of disparity ``disp`` in an S-cell d-range."""
    pos = (np.asarray(disp, float) - d_min) / (d_max - d_min) * s - 0.5
    return np.clip(np.floor(pos + 0.5).astype(np.int64), 0, s - 1)


def back_project(r2d, roi, s=16):
    """Binary occupancy: one voxel per column at the column's disparity."""
    patch = r2d.patch.data if isinstance(r2d.patch, ValueNode) else np.asarray(r2d.patch)
    d_min, d_max = roi.d_range
    grid = np.zeros((s, s, s), dtype=np.uint8)
    inside = r2d.valid & (patch >= d_min) & (patch <= d_max)
    k = occupancy_index(np.where(inside, patch, d_min), d_min, d_max, s)
    jj, ii = np.nonzero(inside)
    grid[k[jj, ii], jj, ii] = 1
    return OccupancyRoi(grid, roi)


def fuse(r3d: SampledRoi, occ: OccupancyRoi | None = None, fusion="3d", r2d: Roi2D | None = None):
    """Normalise the sampled RoI per channel and append the fusion channel.

    ``fusion`` is "3d" (binary occupancy), "2d" (the disparity patch repeated
    along d, normalised like the features) or "none" (normalisation only).
    """
    if fusion not in FUSIONS:
        raise ValueError(f"fusion must be one of {FUSIONS}, got {fusion!r}")
    feats = r3d.features
    s = feats.shape[1]
    normed = apply("instance-norm", [feats], {"mask": r3d.valid})
    if fusion == "none":
        return normed
    if fusion == "3d":
        if occ is None or occ.grid.shape != feats.shape[1:]:
            raise ValueError("occupancy grid must match the sampled RoI grid")
        extra = constant(occ.grid[None].astype(feats.data.dtype))
    else:
        if r2d is None:
            raise ValueError("2d fusion needs the 2D RoI")
        plane = apply("reshape", [r2d.patch], {"shape": (1, 1, s, s)})
        stacked = apply("concat-axis", [plane] * s, {"axis": 1})
        extra = apply("instance-norm", [stacked])
    return apply("concat-axis", [normed, extra], {"axis": 0})

