"""Independent reference computations shared by the unit and acceptance tests."""

import numpy as np

from objstereo.roi import Roi3D


def monte_carlo_bev_iou(a, b, n=10**6, seed=0):
    """BEV IoU by uniform sampling of the union's bounding rectangle."""
    pa, pb = a.footprint(), b.footprint()
    pts = np.vstack([pa, pb])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    rng = np.random.default_rng(seed)
    xy = lo + rng.random((n, 2)) * (hi - lo)
    ina = _inside_convex(xy, pa)
    inb = _inside_convex(xy, pb)
    union = np.count_nonzero(ina | inb)
    return np.count_nonzero(ina & inb) / union if union else 0.0


def _inside_convex(xy, poly):
    """Points inside a counter-clockwise convex polygon."""
    ok = np.ones(len(xy), dtype=bool)
    for i in range(len(poly)):
        p, q = poly[i], poly[(i + 1) % len(poly)]
        cross = (q[0] - p[0]) * (xy[:, 1] - p[1]) - (q[1] - p[1]) * (xy[:, 0] - p[0])
        ok &= cross >= 0
    return ok


def representable_surface(rng, s=8, out_fraction=0.1):
    """RoI plus a disparity map whose samples sit exactly on RoI cell centres.

    The RoI's (u, v) cell centres fall on integer pixels so bilinear
    sampling returns pixel values; each pixel's disparity is the centre of
    a random d cell, or lies outside the RoI's d-range for a fraction of
    columns.
    """
    u0, v0 = rng.integers(0, 4, 2)
    d_min = float(rng.uniform(5, 20))
    cell = float(rng.uniform(0.5, 2.0))
    roi = Roi3D((u0 - 0.5, v0 - 0.5, d_min), (u0 + s - 0.5, v0 + s - 0.5, d_min + s * cell))
    H, W = v0 + s + 2, u0 + s + 2
    k = rng.integers(0, s, (H, W))
    disp = d_min + (k + 0.5) * cell
    out = rng.random((H, W)) < out_fraction
    disp[out] = d_min + s * cell + rng.uniform(2, 10, out.sum()) * cell
    return roi, disp, cell
