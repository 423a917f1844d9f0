"""Interpolation stencils over a (C, D, H, W) volume.

Coordinates are given as (u, v, d) triples with voxel centres at integer
positions. Every stencil is a list of flat voxel indices and weights per
sample point; forward is a weighted gather, the adjoint a scatter-add, so
the sampled values are linear in the volume.
"""

from __future__ import annotations

import numpy as np


def _linear_taps(x, n):
    x = np.clip(x, 0.0, n - 1)
    i0 = np.floor(x).astype(np.int64)
    i0 = np.minimum(i0, n - 1)
    t = x - i0
    i1 = np.minimum(i0 + 1, n - 1)
    return [i0, i1], [1.0 - t, t]


def catmull_rom_weights(t):
    """Weights of the four taps at offsets -1, 0, 1, 2 for fractional ``t``."""
    t2 = t * t
    t3 = t2 * t
    return [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ]


def _cubic_taps(x, n):
    x = np.clip(x, 0.0, n - 1)
    i0 = np.minimum(np.floor(x).astype(np.int64), n - 1)
    t = x - i0
    idx = [np.clip(i0 + o, 0, n - 1) for o in (-1, 0, 1, 2)]
    return idx, catmull_rom_weights(t)


def stencil(coords, volume_shape, cubic_d=False):
    """Flat indices (T, N) and weights (T, N) for sample points ``coords`` (N, 3)."""
    D, H, W = volume_shape
    u, v, d = coords[:, 0], coords[:, 1], coords[:, 2]
    ui, uw = _linear_taps(u, W)
    vi, vw = _linear_taps(v, H)
    di, dw = _cubic_taps(d, D) if cubic_d else _linear_taps(d, D)
    idx, wts = [], []
    for a, wa in zip(di, dw):
        for b, wb in zip(vi, vw):
            for c, wc in zip(ui, uw):
                idx.append((a * H + b) * W + c)
                wts.append(wa * wb * wc)
    return np.stack(idx), np.stack(wts)


def gather(volume, idx, wts):
    """Sampled values of shape (C, N)."""
    C = volume.shape[0]
    flat = volume.reshape(C, -1)
    out = np.zeros((C, idx.shape[1]), dtype=volume.dtype)
    for t in range(idx.shape[0]):
        out += flat[:, idx[t]] * wts[t].astype(volume.dtype)
    return out


def scatter(g, idx, wts, volume_shape):
    """Adjoint of ``gather``: gradient (C, D, H, W) from sample gradient (C, N)."""
    C = g.shape[0]
    size = int(np.prod(volume_shape))
    offs = (np.arange(C, dtype=np.int64) * size)[:, None, None]
    flat_idx = (idx[None, :, :] + offs).ravel()
    contrib = (g[:, None, :] * wts[None, :, :]).ravel()
    out = np.bincount(flat_idx, weights=contrib, minlength=C * size)
    return out.reshape((C,) + tuple(volume_shape)).astype(g.dtype, copy=False)
