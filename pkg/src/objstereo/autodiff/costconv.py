"""First refinement layer fused with cost-volume construction.

A 3x3x3 zero-padded convolution of the concatenated volume
[fL repeated over d | fR shifted by d] splits into 2D convolutions: the left
block is constant along d, so each depth tap is a plain conv2d of fL; the
right block is a shift, so each depth tap is a conv2d of fR read at column
u - d - kd + 1. The two boundary columns of a window see the volume's own
zero padding rather than neighbouring image columns, so they are evaluated
directly on a three-column slab of the volume.
"""

from __future__ import annotations

import numpy as np

from .convolution import conv_backward, conv_forward


def _stack_taps(w, lo, hi):
    """(Cout, 2C, 3, 3, 3) -> (3*Cout, hi-lo, 3, 3), depth taps stacked on the output axis."""
    return np.concatenate([w[:, lo:hi, kd] for kd in range(3)], axis=0)


def _edge_columns(wo):
    return sorted({0, wo - 1})


def _slab(fL, fR, D, u0, wo, ue):
    """Volume columns ue-1..ue+1 (window coordinates), zero outside the window."""
    C, H, _ = fL.shape
    out = np.zeros((2 * C, D, H, 3), dtype=fL.dtype)
    for k, u in enumerate((ue - 1, ue, ue + 1)):
        if not 0 <= u < wo:
            continue
        U = u0 + u
        out[:C, :, :, k] = fL[:, None, :, U]
        for d in range(min(D, U + 1)):
            out[C:, d, :, k] = fR[:, :, U - d]
    return out


def _slab_adjoint(gs, dL, dR, D, u0, wo, ue):
    C = dL.shape[0]
    for k, u in enumerate((ue - 1, ue, ue + 1)):
        if not 0 <= u < wo:
            continue
        U = u0 + u
        dL[:, :, U] += gs[:C, :, :, k].sum(axis=1)
        for d in range(min(D, U + 1)):
            dR[:, :, U - d] += gs[C:, d, :, k]


def _right_spans(D, u0, wo, ncols):
    """For each (d, kd): output columns [a, b) and source columns of the tap table."""
    spans = []
    for kd in range(3):
        for d in range(D):
            if not 0 <= d + kd - 1 < D:
                continue
            shift = u0 - d - kd + 2  # table column of window column 0
            a = max(0, -shift)
            b = min(wo, ncols - shift)
            if a < b:
                spans.append((kd, d, a, b, shift))
    return spans


def costconv_forward(fL, fR, w, b, D, u0=0, wo=None):
    C, H, W = fL.shape
    wo = W - u0 if wo is None else wo
    cout = w.shape[0]
    left = conv_forward(fL, _stack_taps(w, 0, C), None, 1, 1).reshape(3, cout, H, W)[..., u0:u0 + wo]
    fRp = np.pad(fR, ((0, 0), (1, 1), (2, 1)))
    right = conv_forward(fRp, _stack_taps(w, C, 2 * C), None, 1, 0).reshape(3, cout, H, W + 1)
    out = np.empty((cout, D, H, wo), dtype=fL.dtype)
    lsum = left.sum(axis=0)
    out[:] = lsum[:, None]
    if b is not None:
        out += b.reshape(cout, 1, 1, 1)
    out[:, 0] -= left[0]
    out[:, D - 1] -= left[2]
    for kd, d, a, e, shift in _right_spans(D, u0, wo, W + 1):
        out[:, d, :, a:e] += right[kd, :, :, a + shift:e + shift]
    for ue in _edge_columns(wo):
        out[..., ue:ue + 1] = conv_forward(_slab(fL, fR, D, u0, wo, ue), w, b, 1, (1, 1, 0))
    return out


def costconv_backward(g, fL, fR, w, D, u0=0, wo=None):
    """Gradients (dfL, dfR, dw, db)."""
    C, H, W = fL.shape
    wo = W - u0 if wo is None else wo
    cout = w.shape[0]
    db = g.reshape(cout, -1).sum(axis=1)
    gm = g.copy()
    edges = _edge_columns(wo)
    gm[..., edges] = 0
    gsum = gm.sum(axis=1)
    gl = np.zeros((3, cout, H, W), dtype=g.dtype)
    gl[:, :, :, u0:u0 + wo] = gsum
    gl[0, :, :, u0:u0 + wo] -= gm[:, 0]
    gl[2, :, :, u0:u0 + wo] -= gm[:, D - 1]
    dfL, dwl, _ = conv_backward(gl.reshape(3 * cout, H, W), fL, _stack_taps(w, 0, C), 1, 1)
    gr = np.zeros((3, cout, H, W + 1), dtype=g.dtype)
    for kd, d, a, e, shift in _right_spans(D, u0, wo, W + 1):
        gr[kd, :, :, a + shift:e + shift] += gm[:, d, :, a:e]
    fRp = np.pad(fR, ((0, 0), (1, 1), (2, 1)))
    dfRp, dwr, _ = conv_backward(gr.reshape(3 * cout, H, W + 1), fRp, _stack_taps(w, C, 2 * C), 1, 0)
    dfR = np.ascontiguousarray(dfRp[:, 1:-1, 2:-1])
    dw = np.empty_like(w)
    for kd in range(3):
        dw[:, :C, kd] = dwl[kd * cout:(kd + 1) * cout]
        dw[:, C:, kd] = dwr[kd * cout:(kd + 1) * cout]
    for ue in edges:
        slab = _slab(fL, fR, D, u0, wo, ue)
        ds, dwe, _ = conv_backward(g[..., ue:ue + 1], slab, w, 1, (1, 1, 0))
        dw += dwe
        _slab_adjoint(ds, dfL, dfR, D, u0, wo, ue)
    return dfL, dfR, dw, db
