"""N-d correlation kernels (2D and 3D) on channel-first arrays.

Two evaluation strategies share one contract:

* gather: copy the kernel windows of the padded input into a column
  buffer of shape (Cin, K, *out) and contract with the weights.
* scatter: contract the padded input with the weights first, giving
  (K, Cout, *padded), then sum the K shifted windows.

* planes (3D, stride 1): im2col over the two trailing axes only, one
  matmul per depth plane producing all depth taps, then a shifted sum of
  the taps along depth. It copies k1*k2 windows instead of k0*k1*k2.

The scatter form only holds for stride 1 and is cheaper when Cout < Cin,
which is the common case when a wide cost volume is reduced.
"""

from __future__ import annotations

import itertools

import numpy as np


def _tuple(v, n):
    if isinstance(v, (int, np.integer)):
        return (int(v),) * n
    v = tuple(int(x) for x in v)
    if len(v) != n:
        raise ValueError(f"expected {n} values, got {v}")
    return v


def conv_geometry(in_spatial, kernel, stride, padding):
    nd = len(in_spatial)
    stride = _tuple(stride, nd)
    if padding is None:
        padding = tuple(k // 2 for k in kernel)
    padding = _tuple(padding, nd)
    padded = tuple(n + 2 * p for n, p in zip(in_spatial, padding))
    out = tuple((p - k) // s + 1 for p, k, s in zip(padded, kernel, stride))
    return stride, padding, padded, out


def _windows(kernel, stride, out):
    """Slices selecting, for each kernel offset, the padded positions it reads."""
    wins = []
    for off in itertools.product(*(range(k) for k in kernel)):
        wins.append(tuple(slice(o, o + s * (n - 1) + 1, s) for o, s, n in zip(off, stride, out)))
    return wins


def pad_input(x, padding, mode):
    if not any(padding):
        return x
    widths = [(0, 0)] + [(p, p) for p in padding]
    if mode == "replicate":
        return np.pad(x, widths, mode="edge")
    return np.pad(x, widths)


def unpad_grad(gp, padding, mode):
    """Adjoint of ``pad_input``."""
    if not any(padding):
        return gp
    g = gp
    for axis, p in enumerate(padding, start=1):
        if p == 0:
            continue
        if mode == "replicate":
            g = g.copy() if g is gp else g
            lo = [slice(None)] * g.ndim
            hi = [slice(None)] * g.ndim
            lo[axis] = slice(p, p + 1)
            hi[axis] = slice(g.shape[axis] - p - 1, g.shape[axis] - p)
            src_lo = [slice(None)] * g.ndim
            src_hi = [slice(None)] * g.ndim
            src_lo[axis] = slice(0, p)
            src_hi[axis] = slice(g.shape[axis] - p, None)
            g[tuple(lo)] += g[tuple(src_lo)].sum(axis=axis, keepdims=True)
            g[tuple(hi)] += g[tuple(src_hi)].sum(axis=axis, keepdims=True)
        sl = [slice(None)] * g.ndim
        sl[axis] = slice(p, g.shape[axis] - p)
        g = g[tuple(sl)]
    return np.ascontiguousarray(g)


def _use_scatter(cin, cout, stride):
    return all(s == 1 for s in stride) and cout < cin


def _use_planes(ndim, stride):
    return ndim == 3 and all(s == 1 for s in stride)


def _plane_cols(xp, kernel, out):
    """(Dp, Cin * k1 * k2, H' * W') windows of the padded input, depth first."""
    cin, dp = xp.shape[:2]
    _, k1, k2 = kernel
    _, ho, wo = out
    xt = xp.transpose(1, 0, 2, 3)
    cols = np.empty((dp, cin, k1 * k2, ho, wo), dtype=xp.dtype)
    for k, (a, b) in enumerate(itertools.product(range(k1), range(k2))):
        cols[:, :, k] = xt[:, :, a:a + ho, b:b + wo]
    return cols.reshape(dp, cin * k1 * k2, ho * wo)


def _plane_weights(w):
    cout, cin, k0 = w.shape[:3]
    return np.concatenate([w[:, :, kd].reshape(cout, -1) for kd in range(k0)], axis=0)


def _planes_forward(xp, w, out):
    cout, k0 = w.shape[0], w.shape[2]
    y = np.matmul(_plane_weights(w), _plane_cols(xp, w.shape[2:], out))
    res = y[0:out[0], 0:cout].copy()
    for kd in range(1, k0):
        res += y[kd:kd + out[0], kd * cout:(kd + 1) * cout]
    return np.ascontiguousarray(res.transpose(1, 0, 2)).reshape((cout,) + out)


def _planes_backward(g, xp, w, out, need_x, need_w):
    cout, cin, k0, k1, k2 = w.shape
    dp = xp.shape[1]
    gt = g.reshape(cout, out[0], -1).transpose(1, 0, 2)
    gy = np.zeros((dp, k0 * cout, gt.shape[2]), dtype=g.dtype)
    for kd in range(k0):
        gy[kd:kd + out[0], kd * cout:(kd + 1) * cout] = gt
    dw = dxp = None
    if need_w:
        cols = _plane_cols(xp, w.shape[2:], out)
        dw2 = np.matmul(gy, cols.transpose(0, 2, 1)).sum(axis=0)
        dw = np.stack([dw2[kd * cout:(kd + 1) * cout].reshape(cout, cin, k1, k2) for kd in range(k0)], axis=2)
        del cols
    if need_x:
        gcols = np.matmul(_plane_weights(w).T, gy).reshape(dp, cin, k1 * k2, out[1], out[2])
        dxt = np.zeros((dp, cin) + xp.shape[2:], dtype=g.dtype)
        for k, (a, b) in enumerate(itertools.product(range(k1), range(k2))):
            dxt[:, :, a:a + out[1], b:b + out[2]] += gcols[:, :, k]
        dxp = dxt.transpose(1, 0, 2, 3)
    return dxp, dw


def conv_forward(x, w, b, stride=1, padding=None, mode="zeros"):
    cin = x.shape[0]
    cout = w.shape[0]
    kernel = w.shape[2:]
    stride, padding, padded, out = conv_geometry(x.shape[1:], kernel, stride, padding)
    if any(o < 1 for o in out):
        raise ValueError(f"kernel {kernel} larger than padded input {padded}")
    xp = pad_input(x, padding, mode)
    wins = _windows(kernel, stride, out)
    K = len(wins)
    if _use_scatter(cin, cout, stride):
        wk = np.moveaxis(w.reshape(cout, cin, K), 2, 0).reshape(K * cout, cin)
        y = (wk @ xp.reshape(cin, -1)).reshape((K, cout) + padded)
        res = y[(0, slice(None)) + wins[0]].copy()
        for k in range(1, K):
            res += y[(k, slice(None)) + wins[k]]
    elif _use_planes(len(out), stride):
        res = _planes_forward(xp, w, out)
    else:
        cols = np.empty((cin, K) + out, dtype=x.dtype)
        for k, win in enumerate(wins):
            cols[(slice(None), k) + tuple(slice(None) for _ in out)] = xp[(slice(None),) + win]
        res = (w.reshape(cout, cin * K) @ cols.reshape(cin * K, -1)).reshape((cout,) + out)
    if b is not None:
        res += b.reshape((cout,) + (1,) * len(out))
    return res


def conv_backward(g, x, w, stride=1, padding=None, mode="zeros", need_x=True, need_w=True):
    """Return (dx, dw, db) for ``conv_forward`` given output gradient ``g``."""
    cin = x.shape[0]
    cout = w.shape[0]
    kernel = w.shape[2:]
    stride, padding, padded, out = conv_geometry(x.shape[1:], kernel, stride, padding)
    xp = pad_input(x, padding, mode)
    wins = _windows(kernel, stride, out)
    K = len(wins)
    db = g.reshape(cout, -1).sum(axis=1)
    dx = dw = None
    if _use_scatter(cin, cout, stride):
        spread = np.zeros((K, cout) + padded, dtype=g.dtype)
        for k, win in enumerate(wins):
            spread[(k, slice(None)) + win] = g
        spread = spread.reshape(K * cout, -1)
        if need_w:
            dwk = (spread @ xp.reshape(cin, -1).T).reshape(K, cout, cin)
            dw = np.moveaxis(dwk, 0, 2).reshape(w.shape)
        if need_x:
            wk = np.moveaxis(w.reshape(cout, cin, K), 2, 0).reshape(K * cout, cin)
            dxp = (wk.T @ spread).reshape((cin,) + padded)
            dx = unpad_grad(dxp, padding, mode)
    elif _use_planes(len(out), stride):
        dxp, dw = _planes_backward(g, xp, w, out, need_x, need_w)
        if need_x:
            dx = unpad_grad(dxp, padding, mode)
    else:
        g2 = g.reshape(cout, -1)
        if need_w:
            cols = np.empty((cin, K) + out, dtype=x.dtype)
            for k, win in enumerate(wins):
                cols[(slice(None), k) + tuple(slice(None) for _ in out)] = xp[(slice(None),) + win]
            dw = (g2 @ cols.reshape(cin * K, -1).T).reshape(w.shape)
            del cols
        if need_x:
            gcols = (w.reshape(cout, cin * K).T @ g2).reshape((cin, K) + out)
            dxp = np.zeros((cin,) + padded, dtype=g.dtype)
            for k, win in enumerate(wins):
                dxp[(slice(None),) + win] += gcols[:, k]
            dx = unpad_grad(dxp, padding, mode)
    return dx, dw, db
