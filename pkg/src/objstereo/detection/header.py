"""Second-stage header: fused RoI -> centre, size, heading and confidence.

Raw output layout (9 values): centre offsets (u, v, d) relative to the RoI
centre in RoI extents, log size ratios (w, h, l) to the mean object size,
heading as (sin, cos), confidence logit.
"""

from __future__ import annotations

import math

import numpy as np

from ..autodiff import apply
from ..volume import he_normal
from .boxes import ObjectBox

N_OUT = 9
MEAN_SIZE = (1.6, 1.5, 3.9)


def init_header(store, rng, in_channels, s=16, hidden=(16, 32), fc=64):
    c1, c2 = hidden
    store.add("head.0.w", he_normal(rng, (c1, in_channels, 4, 4, 4)))
    store.add("head.0.b", np.zeros(c1))
    store.add("head.1.w", he_normal(rng, (c2, c1, 2, 2, 2)))
    store.add("head.1.b", np.zeros(c2))
    n_flat = c2 * (s // 8) ** 3
    store.add("head.fc.w", he_normal(rng, (fc, n_flat)))
    store.add("head.fc.b", np.zeros(fc))
    store.add("head.out.w", he_normal(rng, (N_OUT, fc)) * 0.1)
    bias = np.zeros(N_OUT)
    bias[7] = 1.0  # cos of a zero heading
    store.add("head.out.b", bias)


def header_forward(fused, params):
    """Raw 9-vector for one fused RoI of shape (C+1, S, S, S)."""
    expected = params["head.0.w"].shape[1]
    if fused.shape[0] != expected or len(fused.shape) != 4:
        raise ValueError(f"header expects a ({expected}, S, S, S) RoI, got {list(fused.shape)}")
    x = apply("conv3d", [fused, params["head.0.w"], params["head.0.b"]], {"stride": 4, "padding": 0})
    x = apply("relu", [x])
    x = apply("conv3d", [x, params["head.1.w"], params["head.1.b"]], {"stride": 2, "padding": 0})
    x = apply("relu", [x])
    x = apply("reshape", [x], {"shape": (int(np.prod(x.shape)),)})
    x = apply("linear", [x, params["head.fc.w"], params["head.fc.b"]])
    x = apply("relu", [x])
    return apply("linear", [x, params["head.out.w"], params["head.out.b"]])


def yaw_from_sincos(s, c):
    n = math.hypot(s, c)
    if n == 0:
        return 0.0
    return math.atan2(s / n, c / n)


def encode_target(box, roi, camera, mean_size=MEAN_SIZE):
    """Regression target (9,) of ``box`` relative to ``roi``."""
    uvd = np.asarray(box.center_uvd) if box.center_uvd is not None else camera.project(box.center)
    ext = roi.extent
    t = np.empty(N_OUT)
    t[:3] = (uvd - roi.center) / ext
    t[3:6] = np.log(np.asarray(box.size) / np.asarray(mean_size))
    t[6], t[7] = math.sin(box.yaw), math.cos(box.yaw)
    t[8] = 1.0
    return t


def decode_output(raw, roi, camera, mean_size=MEAN_SIZE):
    raw = np.asarray(raw, float)
    uvd = roi.center + raw[:3] * roi.extent
    uvd[2] = max(uvd[2], 1e-3)
    size = np.asarray(mean_size) * np.exp(np.clip(raw[3:6], -3, 3))
    yaw = yaw_from_sincos(raw[6], raw[7])
    conf = 1.0 / (1.0 + math.exp(-raw[8]))
    return ObjectBox(camera.back_project(uvd), size, yaw, conf, center_uvd=tuple(uvd))


def header_loss(raw, target, positive=True, weight=1.0):
    """L1 on centre, log-size and (sin, cos) when positive, plus confidence BCE."""
    dtype = raw.data.dtype
    t = np.asarray(target, dtype=dtype)
    reg_w = np.zeros(N_OUT, dtype=dtype)
    if positive:
        reg_w[:8] = weight
    reg = apply("smooth-l1", [raw], {"target": np.where(reg_w > 0, t, 0).astype(dtype), "weight": reg_w, "beta": 0.0})
    cls_w = np.zeros(N_OUT, dtype=dtype)
    cls_w[8] = weight
    cls_t = np.zeros(N_OUT, dtype=dtype)
    cls_t[8] = 1.0 if positive else 0.0
    conf = apply("bce-with-logits", [raw], {"target": cls_t, "weight": cls_w})
    return apply("elementwise-add", [reg, conf])
