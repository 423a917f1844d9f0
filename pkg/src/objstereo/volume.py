"""Feature extraction and cost-volume construction, refinement and aggregation."""

from __future__ import annotations

import numpy as np

from .autodiff import ValueNode, apply, constant

FEATURE_LAYERS = 3


def he_normal(rng, shape):
    fan_in = int(np.prod(shape[1:]))
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


def identity_kernel(c_out, c_in, ksize, ndim):
    """Kernel whose centre tap copies channel i to channel i."""
    w = np.zeros((c_out, c_in) + (ksize,) * ndim)
    centre = (ksize // 2,) * ndim
    for i in range(min(c_out, c_in)):
        w[(i, i) + centre] = 1.0
    return w


def init_features(store, rng, channels=16, in_channels=1):
    c = in_channels
    for i in range(FEATURE_LAYERS):
        store.add(f"feat.{i}.w", he_normal(rng, (channels, c, 3, 3)))
        store.add(f"feat.{i}.b", np.zeros(channels))
        c = channels


def init_refine(store, rng, in_channels, out_channels=32, identity=False):
    shapes = [(out_channels, in_channels), (out_channels, out_channels)]
    for i, (co, ci) in enumerate(shapes):
        w = identity_kernel(co, ci, 3, 3) if identity else he_normal(rng, (co, ci, 3, 3, 3))
        store.add(f"refine.{i}.w", w)
        store.add(f"refine.{i}.b", np.zeros(co))


def init_aggregate(store, rng, in_channels, ksize=3):
    w = he_normal(rng, (1, in_channels, ksize, ksize, ksize)) * 0.1
    store.add("agg.w", w)
    store.add("agg.b", np.zeros(1))


def _image_node(image, dtype):
    img = np.asarray(image, dtype=dtype)
    if img.ndim != 2:
        raise ValueError(f"expected a grayscale H x W image, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite pixels")
    return constant((img - 0.5)[None])


def extract_features(image, params, side="left"):
    """16-channel (by default) feature map at full input resolution.

    Both sides use the same parameters; ``side`` only labels the output.
    """
    if side not in ("left", "right"):
        raise ValueError(f"side must be left or right, got {side!r}")
    x = image if isinstance(image, ValueNode) else _image_node(image, params.dtype)
    for i in range(FEATURE_LAYERS):
        x = apply("conv2d", [x, params[f"feat.{i}.w"], params[f"feat.{i}.b"]], {"pad_mode": "replicate"})
        if i < FEATURE_LAYERS - 1:
            x = apply("relu", [x])
    x.name = f"features.{side}"
    return x


def build_cost_volume(f_left, f_right, d_max, u_offset=0, width=None):
    """Initial volume (2C, D, H, W): left block repeated, right block shifted by d."""
    W = f_left.shape[-1]
    if d_max > W:
        raise ValueError(f"d_max={d_max} exceeds image width {W}")
    return apply("cost-volume", [f_left, f_right], {"d_max": d_max, "u_offset": u_offset, "width": width})


def refine_cost_volume(volume, params, start=0):
    """Two 3x3x3 convolutions with relu; keeps the D x H x W extents."""
    x = volume
    i = start
    while f"refine.{i}.w" in params:
        x = apply("conv3d", [x, params[f"refine.{i}.w"], params[f"refine.{i}.b"]])
        x = apply("relu", [x])
        i += 1
    return x


def aggregate(volume, params):
    """Reduce the channel axis to one: per-disparity logits (D, H, W)."""
    a = apply("conv3d", [volume, params["agg.w"], params["agg.b"]])
    return apply("reshape", [a], {"shape": a.shape[1:]})


def cost_volume_net(left, right, params, d_max, rows=None, u_offset=0, width=None):
    """Image pair to (refined volume, aggregation volume) over a window.

    ``rows`` selects a horizontal band of the images before feature
    extraction; ``u_offset``/``width`` select the volume's columns while the
    right features keep the full row so shifted entries stay exact.
    """
    if rows is not None:
        left = left[rows[0]:rows[1]]
        right = right[rows[0]:rows[1]]
    fl = extract_features(left, params, "left")
    fr = extract_features(right, params, "right")
    if d_max > fl.shape[-1]:
        raise ValueError(f"d_max={d_max} exceeds image width {fl.shape[-1]}")
    if "refine.0.w" in params and params["refine.0.w"].shape[2:] == (3, 3, 3):
        # the first refinement layer reads the initial volume without materialising it
        attrs = {"d_max": d_max, "u_offset": u_offset, "width": width}
        v = apply("cost-volume-conv", [fl, fr, params["refine.0.w"], params["refine.0.b"]], attrs)
        v = refine_cost_volume(apply("relu", [v]), params, start=1)
    else:
        v = refine_cost_volume(build_cost_volume(fl, fr, d_max, u_offset, width), params)
    return v, aggregate(v, params)
