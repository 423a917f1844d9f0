"""3D region proposal network on the cost volume."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import apply
from ..volume import he_normal
from .anchors import IGNORE, NEGATIVE, POSITIVE, decode, encode

N_OUT = 7  # objectness + 6 box offsets


def init_rpn(store, rng, in_channels, n_types, strides, hidden=16):
    store.add("rpn.0.w", he_normal(rng, (hidden, in_channels) + tuple(strides)))
    store.add("rpn.0.b", np.zeros(hidden))
    store.add("rpn.1.w", he_normal(rng, (hidden, hidden, 3, 3, 3)))
    store.add("rpn.1.b", np.zeros(hidden))
    store.add("rpn.out.w", he_normal(rng, (n_types * N_OUT, hidden, 1, 1, 1)) * 0.1)
    bias = np.zeros((n_types, N_OUT))
    bias[:, 0] = -2.0
    store.add("rpn.out.b", bias.ravel())


@dataclass
class RpnOutput:
    logits: object  # node (A, 1, Dg, Hg, Wg)
    offsets: object  # node (A, 6, Dg, Hg, Wg)

    @property
    def grid(self):
        return self.logits.shape[2:]


def to_anchor_order(arr):
    """(A, K, Dg, Hg, Wg) -> (N, K) in d, v, u, type order."""
    A, K = arr.shape[:2]
    return np.transpose(arr, (2, 3, 4, 0, 1)).reshape(-1, K)


def from_anchor_order(arr, n_types, grid):
    K = arr.shape[1]
    return np.transpose(arr.reshape(tuple(grid) + (n_types, K)), (3, 4, 0, 1, 2))


def rpn_forward(volume, params, strides):
    """Objectness logits and box offsets for every anchor cell and type."""
    n_types = params["rpn.out.b"].shape[0] // N_OUT
    x = apply("conv3d", [volume, params["rpn.0.w"], params["rpn.0.b"]], {"stride": tuple(strides), "padding": 0})
    x = apply("relu", [x])
    x = apply("conv3d", [x, params["rpn.1.w"], params["rpn.1.b"]])
    x = apply("relu", [x])
    x = apply("conv3d", [x, params["rpn.out.w"], params["rpn.out.b"]], {"padding": 0})
    grid = x.shape[1:]
    x = apply("reshape", [x], {"shape": (n_types, N_OUT) + tuple(grid)})
    logits = apply("slice", [x], {"axis": 1, "start": 0, "stop": 1})
    offsets = apply("slice", [x], {"axis": 1, "start": 1, "stop": N_OUT})
    return RpnOutput(logits, offsets)


def sample_anchors(labels, size=None, rng=None, max_pos_fraction=0.5):
    """Subsample labelled anchors for the classification term."""
    pos = np.flatnonzero(labels == POSITIVE)
    neg = np.flatnonzero(labels == NEGATIVE)
    if size is None:
        return pos, neg
    rng = rng or np.random.default_rng(0)
    n_pos = min(len(pos), int(size * max_pos_fraction))
    if n_pos < len(pos):
        pos = np.sort(rng.choice(pos, n_pos, replace=False))
    n_neg = min(len(neg), size - len(pos))
    if n_neg < len(neg):
        neg = np.sort(rng.choice(neg, n_neg, replace=False))
    return pos, neg


def rpn_loss(out, labels, match, anchors, gt_boxes, sample_size=None, rng=None):
    """Foreground BCE over sampled anchors plus smooth-L1 offsets of positives."""
    n_types = anchors.n_types
    grid = anchors.grid
    dtype = out.logits.data.dtype
    pos, neg = sample_anchors(np.asarray(labels), sample_size, rng)
    n_cls = len(pos) + len(neg)
    w_cls = np.zeros((len(labels), 1))
    t_cls = np.zeros((len(labels), 1))
    if n_cls:
        w_cls[pos] = w_cls[neg] = 1.0 / n_cls
    t_cls[pos] = 1.0
    l_class = apply("bce-with-logits", [out.logits], {
        "target": from_anchor_order(t_cls, n_types, grid).astype(dtype),
        "weight": from_anchor_order(w_cls, n_types, grid).astype(dtype),
    })
    w_reg = np.zeros((len(labels), 6))
    t_reg = np.zeros((len(labels), 6))
    if len(pos):
        gt = np.asarray(gt_boxes, float).reshape(-1, 6)
        t_reg[pos] = encode(gt[match[pos]], anchors.centers[pos], anchors.extents[pos])
        w_reg[pos] = 1.0 / len(pos)
    l_anc = apply("smooth-l1", [out.offsets], {
        "target": from_anchor_order(t_reg, n_types, grid).astype(dtype),
        "weight": from_anchor_order(w_reg, n_types, grid).astype(dtype),
    })
    return apply("elementwise-add", [l_class, l_anc])


def proposals(out, anchors, top_k=32, bounds=None):
    """Decoded RoI boxes (K, 6) and objectness scores, best first."""
    scores = to_anchor_order(out.logits.data)[:, 0].astype(np.float64)
    offs = to_anchor_order(out.offsets.data).astype(np.float64)
    boxes = decode(offs, anchors.centers, anchors.extents)
    if bounds is not None:
        lo, hi = np.asarray(bounds[0], float), np.asarray(bounds[1], float)
        boxes[:, :3] = np.clip(boxes[:, :3], lo, hi)
        boxes[:, 3:] = np.clip(boxes[:, 3:], lo, hi)
    ok = np.all(boxes[:, 3:] - boxes[:, :3] > 1e-3, axis=1)
    idx = np.flatnonzero(ok)
    idx = idx[np.argsort(-scores[idx], kind="stable")][:top_k]
    return boxes[idx], scores[idx]


__all__ = ["IGNORE", "NEGATIVE", "POSITIVE", "RpnOutput", "init_rpn", "proposals",
           "rpn_forward", "rpn_loss", "sample_anchors", "to_anchor_order", "from_anchor_order"]
