"""The primitive catalog.

Spatial primitives work on single, unbatched samples: images are (C, H, W)
and volumes (C, D, H, W). No primitive broadcasts; shape mismatches are
rejected by name.
"""

from __future__ import annotations

import numpy as np

from . import convolution, costconv, sampling
from .graph import Primitive, ShapeError, register


def _require(cond, msg):
    if not cond:
        raise ShapeError(msg)


def _same_shape(shapes, kind):
    for i, s in enumerate(shapes[1:], start=1):
        if s != shapes[0]:
            dim = next((k for k, (a, b) in enumerate(zip(s, shapes[0])) if a != b), min(len(s), len(shapes[0])))
            raise ShapeError(f"{kind}: input {i} has shape {list(s)} but input 0 has {list(shapes[0])} "
                             f"(mismatch at dimension {dim})")


def _cast(a, like):
    return np.asarray(a, dtype=like.dtype)


class _Conv(Primitive):
    ndim = 0

    def check(self, shapes, attrs):
        x, w = shapes[0], shapes[1]
        nd = self.ndim
        _require(len(x) == nd + 1, f"{self.name}: input must have {nd + 1} dims (C,spatial), got {list(x)}")
        _require(len(w) == nd + 2, f"{self.name}: weight must have {nd + 2} dims, got {list(w)}")
        _require(w[1] == x[0], f"{self.name}: weight dimension 1 (in channels) is {w[1]} "
                               f"but input dimension 0 (channels) is {x[0]}")
        if len(shapes) > 2:
            _require(shapes[2] == (w[0],), f"{self.name}: bias must have shape [{w[0]}], got {list(shapes[2])}")
        _require(attrs.get("pad_mode", "zeros") in ("zeros", "replicate"),
                 f"{self.name}: pad_mode must be zeros or replicate")

    def _geom(self, attrs):
        return attrs.get("stride", 1), attrs.get("padding"), attrs.get("pad_mode", "zeros")

    def forward(self, xs, attrs):
        stride, padding, mode = self._geom(attrs)
        b = xs[2] if len(xs) > 2 else None
        return convolution.conv_forward(xs[0], xs[1], b, stride, padding, mode), None

    def vjp(self, g, xs, out, ctx, attrs, needs):
        stride, padding, mode = self._geom(attrs)
        dx, dw, db = convolution.conv_backward(g, xs[0], xs[1], stride, padding, mode,
                                               need_x=needs[0], need_w=needs[1])
        return [dx, dw, db][: len(xs)]


@register
class Conv2d(_Conv):
    name = "conv2d"
    ndim = 2


@register
class Conv3d(_Conv):
    name = "conv3d"
    ndim = 3


@register
class Relu(Primitive):
    name = "relu"

    def forward(self, xs, attrs):
        return np.maximum(xs[0], 0), None

    def vjp(self, g, xs, out, ctx, attrs, needs):
        return [np.where(xs[0] > 0, g, 0).astype(g.dtype, copy=False)]

    def regime(self, xs, out, ctx, attrs):
        return xs[0] > 0


@register
class Linear(Primitive):
    """y = x W^T + b for x of shape (n,) or (B, n)."""

    name = "linear"

    def check(self, shapes, attrs):
        x, w = shapes[0], shapes[1]
        _require(len(w) == 2, f"linear: weight must be 2D, got {list(w)}")
        _require(len(x) in (1, 2), f"linear: input must be 1D or 2D, got {list(x)}")
        _require(x[-1] == w[1], f"linear: input dimension {len(x) - 1} is {x[-1]} but weight dimension 1 is {w[1]}")
        if len(shapes) > 2:
            _require(shapes[2] == (w[0],), f"linear: bias must have shape [{w[0]}], got {list(shapes[2])}")

    def forward(self, xs, attrs):
        y = xs[0] @ xs[1].T
        if len(xs) > 2:
            y = y + xs[2]
        return y, None

    def vjp(self, g, xs, out, ctx, attrs, needs):
        x, w = xs[0], xs[1]
        dx = g @ w if needs[0] else None
        if x.ndim == 1:
            dw = np.outer(g, x) if needs[1] else None
            db = g
        else:
            dw = g.T @ x if needs[1] else None
            db = g.sum(axis=0)
        return [dx, dw, db][: len(xs)]


@register
class SoftmaxAxis(Primitive):
    name = "softmax-axis"

    def check(self, shapes, attrs):
        axis = attrs.get("axis", 0)
        _require(-len(shapes[0]) <= axis < len(shapes[0]), f"softmax-axis: axis {axis} out of range")

    def forward(self, xs, attrs):
        axis = attrs.get("axis", 0)
        x = xs[0]
        e = np.exp(x - x.max(axis=axis, keepdims=True))
        return e / e.sum(axis=axis, keepdims=True), None

    def vjp(self, g, xs, out, ctx, attrs, needs):
        axis = attrs.get("axis", 0)
        return [out * (g - (g * out).sum(axis=axis, keepdims=True))]


@register
class WeightedIndexSum(Primitive):
    """Sum over ``axis`` of index * value; reduces that axis."""

    name = "weighted-index-sum"

    def check(self, shapes, attrs):
        axis = attrs.get("axis", 0)
        _require(len(shapes[0]) >= 2, "weighted-index-sum: input needs at least 2 dims")
        _require(-len(shapes[0]) <= axis < len(shapes[0]), f"weighted-index-sum: axis {axis} out of range")

    def _index(self, x, axis):
        shape = [1] * x.ndim
        shape[axis] = x.shape[axis]
        return np.arange(x.shape[axis], dtype=x.dtype).reshape(shape)

    def forward(self, xs, attrs):
        axis = attrs.get("axis", 0)
        x = xs[0]
        return (x * self._index(x, axis)).sum(axis=axis), None

    def vjp(self, g, xs, out, ctx, attrs, needs):
        axis = attrs.get("axis", 0)
        x = xs[0]
        return [np.expand_dims(g, axis) * self._index(x, axis)]


@register
class InstanceNorm(Primitive):
    """Per-channel standardisation over the spatial axes.

    ``mask`` (spatial shape) excludes entries from the statistics; they are
    output as 0. A channel with fewer than two valid entries is passed
    through (masked) without normalisation.
    """

    name = "instance-norm"

    def check(self, shapes, attrs):
        _require(len(shapes[0]) >= 2, "instance-norm: input needs a channel axis and spatial axes")
        mask = attrs.get("mask")
        if mask is not None:
            _require(tuple(np.shape(mask)) == shapes[0][1:],
                     f"instance-norm: mask shape {list(np.shape(mask))} != spatial shape {list(shapes[0][1:])}")

    def forward(self, xs, attrs):
        x = xs[0]
        C = x.shape[0]
        eps = attrs.get("eps", 1e-5)
        mask = attrs.get("mask")
        m = np.ones(x.shape[1:], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        mf = m.reshape(1, -1).astype(x.dtype)
        xf = x.reshape(C, -1)
        n = mf.sum()
        if n < 2:
            return (xf * mf).reshape(x.shape), {"n": n, "m": mf}
        mu = (xf * mf).sum(axis=1, keepdims=True) / n
        xc = (xf - mu) * mf
        var = (xc * xc).sum(axis=1, keepdims=True) / n
        inv = 1.0 / np.sqrt(var + eps)
        y = xc * inv
        return y.reshape(x.shape), {"n": n, "m": mf, "inv": inv, "y": y}

    def vjp(self, g, xs, out, ctx, attrs, needs):
        x = xs[0]
        C = x.shape[0]
        gf = g.reshape(C, -1) * ctx["m"]
        if ctx["n"] < 2:
            return [gf.reshape(x.shape)]
        n, y, inv = ctx["n"], ctx["y"], ctx["inv"]
        gm = gf.sum(axis=1, keepdims=True) / n
        gy = (gf * y).sum(axis=1, keepdims=True) / n
        dx = inv * (gf - gm - y * gy) * ctx["m"]
        return [dx.reshape(x.shape)]


@register
class ConcatAxis(Primitive):
    name = "concat-axis"

    def check(self, shapes, attrs):
        axis = attrs.get("axis", 0)
        _require(len(shapes) >= 1, "concat-axis: needs inputs")
        ref = shapes[0]
        for i, s in enumerate(shapes[1:], start=1):
            _require(len(s) == len(ref), f"concat-axis: input {i} has {len(s)} dims, input 0 has {len(ref)}")
            for k, (a, b) in enumerate(zip(s, ref)):
                if k != axis % len(ref) and a != b:
                    raise ShapeError(f"concat-axis: input {i} dimension {k} is {a}, input 0 has {b}")

    def forward(self, xs, attrs):
        return np.concatenate(xs, axis=attrs.get("axis", 0)), None

    def vjp(self, g, xs, out, ctx, attrs, needs):
        axis = attrs.get("axis", 0)
        cuts = np.cumsum([x.shape[axis] for x in xs])[:-1]
        return np.split(g, cuts, axis=axis)


@register
class ElementwiseAdd(Primitive):
    name = "elementwise-add"

    def check(self, shapes, attrs):
        _same_shape(shapes, self.name)

    def forward(self, xs, attrs):
        out = xs[0].copy()
        for x in xs[1:]:
            out += x
        return out, None

    def vjp(self, g, xs, out, ctx, attrs, needs):
        return [g] * len(xs)


@register
class ElementwiseMul(Primitive):
    name = "elementwise-mul"

    def check(self, shapes, attrs):
        _require(len(shapes) == 2, "elementwise-mul: takes exactly two inputs")
        _same_shape(shapes, self.name)

    def forward(self, xs, attrs):
        return xs[0] * xs[1], None

    def vjp(self, g, xs, out, ctx, attrs, needs):
        return [g * xs[1], g * xs[0]]


def _loss_terms(xs, attrs):
    x = xs[0]
    t = xs[1] if len(xs) > 1 else _cast(attrs.get("target", 0.0), x)
    w = attrs.get("weight")
    w = np.ones_like(x) if w is None else np.broadcast_to(_cast(w, x), x.shape)
    return x, t, w


@register
class SmoothL1(Primitive):
    """Weighted sum of the smooth-L1 penalty of ``x - target``.

    ``beta`` is the switch point between the quadratic and linear pieces
    (0.5 r^2 / beta below, |r| - 0.5 beta above); beta = 0 gives plain L1.
    The target is either a second input or the ``target`` attribute.
    """

    name = "smooth-l1"

    def check(self, shapes, attrs):
        if len(shapes) > 1:
            _same_shape(shapes, self.name)
        w = attrs.get("weight")
        if w is not None:
            _require(np.shape(w) in ((), shapes[0]), f"smooth-l1: weight shape {list(np.shape(w))} != {list(shapes[0])}")

    def forward(self, xs, attrs):
        x, t, w = _loss_terms(xs, attrs)
        beta = attrs.get("beta", 1.0)
        r = x - t
        a = np.abs(r)
        if beta > 0:
            pen = np.where(a < beta, 0.5 * r * r / beta, a - 0.5 * beta)
        else:
            pen = a
        return np.array([np.sum(w * pen)], dtype=x.dtype), None

    def vjp(self, g, xs, out, ctx, attrs, needs):
        x, t, w = _loss_terms(xs, attrs)
        beta = attrs.get("beta", 1.0)
        r = x - t
        if beta > 0:
            d = np.where(np.abs(r) < beta, r / beta, np.sign(r))
        else:
            d = np.sign(r)
        gx = g[0] * w * d
        return [gx, -gx] if len(xs) > 1 else [gx]

    def regime(self, xs, out, ctx, attrs):
        x, t, _ = _loss_terms(xs, attrs)
        r = x - t
        beta = attrs.get("beta", 1.0)
        return np.stack([np.abs(r) < beta, r > 0])


@register
class BceWithLogits(Primitive):
    """Weighted sum of binary cross-entropy between sigmoid(x) and ``target``."""

    name = "bce-with-logits"

    def check(self, shapes, attrs):
        t = attrs.get("target")
        _require(t is not None, "bce-with-logits: target attribute required")
        _require(np.shape(t) in ((), shapes[0]), f"bce-with-logits: target shape {list(np.shape(t))} != {list(shapes[0])}")
        w = attrs.get("weight")
        if w is not None:
            _require(np.shape(w) in ((), shapes[0]), f"bce-with-logits: weight shape {list(np.shape(w))} != {list(shapes[0])}")

    def forward(self, xs, attrs):
        x, t, w = _loss_terms(xs, attrs)
        pen = np.maximum(x, 0) - x * t + np.log1p(np.exp(-np.abs(x)))
        return np.array([np.sum(w * pen)], dtype=x.dtype), None

    def vjp(self, g, xs, out, ctx, attrs, needs):
        x, t, w = _loss_terms(xs, attrs)
        s = 0.5 * (1.0 + np.tanh(0.5 * x))
        return [g[0] * w * (s - t)]


class _Sample(Primitive):
    """Sample a (C, D, H, W) volume at ``coords`` (..., 3) given as (u, v, d)."""

    cubic_d = False

    def check(self, shapes, attrs):
        _require(len(shapes[0]) == 4, f"{self.name}: volume must be (C,D,H,W), got {list(shapes[0])}")
        c = attrs.get("coords")
        _require(c is not None and np.shape(c)[-1] == 3, f"{self.name}: coords attribute of shape (...,3) required")

    def _stencil(self, xs, attrs):
        coords = np.asarray(attrs["coords"], dtype=np.float64)
        return sampling.stencil(coords.reshape(-1, 3), xs[0].shape[1:], cubic_d=self.cubic_d)

    def forward(self, xs, attrs):
        idx, wts = self._stencil(xs, attrs)
        out = sampling.gather(xs[0], idx, wts)
        lead = np.shape(attrs["coords"])[:-1]
        return out.reshape((xs[0].shape[0],) + lead), (idx, wts)

    def vjp(self, g, xs, out, ctx, attrs, needs):
        idx, wts = ctx
        C = xs[0].shape[0]
        return [sampling.scatter(g.reshape(C, -1), idx, wts, xs[0].shape[1:])]


@register
class TrilinearSample(_Sample):
    name = "trilinear-sample"


@register
class CubicDSample(_Sample):
    """Bilinear in (u, v), Catmull-Rom along d."""

    name = "cubic-d-sample"
    cubic_d = True


@register
class MaskZero(Primitive):
    """Keep entries where ``mask`` holds, write exact zeros elsewhere.

    The mask matches the trailing dimensions of the input.
    """

    name = "mask-zero"

    def check(self, shapes, attrs):
        mask = attrs.get("mask")
        _require(mask is not None, "mask-zero: mask attribute required")
        ms = tuple(np.shape(mask))
        _require(ms == shapes[0][len(shapes[0]) - len(ms):],
                 f"mask-zero: mask shape {list(ms)} does not match trailing dims of {list(shapes[0])}")

    def forward(self, xs, attrs):
        m = np.asarray(attrs["mask"], dtype=bool)
        return np.where(m, xs[0], 0).astype(xs[0].dtype, copy=False), None

    def vjp(self, g, xs, out, ctx, attrs, needs):
        m = np.asarray(attrs["mask"], dtype=bool)
        return [np.where(m, g, 0).astype(g.dtype, copy=False)]


# structural primitives used to wire the pipeline together


@register
class CostVolumeStack(Primitive):
    """Concatenate left features with right features shifted by each disparity.

    Inputs fL, fR of shape (C, H, W). Output (2C, D, H, Wout) where the left
    block repeats fL[:, :, u0:u0+Wout] and the right block at level d holds
    fR[:, :, u0+u-d], zero where that column falls left of the image.
    """

    name = "cost-volume"

    def check(self, shapes, attrs):
        _require(len(shapes) == 2, "cost-volume: needs left and right feature maps")
        _same_shape(shapes, self.name)
        _require(len(shapes[0]) == 3, f"cost-volume: features must be (C,H,W), got {list(shapes[0])}")
        W = shapes[0][2]
        D = attrs.get("d_max")
        _require(D is not None and 1 <= D <= W, f"cost-volume: d_max must be in [1, {W}], got {D}")
        u0 = attrs.get("u_offset", 0)
        wo = attrs.get("width") or (W - u0)
        _require(0 <= u0 and u0 + wo <= W, f"cost-volume: column window [{u0}, {u0 + wo}) outside width {W}")

    def _window(self, xs, attrs):
        W = xs[0].shape[2]
        u0 = attrs.get("u_offset", 0)
        wo = attrs.get("width") or (W - u0)
        return u0, wo

    def forward(self, xs, attrs):
        fL, fR = xs
        C, H, W = fL.shape
        D = attrs["d_max"]
        u0, wo = self._window(xs, attrs)
        out = np.zeros((2 * C, D, H, wo), dtype=fL.dtype)
        out[:C] = fL[:, None, :, u0:u0 + wo]
        for d in range(D):
            lo = max(0, d - u0)
            if lo < wo:
                out[C:, d, :, lo:] = fR[:, :, u0 + lo - d:u0 + wo - d]
        return out, None

    def vjp(self, g, xs, out, ctx, attrs, needs):
        fL, fR = xs
        C = fL.shape[0]
        D = attrs["d_max"]
        u0, wo = self._window(xs, attrs)
        dL = np.zeros_like(fL)
        dL[:, :, u0:u0 + wo] = g[:C].sum(axis=1)
        dR = np.zeros_like(fR)
        for d in range(D):
            lo = max(0, d - u0)
            if lo < wo:
                dR[:, :, u0 + lo - d:u0 + wo - d] += g[C:, d, :, lo:]
        return [dL, dR]


@register
class CostVolumeConv(Primitive):
    """conv3d (3x3x3, zero padding) applied to ``cost-volume`` without building it."""

    name = "cost-volume-conv"

    def check(self, shapes, attrs):
        _require(len(shapes) == 4, "cost-volume-conv: needs left, right, weight and bias")
        CostVolumeStack().check(shapes[:2], attrs)
        C = shapes[0][0]
        w = shapes[2]
        _require(len(w) == 5 and w[1] == 2 * C and w[2:] == (3, 3, 3),
                 f"cost-volume-conv: weight must be (Cout, {2 * C}, 3, 3, 3), got {list(w)}")
        _require(shapes[3] == (w[0],), f"cost-volume-conv: bias must have shape [{w[0]}], got {list(shapes[3])}")

    def _window(self, xs, attrs):
        W = xs[0].shape[2]
        u0 = attrs.get("u_offset", 0)
        return u0, attrs.get("width") or (W - u0)

    def forward(self, xs, attrs):
        u0, wo = self._window(xs, attrs)
        return costconv.costconv_forward(xs[0], xs[1], xs[2], xs[3], attrs["d_max"], u0, wo), None

    def vjp(self, g, xs, out, ctx, attrs, needs):
        u0, wo = self._window(xs, attrs)
        return list(costconv.costconv_backward(g, xs[0], xs[1], xs[2], attrs["d_max"], u0, wo))


@register
class Reshape(Primitive):
    name = "reshape"

    def check(self, shapes, attrs):
        shape = tuple(attrs.get("shape", ()))
        _require(int(np.prod(shape)) == int(np.prod(shapes[0])),
                 f"reshape: cannot view {list(shapes[0])} as {list(shape)}")

    def forward(self, xs, attrs):
        return xs[0].reshape(tuple(attrs["shape"])), None

    def vjp(self, g, xs, out, ctx, attrs, needs):
        return [g.reshape(xs[0].shape)]


@register
class Sum(Primitive):
    name = "sum"

    def forward(self, xs, attrs):
        return np.array([xs[0].sum()], dtype=xs[0].dtype), None

    def vjp(self, g, xs, out, ctx, attrs, needs):
        return [np.full_like(xs[0], g[0])]


@register
class Slice(Primitive):
    """Contiguous range [start, stop) along ``axis``."""

    name = "slice"

    def check(self, shapes, attrs):
        axis = attrs.get("axis", 0)
        n = shapes[0][axis]
        start, stop = attrs.get("start", 0), attrs.get("stop", n)
        _require(0 <= start < stop <= n, f"slice: range [{start}, {stop}) invalid for dimension {axis} of size {n}")

    def _index(self, x, attrs):
        axis = attrs.get("axis", 0)
        sl = [slice(None)] * x.ndim
        sl[axis] = slice(attrs.get("start", 0), attrs.get("stop", x.shape[axis]))
        return tuple(sl)

    def forward(self, xs, attrs):
        return xs[0][self._index(xs[0], attrs)].copy(), None

    def vjp(self, g, xs, out, ctx, attrs, needs):
        dx = np.zeros_like(xs[0])
        dx[self._index(xs[0], attrs)] = g
        return [dx]
