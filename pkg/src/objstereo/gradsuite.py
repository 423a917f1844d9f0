"""Random finite-difference instances for every primitive and the main composites."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .autodiff import ParamStore, apply, catalog, check_function

TOLERANCE = 1e-4
STEP = 1e-3


def _coords(rng, shape, n):
    D, H, W = shape
    return np.stack([rng.uniform(-0.5, W - 0.5, n), rng.uniform(-0.5, H - 0.5, n), rng.uniform(-0.5, D - 0.5, n)], -1)


def primitive_instance(kind, rng):
    """(inputs, attrs) for one random instance of a catalog primitive."""
    n = rng.standard_normal
    if kind == "conv2d":
        cin, cout = rng.integers(1, 4, 2)
        k = int(rng.choice([1, 3]))
        attrs = {"stride": int(rng.integers(1, 3)), "pad_mode": str(rng.choice(["zeros", "replicate"]))}
        return [n((cin, 5, 6)), n((cout, cin, k, k)), n(cout)], attrs
    if kind == "conv3d":
        cin, cout = rng.integers(1, 4, 2)
        k = int(rng.choice([2, 3]))
        attrs = {"stride": int(rng.integers(1, 3)), "padding": int(rng.integers(0, 2))}
        return [n((cin, 4, 4, 5)), n((cout, cin, k, k, k)), n(cout)], attrs
    if kind == "relu":
        x = n((3, 4))
        x[np.abs(x) < 0.01] += 0.05  # keep most entries off the kink
        return [x], {}
    if kind == "linear":
        batch = (int(rng.integers(1, 4)),) if rng.random() < 0.5 else ()
        i, o = rng.integers(1, 6, 2)
        return [n(batch + (i,)), n((o, i)), n(o)], {}
    if kind == "softmax-axis":
        return [n((4, 3, 2)) * 2], {"axis": int(rng.integers(0, 3))}
    if kind == "weighted-index-sum":
        return [n((5, 3, 2))], {"axis": int(rng.integers(0, 3))}
    if kind == "instance-norm":
        x = n((2, 4, 5))
        return [x], {"mask": rng.random((4, 5)) < 0.7} if rng.random() < 0.5 else {}
    if kind == "concat-axis":
        return [n((2, 3)), n((2, int(rng.integers(1, 4))))], {"axis": 1}
    if kind == "elementwise-add":
        return [n((3, 4)), n((3, 4))], {}
    if kind == "elementwise-mul":
        return [n((3, 4)), n((3, 4))], {}
    if kind == "smooth-l1":
        beta = float(rng.choice([0.0, 0.5, 1.0]))
        return [n((4, 5)), n((4, 5))], {"beta": beta, "weight": rng.random((4, 5))}
    if kind == "bce-with-logits":
        return [n((4, 5)) * 3], {"target": (rng.random((4, 5)) < 0.5).astype(float), "weight": rng.random((4, 5))}
    if kind in ("trilinear-sample", "cubic-d-sample"):
        shape = (5, 4, 6)
        return [n((2,) + shape)], {"coords": _coords(rng, shape, 12).reshape(3, 4, 3)}
    if kind == "mask-zero":
        return [n((2, 3, 4))], {"mask": rng.random((3, 4)) < 0.5}
    if kind == "cost-volume":
        W = int(rng.integers(4, 8))
        u0 = int(rng.integers(0, 2))
        return [n((2, 3, W)), n((2, 3, W))], {"d_max": int(rng.integers(1, W)), "u_offset": u0, "width": W - u0}
    if kind == "cost-volume-conv":
        W = int(rng.integers(3, 6))
        u0 = int(rng.integers(0, 2))
        attrs = {"d_max": int(rng.integers(1, W)), "u_offset": u0, "width": int(rng.integers(1, W - u0 + 1))}
        return [n((1, 2, W)), n((1, 2, W)), n((1, 2, 3, 3, 3)), n(1)], attrs
    if kind == "reshape":
        return [n((2, 3, 4))], {"shape": (4, 6)}
    if kind == "sum":
        return [n((3, 4))], {}
    if kind == "slice":
        return [n((3, 5))], {"axis": 1, "start": int(rng.integers(0, 2)), "stop": int(rng.integers(3, 6))}
    raise KeyError(f"no instance generator for primitive {kind!r}")


# ---------------------------------------------------------------- composites

def _soft_argmax_aggregate(rng):
    from .disparity import soft_argmax
    from .volume import aggregate

    v = rng.standard_normal((2, 5, 3, 4))
    w = rng.standard_normal((1, 2, 3, 3, 3)) * 0.5
    b = rng.standard_normal(1)
    gt = rng.uniform(0, 4, (3, 4))

    def fn(v, w, b):
        d = soft_argmax(aggregate(v, {"agg.w": w, "agg.b": b}))
        return apply("smooth-l1", [d], {"target": gt})

    return fn, [v, w, b]


def _roi_select(rng):
    from .roi import Roi3D, roi_select

    vol = rng.standard_normal((2, 8, 6, 7))
    roi = Roi3D((rng.uniform(0, 2), rng.uniform(0, 2), rng.uniform(0, 3)),
                (rng.uniform(4, 6), rng.uniform(3, 5), rng.uniform(4, 7)))
    disp = rng.uniform(0, 7, (6, 7))
    mode = str(rng.choice(["trilinear", "deep", "selective"]))

    def fn(v):
        return roi_select(v, roi, disp, mode, s=4, margin=1.5).features

    return fn, [vol]


def _fuse(rng):
    from .fusion import back_project, extract_roi2d, fuse
    from .roi import Roi3D, roi_select

    vol = rng.standard_normal((2, 8, 6, 7))
    disp = rng.uniform(1, 6, (6, 7))
    roi = Roi3D((1.0, 0.5, 1.0), (5.5, 4.5, 6.5))
    fusion = str(rng.choice(["none", "2d", "3d"]))

    def fn(v, dmap):
        r3d = roi_select(v, roi, dmap.data, "selective", s=4, margin=2.0)
        r2d = extract_roi2d(dmap, roi, 4)
        return fuse(r3d, back_project(r2d, roi, 4), fusion, r2d)

    return fn, [vol, disp]


def _rpn(rng):
    from .detection.anchors import assign_anchors, generate_anchors
    from .detection.rpn import init_rpn, rpn_forward, rpn_loss

    store = ParamStore(dtype=np.float64)
    init_rpn(store, rng, 2, 2, (2, 2, 2), hidden=3)
    names = store.names()
    anchors = generate_anchors((4, 4, 4), (2, 2, 2), [(2, 2, 2), (3, 2, 1.5)])
    gt = np.array([[0.2, 0.5, 0.3, 2.4, 2.2, 2.6]])
    labels, match = assign_anchors(anchors.boxes(), gt)
    vol = rng.standard_normal((2, 4, 4, 4))

    def fn(v, *ps):
        out = rpn_forward(v, dict(zip(names, ps)), (2, 2, 2))
        return rpn_loss(out, labels, match, anchors, gt)

    return fn, [vol] + [store[k].data for k in names]


def _header(rng):
    from .detection.header import header_forward, header_loss, init_header

    store = ParamStore(dtype=np.float64)
    init_header(store, rng, 2, s=8, hidden=(3, 4), fc=5)
    names = store.names()
    x = rng.standard_normal((2, 8, 8, 8))
    target = np.concatenate([rng.standard_normal(6), [np.sin(0.3), np.cos(0.3), 1.0]])
    positive = bool(rng.random() < 0.7)

    def fn(v, *ps):
        return header_loss(header_forward(v, dict(zip(names, ps))), target, positive)

    return fn, [x] + [store[k].data for k in names]


def _total_loss(rng):
    from .detection.losses import total_loss

    def fn(a, b, c):
        return total_loss(apply("sum", [a]), apply("sum", [b]), apply("sum", [c]))

    return fn, [rng.standard_normal(3), rng.standard_normal(2), rng.standard_normal(4)]


COMPOSITES = {
    "soft_argmax∘aggregate": _soft_argmax_aggregate,
    "roi_select": _roi_select,
    "fuse": _fuse,
    "rpn head": _rpn,
    "header head": _header,
    "total_loss": _total_loss,
}

MAX_ENTRIES = 24  # probed entries per input for the composites


@dataclass
class SuiteRow:
    name: str
    instances: int
    passed: int
    worst_rel: float
    excluded: int
    seconds: float

    @property
    def ok(self):
        return self.passed == self.instances


def run_suite(instances=10, seed=0, names=None):
    """Check every primitive and composite on ``instances`` random draws each."""
    rows = []
    targets = [(k, None) for k in catalog()] + [(k, f) for k, f in COMPOSITES.items()]
    for name, make in targets:
        if names is not None and name not in names:
            continue
        t0 = time.perf_counter()
        passed, worst, excl = 0, 0.0, 0
        for i in range(instances):
            rng = np.random.default_rng([seed, i, sum(map(ord, name))])
            if make is None:
                inputs, attrs = primitive_instance(name, rng)
                rep = check_function(lambda *xs: apply(name, list(xs), attrs), inputs,
                                     tolerance=TOLERANCE, step=STEP, seed=i)
            else:
                fn, inputs = make(rng)
                rep = check_function(fn, inputs, tolerance=TOLERANCE, step=STEP, seed=i,
                                     max_entries=MAX_ENTRIES, richardson=True)
            passed += bool(rep.passed)
            worst = max([worst] + rep.max_rel)
            excl += rep.n_excluded
        rows.append(SuiteRow(name, instances, passed, worst, excl, time.perf_counter() - t0))
    return rows


def format_rows(rows):
    lines = [f"{'primitive':<24}{'pass':>8}{'max rel':>12}{'excluded':>10}{'sec':>8}"]
    for r in rows:
        lines.append(f"{r.name:<24}{r.passed:>4}/{r.instances:<3}{r.worst_rel:>12.2e}{r.excluded:>10}{r.seconds:>8.2f}")
    return "\n".join(lines)
