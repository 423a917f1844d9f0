"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import CHECK_DTYPE, apply, backward, constant, get_primitive, leaf, topological_order


@dataclass
class GradReport:
    max_rel: list[float]
    max_abs: list[float]
    passed: bool
    excluded: list[np.ndarray] = field(default_factory=list)
    checked: list[int] = field(default_factory=list)
    aborted: str | None = None

    @property
    def n_excluded(self):
        return int(sum(len(e) for e in self.excluded))


def _signature(root):
    sig = []
    for node in topological_order(root):
        if node.is_leaf:
            continue
        r = get_primitive(node.kind).regime([x.data for x in node.inputs], node.data, node.ctx, node.attrs)
        if r is not None:
            sig.append(np.asarray(r))
    return sig


def _same_signature(a, b):
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def check_function(fn, arrays, tolerance=1e-4, step=1e-3, floor=1e-8, seed=0, wrt=None,
                   max_entries=None, richardson=False):
    """Compare analytic and central-difference gradients of ``fn``.

    ``fn`` maps leaf nodes (one per entry of ``arrays``) to an output node.
    The output is scalarised with fixed random weights. Entries whose
    +/- step evaluations land on a different smooth piece of any primitive
    in the graph (a kink crossing) are excluded and reported. With
    ``max_entries`` set, at most that many entries per input are probed,
    drawn without replacement from the seeded generator. ``richardson``
    combines the central differences at ``step`` and ``step / 2`` so the
    leading truncation term cancels.
    """
    arrays = [np.array(a, dtype=CHECK_DTYPE) for a in arrays]
    wrt = list(range(len(arrays))) if wrt is None else list(wrt)
    rng = np.random.default_rng(seed)

    def build(arrs):
        nodes = [leaf(a) if i in wrt else constant(a) for i, a in enumerate(arrs)]
        return nodes, fn(*nodes)

    nodes, out = build(arrays)
    if not np.all(np.isfinite(out.data)):
        return GradReport([], [], False, aborted="non-finite forward value")
    weights = rng.standard_normal(out.shape)
    root = apply("sum", [apply("elementwise-mul", [out, constant(weights)])])
    backward(root)
    base_sig = _signature(out)

    max_rel, max_abs, excluded, checked = [], [], [], []
    ok = True
    for i in wrt:
        analytic = nodes[i].grad
        if analytic is None:
            analytic = np.zeros_like(arrays[i])
        x = arrays[i]
        fd = np.zeros_like(x)
        skip = []
        probe = np.arange(x.size)
        if max_entries is not None and x.size > max_entries:
            probe = np.sort(rng.choice(x.size, max_entries, replace=False))
        for k in probe:
            vals = []
            kink = False
            offsets = (step, -step, step / 2, -step / 2) if richardson else (step, -step)
            for off in offsets:
                xp = x.copy()
                xp.flat[k] += off
                trial = list(arrays)
                trial[i] = xp
                _, o = build(trial)
                if not np.all(np.isfinite(o.data)):
                    return GradReport(max_rel, max_abs, False, excluded, checked,
                                      aborted=f"non-finite forward value at input {i} entry {k}")
                if not _same_signature(_signature(o), base_sig):
                    kink = True
                vals.append(float(np.sum(weights * o.data)))
            if kink:
                skip.append(k)
            coarse = (vals[0] - vals[1]) / (2.0 * step)
            if richardson:
                fine = (vals[2] - vals[3]) / step
                fd.flat[k] = (4.0 * fine - coarse) / 3.0
            else:
                fd.flat[k] = coarse
        keep = np.zeros(x.size, dtype=bool)
        keep[probe] = True
        keep[skip] = False
        a = analytic.ravel()[keep]
        n = fd.ravel()[keep]
        err = np.abs(a - n)
        big = np.abs(n) > floor
        rel = err[big] / np.maximum(np.abs(a[big]), np.abs(n[big]))
        max_rel.append(float(rel.max()) if rel.size else 0.0)
        max_abs.append(float(err.max()) if err.size else 0.0)
        excluded.append(np.array(skip, dtype=np.int64))
        checked.append(int(keep.sum()))
        if rel.size and rel.max() > tolerance:
            ok = False
    return GradReport(max_rel, max_abs, ok, excluded, checked)


def finite_diff_check(kind, inputs, attrs=None, tolerance=1e-4, step=1e-3, floor=1e-8, seed=0, wrt=None,
                      max_entries=None, richardson=False):
    """Gradient check of a single catalog primitive."""
    attrs = dict(attrs or {})
    return check_function(lambda *xs: apply(kind, list(xs), attrs), inputs,
                          tolerance=tolerance, step=step, floor=floor, seed=seed, wrt=wrt,
                          max_entries=max_entries, richardson=richardson)
