"""Joint training objective."""

from __future__ import annotations

import numpy as np

from ..autodiff import apply, constant

LOSS_WEIGHTS = (1.0, 1.0, 2.0)


def _as_node(x, dtype):
    if hasattr(x, "data"):
        return x
    return constant(np.asarray([x], dtype=dtype))


def total_loss(l_disp, l_rpn, l_header, weights=LOSS_WEIGHTS):
    """Weighted sum disp + rpn + 2 * header. Components may be nodes or floats."""
    dtype = next((x.data.dtype for x in (l_disp, l_rpn, l_header) if hasattr(x, "data")), np.float64)
    parts = [_as_node(x, dtype) for x in (l_disp, l_rpn, l_header)]
    for name, p in zip(("l_disp", "l_rpn", "l_header"), parts):
        if p.data.shape != (1,):
            raise ValueError(f"{name} must be a scalar, got shape {p.data.shape}")
        if not np.isfinite(p.data).all():
            raise ValueError(f"{name} is not finite ({float(p.data[0])})")
    out = None
    for p, w in zip(parts, weights):
        term = p if w == 1.0 else apply("elementwise-mul", [p, constant(np.asarray([w], dtype=dtype))])
        out = term if out is None else apply("elementwise-add", [out, term])
    return out
