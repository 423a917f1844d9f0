"""Minimal reverse-mode differentiation over numpy arrays."""

from . import ops  # noqa: F401  (registers the catalog)
from .graph import (
    CHECK_DTYPE,
    RUN_DTYPE,
    ShapeError,
    ValueNode,
    apply,
    backward,
    catalog,
    constant,
    leaf,
    topological_order,
)
from .gradcheck import GradReport, check_function, finite_diff_check
from .optim import AdamSettings, ParamStore, optimizer_step

__all__ = [
    "CHECK_DTYPE",
    "RUN_DTYPE",
    "AdamSettings",
    "GradReport",
    "ParamStore",
    "ShapeError",
    "ValueNode",
    "apply",
    "backward",
    "catalog",
    "check_function",
    "constant",
    "finite_diff_check",
    "leaf",
    "optimizer_step",
    "topological_order",
]
