"""Value nodes, the primitive registry and reverse-mode accumulation."""

from __future__ import annotations

import numpy as np

RUN_DTYPE = np.float32
CHECK_DTYPE = np.float64

_CATALOG: dict[str, "Primitive"] = {}


class ShapeError(ValueError):
    """Input shapes violate a primitive's shape rule."""


class Primitive:
    """Base class for catalog entries.

    Subclasses implement ``forward`` returning ``(out, ctx)`` and ``vjp``
    returning one gradient (or None) per input. ``regime`` optionally
    returns an array describing which smooth piece of the function each
    entry sits on; the gradient checker uses it to detect kink crossings.
    """

    name = ""
    differentiable = True

    def check(self, shapes, attrs):
        pass

    def forward(self, xs, attrs):
        raise NotImplementedError

    def vjp(self, g, xs, out, ctx, attrs, needs):
        raise NotImplementedError

    def regime(self, xs, out, ctx, attrs):
        return None


def register(cls):
    inst = cls()
    _CATALOG[inst.name] = inst
    return cls


def catalog():
    return sorted(_CATALOG)


def get_primitive(kind):
    try:
        return _CATALOG[kind]
    except KeyError:
        raise KeyError(f"unknown primitive kind {kind!r}") from None


class ValueNode:
    """Dense array taking part in the differentiation graph."""

    __slots__ = ("data", "grad", "kind", "inputs", "attrs", "ctx", "requires_grad", "name")

    def __init__(self, data, kind=None, inputs=(), attrs=None, ctx=None,
                 requires_grad=True, name=None):
        data = np.asarray(data)
        if data.ndim == 0:
            data = data.reshape(1)
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(RUN_DTYPE)
        self.data = data
        self.grad = None
        self.kind = kind
        self.inputs = tuple(inputs)
        self.attrs = attrs or {}
        self.ctx = ctx
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def is_leaf(self):
        return self.kind is None

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = self.name or self.kind or "leaf"
        return f"ValueNode({tag}, shape={list(self.shape)})"


def leaf(data, name=None, dtype=None):
    arr = np.array(data, dtype=dtype) if dtype is not None else np.array(data)
    return ValueNode(arr, requires_grad=True, name=name)


def constant(data, dtype=None):
    arr = np.asarray(data, dtype=dtype) if dtype is not None else np.asarray(data)
    return ValueNode(arr, requires_grad=False)


def _as_node(x):
    return x if isinstance(x, ValueNode) else constant(x)


def apply(kind, inputs, attrs=None):
    """Evaluate primitive ``kind`` on ``inputs`` and record it in the graph."""
    prim = get_primitive(kind)
    attrs = dict(attrs or {})
    nodes = [_as_node(x) for x in inputs]
    prim.check([n.shape for n in nodes], attrs)
    xs = [n.data for n in nodes]
    out, ctx = prim.forward(xs, attrs)
    needs = prim.differentiable and any(n.requires_grad for n in nodes)
    return ValueNode(out, kind=kind, inputs=nodes, attrs=attrs, ctx=ctx,
                     requires_grad=needs)


def topological_order(root):
    """Nodes reachable from ``root``, inputs before consumers."""
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for x in node.inputs:
            if id(x) not in seen:
                stack.append((x, False))
    return order


def backward(root):
    """Accumulate d(root)/d(leaf) into every reachable leaf's ``grad``."""
    if root.shape != (1,):
        raise ShapeError(f"backward needs a scalar root of shape [1], got {list(root.shape)}")
    order = topological_order(root)
    grads = {id(root): np.ones_like(root.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None or not node.requires_grad:
            continue
        if node.is_leaf:
            node.grad = g if node.grad is None else node.grad + g
            continue
        prim = get_primitive(node.kind)
        needs = [x.requires_grad for x in node.inputs]
        xs = [x.data for x in node.inputs]
        in_grads = prim.vjp(g, xs, node.data, node.ctx, node.attrs, needs)
        for x, gx, need in zip(node.inputs, in_grads, needs):
            if not need or gx is None:
                continue
            key = id(x)
            if key in grads:
                grads[key] = grads[key] + gx
            else:
                grads[key] = gx
