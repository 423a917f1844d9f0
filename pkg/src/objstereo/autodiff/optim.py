"""Named parameter store and the adaptive-moment update."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import RUN_DTYPE, ValueNode


@dataclass
class AdamSettings:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class ParamStore:
    """Parameters by unique name, with per-parameter moment buffers."""

    def __init__(self, dtype=RUN_DTYPE, adam=None):
        self.dtype = np.dtype(dtype)
        self.adam = adam or AdamSettings()
        self.params: dict[str, ValueNode] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name, value):
        if name in self.params:
            raise KeyError(f"parameter {name!r} already exists")
        arr = np.array(value, dtype=self.dtype)
        node = ValueNode(arr, requires_grad=True, name=name)
        self.params[name] = node
        self.m[name] = np.zeros_like(arr)
        self.v[name] = np.zeros_like(arr)
        return node

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self):
        return len(self.params)

    def names(self, prefix=""):
        return [n for n in self.params if n.startswith(prefix)]

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state_dict(self):
        """Flat mapping of arrays, suitable for ``np.savez``."""
        out = {"__step__": np.array(self.step)}
        for name, p in self.params.items():
            out[f"p:{name}"] = p.data
            out[f"m:{name}"] = self.m[name]
            out[f"v:{name}"] = self.v[name]
        return out

    @classmethod
    def from_state(cls, state, dtype=RUN_DTYPE):
        store = cls(dtype=dtype)
        for key in state:
            if key.startswith("p:"):
                name = key[2:]
                store.add(name, state[key])
                store.m[name] = np.array(state[f"m:{name}"], dtype=store.dtype)
                store.v[name] = np.array(state[f"v:{name}"], dtype=store.dtype)
        store.step = int(state["__step__"])
        return store

    def astype(self, dtype):
        """Copy of the parameters (fresh optimiser state) in another precision."""
        out = ParamStore(dtype=dtype, adam=self.adam)
        for name, p in self.params.items():
            out.add(name, p.data)
        return out


def optimizer_step(store, learning_rate):
    """Apply one Adam update to every parameter and clear the gradients."""
    missing = [n for n, p in store.params.items() if p.grad is None]
    if missing:
        raise ValueError(f"parameter {missing[0]!r} has no gradient")
    a = store.adam
    store.step += 1
    t = store.step
    c1 = 1.0 - a.beta1 ** t
    c2 = 1.0 - a.beta2 ** t
    for name, p in store.params.items():
        g = p.grad.astype(store.dtype, copy=False)
        m = store.m[name]
        v = store.v[name]
        m *= a.beta1
        m += (1.0 - a.beta1) * g
        v *= a.beta2
        v += (1.0 - a.beta2) * g * g
        p.data -= (learning_rate * (m / c1) / (np.sqrt(v / c2) + a.eps)).astype(store.dtype, copy=False)
        p.grad = None
