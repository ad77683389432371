"""Minimal dense reverse-mode automatic differentiation on numpy arrays.

Everything is float64. A Node wraps a value plus the closure needed to push a
cotangent back to its parents; backward() topologically sorts the graph from a
scalar root and accumulates gradients additively into every reachable node, so
running backward twice without zeroing doubles every grad. The op set is just
what the intensity, walk, and reward expressions need: matmul, add, mul,
scalar_mul, concat, stack, row_select, slice1d, softmax_masked, exp, log,
tanh, sigmoid, softplus, sum, mean.

Parameters live in a ParameterStore keyed by name, each with its own Adam
state; adam_step applies one bias-corrected update and zeroes grads.
Checkpoints are versioned JSON whose floats round-trip bit-exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np


class ShapeMismatchError(ValueError):
    pass


class NonScalarRootError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


class Node:
    """One value in the computation graph. grad is allocated lazily."""

    __slots__ = ("value", "grad", "_parents", "_vjp")

    def __init__(self, value, parents: tuple = (), vjp: Optional[Callable] = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self._parents = parents
        self._vjp = vjp

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def __repr__(self) -> str:
        return f"Node(shape={self.shape}, leaf={self._vjp is None})"

    # Sugar for the handful of places where infix reads better.
    def __add__(self, other):
        return add(self, other if isinstance(other, Node) else constant(other))

    def __mul__(self, other):
        if isinstance(other, Node):
            return mul(self, other)
        return scalar_mul(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __sub__(self, other):
        return add(self, -(other if isinstance(other, Node) else constant(other)))


def constant(value) -> Node:
    return Node(np.asarray(value, dtype=np.float64))


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ShapeMismatchError(msg)


def matmul(a: Node, b: Node) -> Node:
    """Matrix/vector product following numpy matmul semantics (ndim <= 2)."""
    av, bv = a.value, b.value
    _require(av.ndim >= 1 and bv.ndim >= 1, "matmul needs arrays, got scalars")
    if av.ndim == 1 and bv.ndim == 1:
        _require(av.shape == bv.shape, f"dot shapes {av.shape} vs {bv.shape}")
    elif av.ndim == 2 and bv.ndim == 1:
        _require(av.shape[1] == bv.shape[0], f"matmul shapes {av.shape} vs {bv.shape}")
    elif av.ndim == 1 and bv.ndim == 2:
        _require(av.shape[0] == bv.shape[0], f"matmul shapes {av.shape} vs {bv.shape}")
    elif av.ndim == 2 and bv.ndim == 2:
        _require(av.shape[1] == bv.shape[0], f"matmul shapes {av.shape} vs {bv.shape}")
    else:
        raise ShapeMismatchError(f"matmul supports ndim<=2, got {av.shape} @ {bv.shape}")
    out = av @ bv

    def vjp(g):
        if av.ndim == 1 and bv.ndim == 1:
            return g * bv, g * av
        if av.ndim == 2 and bv.ndim == 1:
            return np.outer(g, bv), av.T @ g
        if av.ndim == 1 and bv.ndim == 2:
            return bv @ g, np.outer(av, g)
        return g @ bv.T, av.T @ g

    return Node(out, (a, b), vjp)


def dot(a: Node, b: Node) -> Node:
    return matmul(a, b)


def _binary_broadcast(a: Node, b: Node, name: str):
    av, bv = a.value, b.value
    if av.shape != bv.shape and av.shape != () and bv.shape != ():
        raise ShapeMismatchError(
            f"{name} needs equal shapes or a scalar, got {av.shape} vs {bv.shape}"
        )


def add(a: Node, b: Node) -> Node:
    """Elementwise add; one side may be a scalar, broadcast to the other."""
    _binary_broadcast(a, b, "add")
    out = a.value + b.value

    def vjp(g):
        ga = g.sum() if a.value.shape == () and g.shape != () else g
        gb = g.sum() if b.value.shape == () and g.shape != () else g
        return np.asarray(ga), np.asarray(gb)

    return Node(out, (a, b), vjp)


def mul(a: Node, b: Node) -> Node:
    """Elementwise multiply; one side may be a scalar, broadcast to the other."""
    _binary_broadcast(a, b, "mul")
    out = a.value * b.value

    def vjp(g):
        ga = g * b.value
        gb = g * a.value
        if a.value.shape == () and ga.shape != ():
            ga = ga.sum()
        if b.value.shape == () and gb.shape != ():
            gb = gb.sum()
        return np.asarray(ga), np.asarray(gb)

    return Node(out, (a, b), vjp)


def scalar_mul(a: Node, c: float) -> Node:
    c = float(c)
    return Node(a.value * c, (a,), lambda g: (g * c,))


def concat(nodes: Sequence[Node], axis: int = 0) -> Node:
    """Concatenate along an existing axis."""
    nodes = list(nodes)
    _require(len(nodes) > 0, "concat of nothing")
    values = [n.value for n in nodes]
    ndim = values[0].ndim
    _require(all(v.ndim == ndim for v in values), "concat rank mismatch")
    out = np.concatenate(values, axis=axis)
    sizes = [v.shape[axis] for v in values]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(
            np.take(g, range(offsets[k], offsets[k + 1]), axis=axis)
            for k in range(len(nodes))
        )

    return Node(out, tuple(nodes), vjp)


def stack(nodes: Sequence[Node]) -> Node:
    """Stack equal-shape nodes along a new leading axis."""
    nodes = list(nodes)
    _require(len(nodes) > 0, "stack of nothing")
    shape0 = nodes[0].value.shape
    _require(
        all(n.value.shape == shape0 for n in nodes),
        f"stack needs uniform shapes, first is {shape0}",
    )
    out = np.stack([n.value for n in nodes])

    def vjp(g):
        return tuple(g[k] for k in range(len(nodes)))

    return Node(out, tuple(nodes), vjp)


def row_select(a: Node, i: int) -> Node:
    """Row i of a matrix (or element i of a vector)."""
    _require(a.value.ndim >= 1, f"row_select needs ndim>=1, got shape {a.value.shape}")
    i = int(i)
    out = a.value[i]

    def vjp(g):
        ga = np.zeros_like(a.value)
        ga[i] = g
        return (ga,)

    return Node(out, (a,), vjp)


def slice1d(a: Node, start: int, stop: int) -> Node:
    """Contiguous slice of a vector."""
    _require(a.value.ndim == 1, f"slice1d needs a vector, got shape {a.value.shape}")
    out = a.value[start:stop]

    def vjp(g):
        ga = np.zeros_like(a.value)
        ga[start:stop] = g
        return (ga,)

    return Node(out, (a,), vjp)


def softmax_masked(a: Node, mask) -> Node:
    """Softmax over the mask-selected entries; masked entries are exactly 0.

    1-D: one distribution. 2-D: row-wise distributions with a same-shape mask.
    Every row must keep at least one active entry.
    """
    mask = np.asarray(mask, dtype=bool)
    _require(mask.shape == a.value.shape, f"mask {mask.shape} vs value {a.value.shape}")
    v = a.value
    if v.ndim == 1:
        _require(mask.any(), "softmax over an empty mask")
        shifted = np.where(mask, v - np.max(v[mask]), -np.inf)
        e = np.where(mask, np.exp(shifted), 0.0)
        out = e / e.sum()
    elif v.ndim == 2:
        _require(bool(mask.any(axis=1).all()), "softmax row with empty mask")
        row_max = np.where(mask, v, -np.inf).max(axis=1, keepdims=True)
        e = np.where(mask, np.exp(v - row_max), 0.0)
        out = e / e.sum(axis=1, keepdims=True)
    else:
        raise ShapeMismatchError(f"softmax_masked supports 1-D/2-D, got {v.shape}")

    def vjp(g):
        if v.ndim == 1:
            inner = float((g * out).sum())
            ga = out * (g - inner)
        else:
            inner = (g * out).sum(axis=1, keepdims=True)
            ga = out * (g - inner)
        return (np.where(mask, ga, 0.0),)

    return Node(out, (a,), vjp)


def exp(a: Node) -> Node:
    out = np.exp(a.value)
    return Node(out, (a,), lambda g: (g * out,))


def log(a: Node) -> Node:
    return Node(np.log(a.value), (a,), lambda g: (g / a.value,))


def tanh(a: Node) -> Node:
    out = np.tanh(a.value)
    return Node(out, (a,), lambda g: (g * (1.0 - out * out),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Node) -> Node:
    out = _sigmoid(np.atleast_1d(a.value)).reshape(a.value.shape)
    return Node(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a: Node) -> Node:
    out = np.logaddexp(0.0, a.value)
    return Node(out, (a,), lambda g: (g * _sigmoid(np.atleast_1d(a.value)).reshape(a.value.shape),))


def vsum(a: Node) -> Node:
    return Node(a.value.sum(), (a,), lambda g: (np.full_like(a.value, float(g)),))


def vmean(a: Node) -> Node:
    n = a.value.size
    return Node(a.value.mean(), (a,), lambda g: (np.full_like(a.value, float(g) / n),))


def _topo_order(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(root: Node) -> None:
    """Accumulate d(root)/d(node) into .grad for every node reachable from root."""
    if root.value.shape != ():
        raise NonScalarRootError(f"backward root must be scalar, got shape {root.value.shape}")
    order = _topo_order(root)
    local: dict[int, np.ndarray] = {id(root): np.ones(())}
    for node in reversed(order):
        g = local.get(id(node))
        if g is None:
            continue
        if node._vjp is not None:
            parent_grads = node._vjp(g)
            for parent, pg in zip(node._parents, parent_grads):
                pid = id(parent)
                if pid in local:
                    local[pid] = local[pid] + pg
                else:
                    local[pid] = np.asarray(pg, dtype=np.float64)
    for node in order:
        g = local.get(id(node))
        if g is None:
            continue
        if node.grad is None:
            node.grad = np.array(g, dtype=np.float64)
        else:
            node.grad = node.grad + g


@dataclass(frozen=True)
class AdamConfig:
    alpha: float
    beta1: float = 0.9
    beta2: float = 0.99
    epsilon: float = 1e-8

    def __post_init__(self):
        assert self.alpha > 0
        assert 0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0
        assert self.epsilon > 0


class _AdamState:
    __slots__ = ("m", "v", "step")

    def __init__(self, shape):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.step = 0


class ParameterStore:
    """Named trainable parameters with per-parameter Adam state."""

    def __init__(self):
        self._params: dict[str, Node] = {}
        self._adam: dict[str, _AdamState] = {}

    def add(self, name: str, value) -> Node:
        if name in self._params:
            raise ValueError(f"duplicate parameter {name!r}")
        node = Node(np.array(value, dtype=np.float64))
        self._params[name] = node
        self._adam[name] = _AdamState(node.value.shape)
        return node

    def share(self, name: str, node: Node) -> Node:
        """Register an existing node under this store too.

        Both stores then step the same underlying array; callers opting in
        accept that each store's update visibly mutates the other's values.
        """
        if name in self._params:
            raise ValueError(f"duplicate parameter {name!r}")
        self._params[name] = node
        self._adam[name] = _AdamState(node.value.shape)
        return node

    def __getitem__(self, name: str) -> Node:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grads(self) -> None:
        for node in self._params.values():
            node.grad = None

    def checksum(self) -> int:
        """Order-sensitive hash of all parameter bytes, for freeze asserts."""
        import hashlib

        h = hashlib.sha256()
        for name, node in self._params.items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(node.value).tobytes())
        return int.from_bytes(h.digest()[:8], "big")

    def adam_state(self, name: str) -> _AdamState:
        return self._adam[name]


def adam_step(store: ParameterStore, cfg: AdamConfig) -> None:
    """One bias-corrected Adam update; consumes and zeroes gradients.

    Parameters whose grad was never populated are skipped entirely: their
    moments and step count do not advance.
    """
    for name, node in store.items():
        g = node.grad
        if g is None:
            continue
        if g.shape != node.value.shape:
            raise ShapeMismatchError(
                f"grad shape {g.shape} vs parameter {name!r} shape {node.value.shape}"
            )
        st = store.adam_state(name)
        st.step += 1
        st.m = cfg.beta1 * st.m + (1.0 - cfg.beta1) * g
        st.v = cfg.beta2 * st.v + (1.0 - cfg.beta2) * (g * g)
        m_hat = st.m / (1.0 - cfg.beta1**st.step)
        v_hat = st.v / (1.0 - cfg.beta2**st.step)
        node.value = node.value - cfg.alpha * m_hat / (np.sqrt(v_hat) + cfg.epsilon)
        node.grad = None


CHECKPOINT_FORMAT = "eventwalk-checkpoint"
CHECKPOINT_VERSION = 1


def _store_payload(store: ParameterStore) -> dict:
    params = {}
    adam = {}
    for name, node in store.items():
        params[name] = {
            "shape": list(node.value.shape),
            "data": np.ascontiguousarray(node.value).ravel().tolist(),
        }
        st = store.adam_state(name)
        adam[name] = {
            "m": st.m.ravel().tolist(),
            "v": st.v.ravel().tolist(),
            "step": st.step,
        }
    return {"params": params, "adam": adam}


def _store_from_payload(payload: dict) -> ParameterStore:
    store = ParameterStore()
    for name, spec in payload["params"].items():
        shape = tuple(spec["shape"])
        value = np.array(spec["data"], dtype=np.float64).reshape(shape)
        store.add(name, value)
        st = store.adam_state(name)
        aspec = payload["adam"][name]
        st.m = np.array(aspec["m"], dtype=np.float64).reshape(shape)
        st.v = np.array(aspec["v"], dtype=np.float64).reshape(shape)
        st.step = int(aspec["step"])
    return store


def save_checkpoint(
    path: str | Path,
    stores: dict[str, Optional[ParameterStore]],
    meta: Optional[dict] = None,
) -> None:
    """Versioned JSON checkpoint; floats serialize via repr so the round trip
    is bit-exact. Byte output is deterministic for a fixed store."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "meta": meta or {},
        "stores": {
            key: (_store_payload(store) if store is not None else None)
            for key, store in stores.items()
        },
    }
    Path(path).write_text(json.dumps(payload, separators=(",", ":")) + "\n")


def load_checkpoint(path: str | Path) -> tuple[dict[str, Optional[ParameterStore]], dict]:
    try:
        payload = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise CheckpointError(f"unreadable checkpoint {path}: {err}") from err
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"not a checkpoint file: {path}")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {payload.get('version')}")
    stores = {
        key: (_store_from_payload(spec) if spec is not None else None)
        for key, spec in payload["stores"].items()
    }
    return stores, payload["meta"]
