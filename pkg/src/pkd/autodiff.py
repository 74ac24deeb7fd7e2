"""Minimal dense-tensor reverse-mode automatic differentiation.

Values are float64 numpy arrays.  Nodes form a dynamic DAG rebuilt on every
forward pass; `backward` walks the DAG once in reverse topological order.
Every node's output is checked for NaN/Inf at creation time.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

LOG_FLOOR = 1e-12


class AutodiffError(RuntimeError):
    pass


class ShapeError(AutodiffError):
    pass


class NonFiniteError(AutodiffError):
    pass


class Node:
    """One value in the computation graph, with the vjp closures of its inputs."""

    __slots__ = ("value", "op", "parents", "vjps", "uid")
    _counter = 0

    def __init__(self, value, op: str = "leaf", parents: tuple = (), vjps: tuple = ()):
        value = np.asarray(value, dtype=np.float64)
        Node._counter += 1
        self.uid = Node._counter
        if not np.all(np.isfinite(value)):
            raise NonFiniteError(f"non-finite value produced by op {op!r} (node {self.uid})")
        self.value = value
        self.op = op
        self.parents = parents
        self.vjps = vjps

    @property
    def shape(self):
        return self.value.shape


def _unary(x: Node, op: str, value: np.ndarray, vjp: Callable) -> Node:
    return Node(value, op, (x,), (vjp,))


def affine(x: Node, w: Node, b: Node) -> Node:
    """x @ w.T + b with x of shape (m, din) or (din,); w (dout, din); b (dout,)."""
    xv = x.value
    if w.value.ndim != 2 or b.value.ndim != 1:
        raise ShapeError(f"affine: weight must be 2-d and bias 1-d (node after {w.uid})")
    dout, din = w.value.shape
    if xv.shape[-1] != din or b.value.shape[0] != dout:
        raise ShapeError(
            f"affine: input dim {xv.shape[-1]} vs weight ({dout},{din}), bias {b.value.shape}"
        )
    y = xv @ w.value.T + b.value

    def d_x(g):
        return g @ w.value

    def d_w(g):
        if xv.ndim == 1:
            return np.outer(g, xv)
        return g.T @ xv

    def d_b(g):
        return g if g.ndim == 1 else g.sum(axis=0)

    return Node(y, "affine", (x, w, b), (d_x, d_w, d_b))


def tanh(x: Node) -> Node:
    y = np.tanh(x.value)
    return _unary(x, "tanh", y, lambda g: g * (1.0 - y * y))


def sigmoid(x: Node) -> Node:
    y = 0.5 * (1.0 + np.tanh(0.5 * x.value))
    return _unary(x, "sigmoid", y, lambda g: g * y * (1.0 - y))


def log(x: Node) -> Node:
    """Natural log of max(x, LOG_FLOOR); gradient is zero where the floor binds."""
    clamped = np.maximum(x.value, LOG_FLOOR)
    inside = x.value > LOG_FLOOR
    return _unary(x, "log", np.log(clamped), lambda g: g * inside / clamped)


def exp(x: Node) -> Node:
    y = np.exp(x.value)
    return _unary(x, "exp", y, lambda g: g * y)


def _binary(a: Node, b: Node, op: str, value, da, db) -> Node:
    if a.value.shape != b.value.shape:
        raise ShapeError(f"{op}: shape mismatch {a.value.shape} vs {b.value.shape}")
    return Node(value, op, (a, b), (da, db))


def add(a: Node, b: Node) -> Node:
    return _binary(a, b, "add", a.value + b.value, lambda g: g, lambda g: g)


def sub(a: Node, b: Node) -> Node:
    return _binary(a, b, "sub", a.value - b.value, lambda g: g, lambda g: -g)


def mul(a: Node, b: Node) -> Node:
    return _binary(a, b, "mul", a.value * b.value, lambda g: g * b.value, lambda g: g * a.value)


def scale(x: Node, c: float) -> Node:
    return _unary(x, "scale", c * x.value, lambda g: c * g)


def shift(x: Node, c: float) -> Node:
    return _unary(x, "shift", x.value + c, lambda g: g)


def mean(x: Node) -> Node:
    n = x.value.size
    return _unary(x, "mean", np.asarray(x.value.mean()), lambda g: np.full(x.value.shape, g / n))


def ssum(x: Node) -> Node:
    return _unary(x, "sum", np.asarray(x.value.sum()), lambda g: np.full(x.value.shape, float(g)))


def clamp(x: Node, lo: float, hi: float) -> Node:
    y = np.clip(x.value, lo, hi)
    inside = (x.value > lo) & (x.value < hi)
    return _unary(x, "clamp", y, lambda g: g * inside)


def backward(root: Node, seed=1.0) -> dict[Node, np.ndarray]:
    """Accumulate d(root)/d(node) for every node reachable from root.

    `seed` is the upstream gradient at the root; it must match the root's
    shape (a python scalar is only valid for a scalar root).
    """
    seed = np.asarray(seed, dtype=np.float64)
    if seed.shape != root.value.shape:
        raise AutodiffError(
            f"backward seed shape {seed.shape} does not match output shape {root.value.shape}"
        )
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.uid in seen:
            continue
        seen.add(node.uid)
        stack.append((node, True))
        for p in node.parents:
            stack.append((p, False))

    grads: dict[int, np.ndarray] = {root.uid: seed}
    by_uid: dict[int, Node] = {root.uid: root}
    for node in reversed(order):
        g = grads.get(node.uid)
        if g is None:
            continue
        for parent, vjp in zip(node.parents, node.vjps):
            pg = np.asarray(vjp(g), dtype=np.float64)
            if parent.uid in grads:
                grads[parent.uid] = grads[parent.uid] + pg
            else:
                grads[parent.uid] = pg
            by_uid[parent.uid] = parent
    return {by_uid[uid]: g for uid, g in grads.items()}


class Graph:
    """A reusable computation: build(inputs, params) -> output Node.

    `forward` binds named input arrays and ParamVector segments to leaf nodes
    and caches the resulting DAG; `backward` then returns the gradient of the
    (scalar) output with respect to the full flat parameter vector.
    """

    def __init__(self, build: Callable[[dict, dict], Node]):
        self.build = build
        self.output: Node | None = None
        self.input_nodes: dict[str, Node] = {}
        self.param_nodes: dict[str, Node] = {}
        self._params = None

    def forward(self, inputs: dict[str, np.ndarray], params) -> np.ndarray:
        self.input_nodes = {k: Node(v, op=f"input:{k}") for k, v in inputs.items()}
        self.param_nodes = {
            name: Node(params.view(name), op=f"param:{name}") for name in params.names()
        }
        self._params = params
        self.output = self.build(self.input_nodes, self.param_nodes)
        return self.output.value

    def backward(self, seed=1.0) -> np.ndarray:
        """Gradient of the scalar output wrt every parameter, as a flat array."""
        if self.output is None:
            raise AutodiffError("backward called before forward")
        if np.ndim(seed) == 0 and self.output.value.shape != ():
            raise AutodiffError(f"output is not scalar (shape {self.output.value.shape})")
        grads = backward(self.output, seed)
        flat = np.zeros(self._params.size)
        for name, node in self.param_nodes.items():
            seg = self._params._index[name]
            if node in grads:
                flat[seg.offset : seg.offset + seg.size] = grads[node].ravel()
        return flat

    def input_grad(self, name: str, seed=1.0) -> np.ndarray:
        if self.output is None:
            raise AutodiffError("input_grad called before forward")
        grads = backward(self.output, seed)
        node = self.input_nodes[name]
        return grads.get(node, np.zeros(node.value.shape))
