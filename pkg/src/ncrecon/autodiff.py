"""Minimal reverse-mode automatic differentiation over real numpy arrays.

Each forward call records a node holding its value, its parents and a
closure that pushes the output gradient back to them.  ``backward`` on a
scalar node walks the graph in reverse topological order.
"""
from __future__ import annotations

from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Tensor:
    __slots__ = ("value", "grad", "parents", "_backward", "requires_grad", "op")

    def __init__(self, value, parents=(), backward=None, op: str = "", requires_grad: bool = False):
        self.value = np.asarray(value)
        self.grad = None
        self.parents = tuple(parents)
        self._backward = backward
        self.op = op
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(op={self.op or 'leaf'}, shape={self.value.shape})"

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=self.value.dtype, copy=True)
        else:
            self.grad += g

    def backward(self):
        """Back-propagate from this scalar node into every reachable leaf."""
        if self.value.size != 1:
            raise ValueError(f"backward needs a scalar output, got shape {self.value.shape}")
        if not self.parents:
            raise RuntimeError("backward called on a node with no recorded graph")
        order, seen, stack = [], set(), [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        grads = {id(self): np.ones_like(self.value)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node.parents:
                node._accumulate(g)
                continue
            if node._backward is None:
                raise RuntimeError(f"graph for node {node!r} was already released")
            for parent, pg in zip(node.parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg
            node._backward = None

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def parameter(value) -> Tensor:
    return Tensor(value, requires_grad=True)


def constant(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    if int(np.prod(shape, dtype=np.int64)) == 1:
        return np.asarray(g.sum()).reshape(shape)
    raise ValueError(f"cannot reduce gradient of shape {g.shape} to {shape}")


def _check_broadcast(a, b):
    if a.shape != b.shape and a.value.size != 1 and b.value.size != 1:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def add(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _check_broadcast(a, b)
    return Tensor(a.value + b.value, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _check_broadcast(a, b)
    return Tensor(a.value - b.value, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    """Elementwise product; either side may be a single-element tensor."""
    a, b = constant(a), constant(b)
    _check_broadcast(a, b)
    return Tensor(a.value * b.value, (a, b),
                  lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)),
                  "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return Tensor(a.value * np.asarray(c, a.value.dtype), (a,), lambda g: (g * c,), "scale")


def relu(a: Tensor) -> Tensor:
    mask = a.value > 0
    return Tensor(a.value * mask, (a,), lambda g: (g * mask,), "relu")


def l1_loss(a: Tensor) -> Tensor:
    """Sum of absolute values; the subgradient at 0 is 0."""
    sign = np.sign(a.value)
    return Tensor(np.abs(a.value).sum(), (a,), lambda g: (g * sign,), "l1")


def sum_all(a: Tensor) -> Tensor:
    return Tensor(a.value.sum(), (a,), lambda g: (np.broadcast_to(g, a.shape),), "sum")


def square_sum(a: Tensor) -> Tensor:
    return Tensor((a.value**2).sum(), (a,), lambda g: (2 * g * a.value,), "sqsum")


def linear(a: Tensor, forward: Callable, adjoint: Callable, op: str = "linear") -> Tensor:
    """Apply a real-linear map whose backward is its (real) adjoint."""
    return Tensor(forward(a.value), (a,), lambda g: (adjoint(g),), op)


def concat(tensors, axis: int = 0) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return Tensor(np.concatenate([t.value for t in tensors], axis=axis), tuple(tensors),
                  lambda g: tuple(np.split(g, splits, axis=axis)), "concat")


def _im2col(x, k):
    pad = k // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (k, k), axis=(1, 2))  # (C, H, W, k, k)
    c, h, w = x.shape
    return np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2)).reshape(c * k * k, h * w)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Stride-1 'same' convolution (cross-correlation) with zero padding.

    ``x``: ``(Cin, H, W)``; ``weight``: ``(Cout, Cin, k, k)`` with odd ``k``;
    ``bias``: ``(Cout,)``.
    """
    cout, cin, k, k2 = weight.shape
    if k != k2 or k % 2 == 0:
        raise ValueError(f"kernel must be square with odd size, got {weight.shape}")
    if x.shape[0] != cin:
        raise ValueError(f"input has {x.shape[0]} channels, kernel expects {cin}")
    _, h, w = x.shape
    cols = _im2col(x.value, k)
    w2 = weight.value.reshape(cout, -1)
    out = (w2 @ cols).reshape(cout, h, w)
    if bias is not None:
        out += bias.value[:, None, None]

    def backward(g):
        g2 = g.reshape(cout, -1)
        gw = (g2 @ cols.T).reshape(weight.shape) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            flipped = weight.value[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(cin, -1)
            gx = (flipped @ _im2col(g, k)).reshape(x.shape)
        gb = g.sum(axis=(1, 2)) if bias is not None else None
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return Tensor(out, parents, backward, "conv2d")


def avg_pool2(x: Tensor) -> Tensor:
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"avg_pool2 needs even spatial size, got {x.shape}")

    def fwd(v):
        return v.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))

    def adj(g):
        return np.repeat(np.repeat(g, 2, axis=1), 2, axis=2) / 4

    return linear(x, fwd, adj, "avgpool")


def upsample2(x: Tensor) -> Tensor:
    c, h, w = x.shape

    def fwd(v):
        return np.repeat(np.repeat(v, 2, axis=1), 2, axis=2)

    def adj(g):
        return g.reshape(c, h, 2, w, 2).sum(axis=(2, 4))

    return linear(x, fwd, adj, "upsample")


class ParamStore:
    """Named trainable arrays plus Adam moment buffers."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = parameter(np.array(value, copy=True))
        self.params[name] = t
        self.m[name] = np.zeros_like(t.value)
        self.v[name] = np.zeros_like(t.value)
        return t

    def __getitem__(self, name) -> Tensor:
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def n_parameters(self) -> int:
        return int(sum(t.value.size for t in self.params.values()))

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        return {k: (t.grad if t.grad is not None else np.zeros_like(t.value))
                for k, t in self.params.items()}

    def state(self) -> dict[str, np.ndarray]:
        return {k: t.value.copy() for k, t in self.params.items()}

    def load_state(self, values: dict[str, np.ndarray]):
        for k, v in values.items():
            if k not in self.params:
                raise KeyError(f"unknown parameter {k!r}")
            if v.shape != self.params[k].value.shape:
                raise ValueError(f"parameter {k!r}: shape {v.shape} != {self.params[k].value.shape}")
            self.params[k].value = np.array(v, dtype=self.params[k].value.dtype)


def adam_step(store: ParamStore, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """Bias-corrected Adam update of every parameter; gradients are cleared afterwards."""
    grads = store.grads()
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    store.step += 1
    t = store.step
    c1 = 1 - beta1**t
    c2 = 1 - beta2**t
    for name, g in grads.items():
        p = store.params[name]
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        p.value = p.value - (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.value.dtype)
    store.zero_grad()
