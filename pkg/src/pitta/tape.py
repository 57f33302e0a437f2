"""Minimal reverse-mode differentiation over numpy arrays.

The op set is closed: elementwise algebra, reductions, matmul, 1-D conv,
channel normalization, ReLU, softmax and DFT power. Every op records a
backward closure on the output node; ``backward`` walks the graph in
reverse topological order.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class Var:
    __slots__ = ("value", "grad", "parents", "backward_fn", "name")
    __array_priority__ = 100.0

    def __init__(self, value, parents: Sequence["Var"] = (), backward_fn=None, name: str = ""):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.parents = tuple(parents)
        self.backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = backward_fn
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.value.shape}, name={self.name!r})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def constant(x) -> Var:
    return Var(np.array(x, dtype=np.float64, copy=True))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def backward(root: Var, seed: np.ndarray | None = None) -> None:
    """Accumulate d(root)/d(node) into ``node.grad`` for every reachable node."""
    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
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
            if id(p) not in seen:
                stack.append((p, False))

    for node in order:
        node.grad = None
    root.grad = np.ones_like(root.value) if seed is None else np.asarray(seed, dtype=np.float64)
    for node in reversed(order):
        if node.backward_fn is None or node.grad is None:
            continue
        for parent, g in zip(node.parents, node.backward_fn(node.grad)):
            if g is None:
                continue
            parent.grad = g if parent.grad is None else parent.grad + g


# ---------------------------------------------------------------------------
# elementwise algebra


def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return Var(a.value + b.value, (a, b),
               lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return Var(a.value - b.value, (a, b),
               lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return Var(a.value * b.value, (a, b),
               lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)))


def div(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out = a.value / b.value
    return Var(out, (a, b),
               lambda g: (_unbroadcast(g / b.value, a.shape),
                          _unbroadcast(-g * out / b.value, b.shape)))


def square(a) -> Var:
    a = as_var(a)
    return Var(a.value ** 2, (a,), lambda g: (2.0 * a.value * g,))


def sqrt(a) -> Var:
    a = as_var(a)
    out = np.sqrt(a.value)
    return Var(out, (a,), lambda g: (g / (2.0 * out),))


def log(a) -> Var:
    a = as_var(a)
    return Var(np.log(a.value), (a,), lambda g: (g / a.value,))


def exp(a) -> Var:
    a = as_var(a)
    out = np.exp(a.value)
    return Var(out, (a,), lambda g: (g * out,))


def relu(a) -> Var:
    a = as_var(a)
    mask = a.value > 0
    return Var(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# shape and reductions


def sum(a, axis=None, keepdims: bool = False) -> Var:  # noqa: A001
    a = as_var(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Var(out, (a,), bw)


def mean(a, axis=None, keepdims: bool = False) -> Var:
    a = as_var(a)
    n = a.value.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a, shape) -> Var:
    a = as_var(a)
    return Var(a.value.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def getitem(a, idx) -> Var:
    a = as_var(a)

    def bw(g):
        out = np.zeros_like(a.value)
        np.add.at(out, idx, g)
        return (out,)

    return Var(a.value[idx], (a,), bw)


def matmul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return Var(a.value @ b.value, (a, b),
               lambda g: (_unbroadcast(g @ np.swapaxes(b.value, -1, -2), a.shape),
                          _unbroadcast(np.swapaxes(a.value, -1, -2) @ g, b.shape)))


# ---------------------------------------------------------------------------
# network ops (channels-last layout: B x T x C)


def conv1d(x, w, b, stride: int) -> Var:
    """Valid 1-D convolution. x: (B,T,Cin), w: (k,Cin,Cout), b: (Cout,)."""
    x, w, b = as_var(x), as_var(w), as_var(b)
    k, cin, cout = w.shape
    B, T, _ = x.shape
    t_out = (T - k) // stride + 1
    if t_out < 1:
        raise ValueError(f"conv1d: input length {T} shorter than kernel {k}")
    idx = np.arange(t_out)[:, None] * stride + np.arange(k)[None, :]
    patches = x.value[:, idx, :].reshape(B, t_out, k * cin)
    wm = w.value.reshape(k * cin, cout)
    out = patches @ wm + b.value

    def bw(g):
        gw = patches.reshape(-1, k * cin).T @ g.reshape(-1, cout)
        gp = (g @ wm.T).reshape(B, t_out, k, cin)
        gx = np.zeros_like(x.value)
        span = stride * (t_out - 1) + 1
        for j in range(k):
            gx[:, j:j + span:stride, :] += gp[:, :, j, :]
        return gx, gw.reshape(k, cin, cout), g.sum(axis=(0, 1))

    return Var(out, (x, w, b), bw)


def channel_norm(x, gamma, beta, mean_: np.ndarray, var_: np.ndarray, eps: float,
                 batch_stats: bool) -> Var:
    """Affine channel normalization.

    With ``batch_stats`` the statistics ``mean_``/``var_`` were computed from
    ``x`` itself and the backward pass includes their dependence on ``x``.
    Otherwise they are treated as constants (stored running statistics).
    ``mean_``/``var_`` must broadcast against ``x`` and be reduced over
    exactly the axes that are normalized.
    """
    x, gamma, beta = as_var(x), as_var(gamma), as_var(beta)
    inv = 1.0 / np.sqrt(var_ + eps)
    xhat = (x.value - mean_) * inv
    out = gamma.value * xhat + beta.value
    red = tuple(i for i in range(x.value.ndim) if np.shape(mean_)[i] == 1) if batch_stats else ()
    n = int(np.prod([x.shape[i] for i in red])) if batch_stats else 1

    def bw(g):
        ggamma = _unbroadcast(g * xhat, gamma.shape)
        gbeta = _unbroadcast(g, beta.shape)
        gxhat = g * gamma.value
        if batch_stats:
            gx = inv / n * (n * gxhat - gxhat.sum(axis=red, keepdims=True)
                            - xhat * (gxhat * xhat).sum(axis=red, keepdims=True))
        else:
            gx = gxhat * inv
        return gx, ggamma, gbeta

    return Var(out, (x, gamma, beta), bw)


def softmax(logits) -> Var:
    """Row softmax over the last axis (shift-stabilized)."""
    logits = as_var(logits)
    z = logits.value - logits.value.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return Var(p, (logits,), bw)


def log_softmax(logits) -> Var:
    logits = as_var(logits)
    z = logits.value - logits.value.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def bw(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return Var(out, (logits,), bw)


def power_spectrum(x, axis: int = 1) -> Var:
    """|rfft(x)|^2 along ``axis`` for bins 1..floor(T/2) (DC dropped)."""
    x = as_var(x)
    T = x.shape[axis]
    F = T // 2
    # transform along a contiguous last axis; strided FFTs scale poorly with T
    X = np.fft.rfft(np.ascontiguousarray(np.moveaxis(x.value, axis, -1)), axis=-1)[..., 1:F + 1]
    out = np.moveaxis(X.real ** 2 + X.imag ** 2, -1, axis)

    def bw(g):
        # dP_k/dx_n = 2 Re(conj(X_k) e^{-2 pi i k n / T}); sum over k is a forward DFT.
        c = np.zeros(X.shape[:-1] + (T,), dtype=np.complex128)
        c[..., 1:F + 1] = np.moveaxis(g, axis, -1) * np.conj(X)
        return (np.moveaxis(2.0 * np.fft.fft(c, axis=-1).real, -1, axis),)

    return Var(out, (x,), bw)
