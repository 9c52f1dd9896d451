"""Reverse-mode automatic differentiation over numpy arrays.

Each recorded operation produces one Var node holding a float64 array, its
parent nodes, and the vector-Jacobian closures used on the way back.  The
op set is deliberately small: elementwise arithmetic, abs/square/sqrt/exp/
log, sigmoid and ReLU, matrix-vector product, single-channel 1D convolution,
the reductions sum/mean/std, plus indexing and reshape so mesh quantities
can be assembled from flat parameter vectors.

Also home to the Adam optimizer and global-norm gradient clipping used by
the training loops.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np
from numpy.typing import NDArray

# Guard against 0/0 in sqrt/std backward passes; matches the epsilon scale
# used by the loss definitions.
_EPS = 1e-8


def _unbroadcast(g: NDArray, shape: tuple) -> NDArray:
    """Reduce gradient g back to `shape` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Var:
    """Node in the computation graph; wraps a float64 numpy array."""

    __slots__ = ("value", "grad", "_parents", "_vjps")

    def __init__(self, value, _parents=(), _vjps=()):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: NDArray | None = None
        self._parents: tuple[Var, ...] = _parents
        self._vjps = _vjps

    @property
    def shape(self):
        return self.value.shape

    def backward(self) -> None:
        """Accumulate gradients of self (summed to a scalar seed) into .grad."""
        order: list[Var] = []
        seen: set[int] = set()
        stack: list[tuple[Var, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node.grad is None:
                continue
            g = node.grad
            for parent, vjp in zip(node._parents, node._vjps):
                contrib = vjp(g)
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.value)
                parent.grad += contrib

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        a, b = self, as_var(other)
        return Var(a.value + b.value, (a, b),
                   (lambda g: _unbroadcast(g, a.shape),
                    lambda g: _unbroadcast(g, b.shape)))

    __radd__ = __add__

    def __sub__(self, other):
        a, b = self, as_var(other)
        return Var(a.value - b.value, (a, b),
                   (lambda g: _unbroadcast(g, a.shape),
                    lambda g: _unbroadcast(-g, b.shape)))

    def __rsub__(self, other):
        return as_var(other) - self

    def __mul__(self, other):
        a, b = self, as_var(other)
        return Var(a.value * b.value, (a, b),
                   (lambda g: _unbroadcast(g * b.value, a.shape),
                    lambda g: _unbroadcast(g * a.value, b.shape)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        a, b = self, as_var(other)
        return Var(a.value / b.value, (a, b),
                   (lambda g: _unbroadcast(g / b.value, a.shape),
                    lambda g: _unbroadcast(-g * a.value / (b.value * b.value), b.shape)))

    def __rtruediv__(self, other):
        return as_var(other) / self

    def __neg__(self):
        a = self
        return Var(-a.value, (a,), (lambda g: -g,))

    # -- shape plumbing -----------------------------------------------------

    def __getitem__(self, idx):
        a = self

        def vjp(g):
            out = np.zeros_like(a.value)
            np.add.at(out, idx, g)
            return out

        return Var(a.value[idx], (a,), (vjp,))

    def reshape(self, *shape):
        a = self
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Var(a.value.reshape(shape), (a,),
                   (lambda g: g.reshape(a.value.shape),))


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


# -- elementwise functions --------------------------------------------------

def absolute(x: Var) -> Var:
    x = as_var(x)
    # sign(0) = 0: the subgradient at the kink is taken as 0.
    return Var(np.abs(x.value), (x,), (lambda g: g * np.sign(x.value),))


def square(x: Var) -> Var:
    x = as_var(x)
    return Var(x.value * x.value, (x,), (lambda g: g * 2.0 * x.value,))


def sqrt(x: Var) -> Var:
    x = as_var(x)
    y = np.sqrt(x.value)
    return Var(y, (x,), (lambda g: g * 0.5 / np.maximum(y, _EPS),))


def exp(x: Var) -> Var:
    x = as_var(x)
    y = np.exp(x.value)
    return Var(y, (x,), (lambda g: g * y,))


def log(x: Var) -> Var:
    x = as_var(x)
    return Var(np.log(x.value), (x,), (lambda g: g / x.value,))


def sigmoid(x: Var) -> Var:
    x = as_var(x)
    # exp only ever sees non-positive arguments, so it cannot overflow
    v = np.asarray(x.value, dtype=np.float64)
    e = np.exp(-np.abs(v))
    y = np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return Var(y, (x,), (lambda g: g * y * (1.0 - y),))


def relu(x: Var) -> Var:
    x = as_var(x)
    mask = x.value > 0
    return Var(np.where(mask, x.value, 0.0), (x,), (lambda g: g * mask,))


# -- linear algebra ---------------------------------------------------------

def matvec(w: Var, x: Var) -> Var:
    """Matrix-vector product: w (m, n) @ x (n,) -> (m,)."""
    w, x = as_var(w), as_var(x)
    return Var(w.value @ x.value, (w, x),
               (lambda g: np.outer(g, x.value),
                lambda g: w.value.T @ g))


def conv1d(x: Var, kernel: Var) -> Var:
    """Single-channel 1D cross-correlation, same-length zero-padded output.

    out[i] = sum_j kernel[j] * x[i + j - (K-1)//2], entries off either end
    of x contributing zero.
    """
    x, kernel = as_var(x), as_var(kernel)
    n, k = x.value.shape[0], kernel.value.shape[0]
    left = (k - 1) // 2
    xp = np.pad(x.value, (left, k - 1 - left))
    y = np.convolve(xp, kernel.value[::-1], mode="valid")

    def vjp_x(g):
        return np.convolve(g, kernel.value, mode="full")[left:left + n]

    def vjp_k(g):
        return np.convolve(xp, g[::-1], mode="valid")

    return Var(y, (x, kernel), (vjp_x, vjp_k))


# -- reductions -------------------------------------------------------------

def total(x: Var) -> Var:
    """Sum of all entries."""
    x = as_var(x)
    return Var(x.value.sum(), (x,), (lambda g: np.broadcast_to(g, x.shape).copy(),))


def mean(x: Var) -> Var:
    x = as_var(x)
    n = x.value.size
    return Var(x.value.mean(), (x,),
               (lambda g: np.broadcast_to(g / n, x.shape).copy(),))


def std(x: Var, ddof: int = 0) -> Var:
    """Standard deviation; population convention (ddof=0) by default."""
    x = as_var(x)
    n = x.value.size
    mu = x.value.mean()
    s = x.value.std(ddof=ddof)

    def vjp(g):
        # At a perfectly uniform input the derivative is taken as 0.
        return g * (x.value - mu) / ((n - ddof) * max(s, _EPS))

    return Var(s, (x,), (vjp,))


# -- training utilities -----------------------------------------------------

def gradients(loss: Var, params: Sequence[Var]) -> list[NDArray]:
    """Run backward from a scalar loss; return gradient arrays per parameter."""
    loss.backward()
    return [p.grad if p.grad is not None else np.zeros_like(p.value)
            for p in params]


def clip_gradients(grads: Iterable[NDArray], threshold: float = 1.0) -> list[NDArray]:
    """Scale gradients so their global L2 norm does not exceed threshold."""
    grads = [np.asarray(g, dtype=np.float64) for g in grads]
    norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if norm <= threshold or norm == 0.0:
        return grads
    scale = threshold / norm
    return [g * scale for g in grads]


class Adam:
    """Adam with bias correction; state arrays match the parameter shapes."""

    def __init__(self, params: Sequence[NDArray], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params: Sequence[NDArray], grads: Sequence[NDArray]) -> None:
        """Update parameter arrays in place."""
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
