"""Small reverse-mode autodiff engine over numpy arrays.

Graphs are built define-by-run: every operation returns a Tensor that records
its parents and a closure accumulating gradients into them. backward() does a
topological walk from the loss. Arrays are row-major float32 by default;
passing float64 inputs runs the whole graph in float64 (shadow mode for
gradient checks). Every op output is checked for NaN/Inf at construction.
"""

from __future__ import annotations

import numpy as np

finite_checks_enabled = True


class NumericsError(RuntimeError):
    """A tensor or gradient stopped being finite."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None, name=None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in parents)
        self.name = name
        self._parents = parents if self.requires_grad else ()
        self._backward_fn = backward_fn if self.requires_grad else None
        if finite_checks_enabled and not np.all(np.isfinite(arr)):
            raise NumericsError(f"non-finite values in tensor {name or '<anonymous>'}")

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.data.shape}, dtype={self.data.dtype})"

    def _accumulate(self, grad):
        grad = np.asarray(grad, dtype=self.data.dtype)
        if self.grad is None:
            self.grad = grad.copy()
        else:
            self.grad = self.grad + grad

    # -- elementwise -------------------------------------------------------

    def __add__(self, other):
        other = _as_tensor(other, self.dtype)
        out_data = self.data + other.data

        def bwd(g):
            self._accumulate(_unbroadcast(g, self.data.shape))
            other._accumulate(_unbroadcast(g, other.data.shape))

        return Tensor(out_data, parents=(self, other), backward_fn=bwd)

    __radd__ = __add__

    def __sub__(self, other):
        other = _as_tensor(other, self.dtype)
        out_data = self.data - other.data

        def bwd(g):
            self._accumulate(_unbroadcast(g, self.data.shape))
            other._accumulate(-_unbroadcast(g, other.data.shape))

        return Tensor(out_data, parents=(self, other), backward_fn=bwd)

    def __mul__(self, other):
        other = _as_tensor(other, self.dtype)
        out_data = self.data * other.data

        def bwd(g):
            self._accumulate(_unbroadcast(g * other.data, self.data.shape))
            other._accumulate(_unbroadcast(g * self.data, other.data.shape))

        return Tensor(out_data, parents=(self, other), backward_fn=bwd)

    __rmul__ = __mul__

    def __neg__(self):
        def bwd(g):
            self._accumulate(-g)

        return Tensor(-self.data, parents=(self,), backward_fn=bwd)

    # -- linear algebra ----------------------------------------------------

    def matmul(self, other: "Tensor") -> "Tensor":
        a, b = self, other
        out_data = np.matmul(a.data, b.data)

        def bwd(g):
            if a.data.ndim == 1 and b.data.ndim == 2:
                a._accumulate(np.matmul(b.data, g))
                b._accumulate(np.outer(a.data, g))
            elif a.data.ndim == 2 and b.data.ndim == 1:
                a._accumulate(np.outer(g, b.data))
                b._accumulate(np.matmul(a.data.T, g))
            elif a.data.ndim == b.data.ndim:
                a._accumulate(np.matmul(g, np.swapaxes(b.data, -1, -2)))
                b._accumulate(np.matmul(np.swapaxes(a.data, -1, -2), g))
            else:
                raise NotImplementedError(
                    f"matmul backward for ndim {a.data.ndim} @ {b.data.ndim}"
                )

        return Tensor(out_data, parents=(a, b), backward_fn=bwd)

    __matmul__ = matmul

    # -- shape manipulation --------------------------------------------------

    def reshape(self, *shape):
        old_shape = self.data.shape

        def bwd(g):
            self._accumulate(g.reshape(old_shape))

        return Tensor(self.data.reshape(*shape), parents=(self,), backward_fn=bwd)

    def transpose(self, axes):
        inverse = np.argsort(axes)

        def bwd(g):
            self._accumulate(g.transpose(inverse))

        return Tensor(self.data.transpose(axes), parents=(self,), backward_fn=bwd)

    # -- reductions ----------------------------------------------------------

    def sum(self):
        def bwd(g):
            self._accumulate(np.broadcast_to(g, self.data.shape))

        return Tensor(self.data.sum(), parents=(self,), backward_fn=bwd)

    def mean(self):
        n = self.data.size

        def bwd(g):
            self._accumulate(np.broadcast_to(g / n, self.data.shape))

        return Tensor(self.data.mean(), parents=(self,), backward_fn=bwd)

    def max_over_axis0(self):
        """Max pooling over axis 0; ties route the gradient to the first max."""
        idx = np.argmax(self.data, axis=0)

        def bwd(g):
            grad = np.zeros_like(self.data)
            cols = np.arange(self.data.shape[1]) if self.data.ndim == 2 else ()
            if self.data.ndim == 1:
                grad[idx] = g
            else:
                grad[idx, cols] = g
            self._accumulate(grad)

        return Tensor(self.data.max(axis=0), parents=(self,), backward_fn=bwd)

    # -- nonlinearities --------------------------------------------------------

    def relu(self):
        mask = self.data > 0

        def bwd(g):
            self._accumulate(g * mask)

        return Tensor(np.where(mask, self.data, 0.0), parents=(self,), backward_fn=bwd)

    def sigmoid(self):
        out_data = _stable_sigmoid(self.data)

        def bwd(g):
            self._accumulate(g * out_data * (1.0 - out_data))

        return Tensor(out_data, parents=(self,), backward_fn=bwd)

    def log(self):
        def bwd(g):
            self._accumulate(g / self.data)

        return Tensor(np.log(self.data), parents=(self,), backward_fn=bwd)

    def clip(self, lo: float, hi: float):
        mask = (self.data >= lo) & (self.data <= hi)

        def bwd(g):
            self._accumulate(g * mask)

        return Tensor(np.clip(self.data, lo, hi), parents=(self,), backward_fn=bwd)

    def softmax_lastaxis(self):
        shifted = self.data - self.data.max(axis=-1, keepdims=True)
        exp = np.exp(shifted)
        out_data = exp / exp.sum(axis=-1, keepdims=True)

        def bwd(g):
            inner = (g * out_data).sum(axis=-1, keepdims=True)
            self._accumulate(out_data * (g - inner))

        return Tensor(out_data, parents=(self,), backward_fn=bwd)


def _as_tensor(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def embedding(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)

    def bwd(g):
        grad = np.zeros_like(table.data)
        np.add.at(grad, ids, g)
        table._accumulate(grad)

    return Tensor(table.data[ids], parents=(table,), backward_fn=bwd)


def sliding_windows(x: Tensor, width: int) -> Tensor:
    """All width-sized windows of rows of x, each flattened: (T-w+1, w*E)."""
    t, e = x.data.shape
    n_windows = t - width + 1
    if n_windows < 1:
        raise ValueError(f"sequence length {t} shorter than window width {width}")
    out_data = np.empty((n_windows, width * e), dtype=x.data.dtype)
    for j in range(width):
        out_data[:, j * e : (j + 1) * e] = x.data[j : j + n_windows]

    def bwd(g):
        grad = np.zeros_like(x.data)
        for j in range(width):
            grad[j : j + n_windows] += g[:, j * e : (j + 1) * e]
        x._accumulate(grad)

    return Tensor(out_data, parents=(x,), backward_fn=bwd)


def concat(tensors: list[Tensor]) -> Tensor:
    """Concatenate 1-D tensors."""
    sizes = [t.data.shape[0] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            t._accumulate(g[lo:hi])

    return Tensor(np.concatenate([t.data for t in tensors]), parents=tuple(tensors), backward_fn=bwd)


def stack(tensors: list[Tensor]) -> Tensor:
    """Stack equal-shape tensors along a new leading axis."""

    def bwd(g):
        for i, t in enumerate(tensors):
            t._accumulate(g[i])

    return Tensor(np.stack([t.data for t in tensors]), parents=tuple(tensors), backward_fn=bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    std = np.sqrt(var + eps)
    xhat = (x.data - mu) / std
    out_data = gain.data * xhat + bias.data

    def bwd(g):
        d = x.data.shape[-1]
        dxhat = g * gain.data
        dx = (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        ) / std
        x._accumulate(dx)
        reduce_axes = tuple(range(g.ndim - 1))
        gain._accumulate((g * xhat).sum(axis=reduce_axes) if reduce_axes else g * xhat)
        bias._accumulate(g.sum(axis=reduce_axes) if reduce_axes else g)

    return Tensor(out_data, parents=(x, gain, bias), backward_fn=bwd)


def backward(loss: Tensor, store=None) -> None:
    """Reverse-mode accumulation from a scalar loss.

    Gradients of every tensor reachable from the loss are zeroed before
    accumulation, so stale values from earlier steps never leak. When a
    parameter store is given, its gradients are checked for finiteness and a
    NumericsError names the offending parameter.
    """
    if loss.data.ndim != 0:
        raise ValueError("backward requires a scalar loss")
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack_: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack_:
        node, processed = stack_.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited or not node.requires_grad:
            continue
        visited.add(id(node))
        stack_.append((node, True))
        for parent in node._parents:
            stack_.append((parent, False))
    for node in topo:
        node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward_fn is not None and node.grad is not None:
            node._backward_fn(node.grad)
    if store is not None:
        for name, param in store.items():
            if param.grad is not None and not np.all(np.isfinite(param.grad)):
                raise NumericsError(f"non-finite gradient for parameter {name!r}")
