"""Minimal reverse-mode autodiff over dense float64 numpy arrays.

Only the operations the layers in this package need are implemented; there
is deliberately no general broadcasting matmul, no views, no in-place graph
surgery. Values are validated to be finite at construction, so a divergence
(NaN/Inf) surfaces at the op that produced it instead of three layers later.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class NonFiniteError(ValueError):
    """Raised when a tensor would contain NaN or Inf."""


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("tensor values must be finite (got NaN or Inf)")
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum-reduce grad back to `shape` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """A node in the computation graph holding a float64 array."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    # -- constructors -----------------------------------------------------

    @staticmethod
    def _op(data: np.ndarray, parents: Sequence["Tensor"],
            backward: Callable[[np.ndarray], None]) -> "Tensor":
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    # -- bookkeeping -------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar node."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic ---------------------------------------------------------

    def _coerce(self, other) -> "Tensor":
        return other if isinstance(other, Tensor) else Tensor(other)

    def __add__(self, other) -> "Tensor":
        other = self._coerce(other)
        out_data = self.data + other.data

        def backward(g: np.ndarray) -> None:
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.data.shape))

        return Tensor._op(out_data, (self, other), backward)

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        def backward(g: np.ndarray) -> None:
            self._accumulate(-g)

        return Tensor._op(-self.data, (self,), backward)

    def __sub__(self, other) -> "Tensor":
        return self + (-self._coerce(other))

    def __rsub__(self, other) -> "Tensor":
        return self._coerce(other) + (-self)

    def __mul__(self, other) -> "Tensor":
        other = self._coerce(other)
        out_data = self.data * other.data

        def backward(g: np.ndarray) -> None:
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.data, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.data, other.data.shape))

        return Tensor._op(out_data, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, scalar: float) -> "Tensor":
        return self * (1.0 / float(scalar))

    def __matmul__(self, other: "Tensor") -> "Tensor":
        other = self._coerce(other)
        a, b = self.data, other.data
        if a.ndim not in (1, 2) or b.ndim not in (1, 2):
            raise ValueError(f"matmul supports 1-D/2-D operands, got {a.ndim}-D @ {b.ndim}-D")
        out_data = a @ b

        def backward(g: np.ndarray) -> None:
            if self.requires_grad:
                if a.ndim == 2 and b.ndim == 2:
                    self._accumulate(g @ b.T)
                elif a.ndim == 2 and b.ndim == 1:
                    self._accumulate(np.outer(g, b))
                elif a.ndim == 1 and b.ndim == 2:
                    self._accumulate(b @ g)
                else:
                    self._accumulate(g * b)
            if other.requires_grad:
                if a.ndim == 2 and b.ndim == 2:
                    other._accumulate(a.T @ g)
                elif a.ndim == 2 and b.ndim == 1:
                    other._accumulate(a.T @ g)
                elif a.ndim == 1 and b.ndim == 2:
                    other._accumulate(np.outer(a, g))
                else:
                    other._accumulate(g * a)

        return Tensor._op(out_data, (self, other), backward)

    # -- shape ops -----------------------------------------------------------

    def transpose(self) -> "Tensor":
        if self.data.ndim != 2:
            raise ValueError("transpose expects a 2-D tensor")

        def backward(g: np.ndarray) -> None:
            self._accumulate(g.T)

        return Tensor._op(self.data.T.copy(), (self,), backward)

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def reshape(self, *shape: int) -> "Tensor":
        orig = self.data.shape

        def backward(g: np.ndarray) -> None:
            self._accumulate(g.reshape(orig))

        return Tensor._op(self.data.reshape(shape), (self,), backward)

    def narrow(self, axis: int, start: int, length: int) -> "Tensor":
        idx: list[slice] = [slice(None)] * self.data.ndim
        idx[axis] = slice(start, start + length)
        sel = tuple(idx)

        def backward(g: np.ndarray) -> None:
            full = np.zeros_like(self.data)
            full[sel] = g
            self._accumulate(full)

        return Tensor._op(self.data[sel].copy(), (self,), backward)

    def take(self, indices) -> "Tensor":
        """Select rows along axis 0 (duplicates allowed); serves embedding lookup."""
        idx = np.asarray(indices, dtype=np.intp)

        def backward(g: np.ndarray) -> None:
            full = np.zeros_like(self.data)
            np.add.at(full, idx, g)
            self._accumulate(full)

        return Tensor._op(self.data[idx].copy(), (self,), backward)

    def gather_cols(self, col_indices) -> "Tensor":
        """out[i] = self[i, col_indices[i]] for a 2-D tensor."""
        if self.data.ndim != 2:
            raise ValueError("gather_cols expects a 2-D tensor")
        cols = np.asarray(col_indices, dtype=np.intp)
        rows = np.arange(self.data.shape[0])

        def backward(g: np.ndarray) -> None:
            full = np.zeros_like(self.data)
            np.add.at(full, (rows, cols), g)
            self._accumulate(full)

        return Tensor._op(self.data[rows, cols].copy(), (self,), backward)

    # -- nonlinearities -------------------------------------------------------

    def relu(self) -> "Tensor":
        mask = self.data > 0

        def backward(g: np.ndarray) -> None:
            self._accumulate(g * mask)

        return Tensor._op(np.maximum(self.data, 0.0), (self,), backward)

    def exp(self) -> "Tensor":
        out_data = np.exp(self.data)

        def backward(g: np.ndarray) -> None:
            self._accumulate(g * out_data)

        return Tensor._op(out_data, (self,), backward)

    def log(self) -> "Tensor":
        def backward(g: np.ndarray) -> None:
            self._accumulate(g / self.data)

        return Tensor._op(np.log(self.data), (self,), backward)

    # -- reductions -------------------------------------------------------------

    def sum(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def backward(g: np.ndarray) -> None:
            if axis is None:
                self._accumulate(np.broadcast_to(g, self.data.shape).copy())
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
                self._accumulate(np.broadcast_to(gg, self.data.shape).copy())

        return Tensor._op(out_data, (self,), backward)

    def mean(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        count = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # -- softmax family -----------------------------------------------------------

    def softmax(self, axis: int = -1) -> "Tensor":
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        p = e / e.sum(axis=axis, keepdims=True)

        def backward(g: np.ndarray) -> None:
            inner = (g * p).sum(axis=axis, keepdims=True)
            self._accumulate(p * (g - inner))

        return Tensor._op(p, (self,), backward)

    def log_softmax(self, axis: int = -1) -> "Tensor":
        m = self.data.max(axis=axis, keepdims=True)
        shifted = self.data - m
        lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
        out_data = shifted - lse

        def backward(g: np.ndarray) -> None:
            p = np.exp(out_data)
            self._accumulate(g - p * g.sum(axis=axis, keepdims=True))

        return Tensor._op(out_data, (self,), backward)

    def normalize(self, eps: float = 1e-6) -> "Tensor":
        """Zero-mean unit-variance rescale along the last axis (layer-norm core)."""
        mu = self.data.mean(axis=-1, keepdims=True)
        xc = self.data - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        y = xc * inv

        def backward(g: np.ndarray) -> None:
            gm = g.mean(axis=-1, keepdims=True)
            gym = (g * y).mean(axis=-1, keepdims=True)
            self._accumulate(inv * (g - gm - y * gym))

        return Tensor._op(y, (self,), backward)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate along an axis; gradient splits back to the inputs."""
    if not tensors:
        raise ValueError("concat requires at least one tensor")
    datas = [t.data for t in tensors]
    out_data = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def backward(g: np.ndarray) -> None:
        for t, start, size in zip(tensors, offsets[:-1], sizes):
            if t.requires_grad:
                idx: list[slice] = [slice(None)] * g.ndim
                idx[axis] = slice(start, start + size)
                t._accumulate(g[tuple(idx)])

    return Tensor._op(out_data, tuple(tensors), backward)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()
