"""Minimal dense-tensor engine with reverse-mode differentiation.

Everything upstream (the relocation model, the consolidation penalty, the
Fisher estimator) is expressed as compositions of the primitive operations
defined here, so a single finite-difference check of this module covers the
gradients of the whole stack.

A :class:`Tape` records primitive ops in creation order, which is a valid
topological order; the backward pass walks the list once in reverse.
Tensors are immutable once written by an op. Default precision is float32;
pass ``dtype=np.float64`` when building a tape for finite-difference work.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class TapeError(Exception):
    """Raised on malformed tape usage: shape mismatch, cross-tape ops,
    non-scalar losses, non-finite values."""


def _as_array(values, dtype) -> np.ndarray:
    arr = np.asarray(values, dtype=dtype)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    return arr


class Tensor:
    """Immutable value node on a tape. Wraps a numpy array."""

    __slots__ = ("data", "tape", "uid")

    def __init__(self, data: np.ndarray, tape: "Tape", uid: int):
        self.data = data
        self.tape = tape
        self.uid = uid

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"

    # -- operator sugar; every method appends exactly one op to the tape --

    def __add__(self, other: "Tensor") -> "Tensor":
        return self.tape.add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return self.tape.sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return self.tape.mul(self, other)

    def matmul(self, other: "Tensor", transpose_b: bool = False) -> "Tensor":
        return self.tape.matmul(self, other, transpose_b=transpose_b)

    def relu(self) -> "Tensor":
        return self.tape.relu(self)

    def sum(self, axis: int | None = None) -> "Tensor":
        return self.tape.sum(self, axis=axis)

    def mean(self, axis: int | None = None) -> "Tensor":
        return self.tape.mean(self, axis=axis)

    def scale(self, factor: float) -> "Tensor":
        return self.tape.scale(self, factor)


class Op:
    """One recorded primitive: inputs/output by handle plus a backward rule."""

    __slots__ = ("name", "inputs", "output", "backward")

    def __init__(self, name: str, inputs: tuple, output: Tensor,
                 backward: Callable[[np.ndarray], tuple]):
        self.name = name
        self.inputs = inputs
        self.output = output
        self.backward = backward


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to the shape of a broadcast operand."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tape:
    """Computation record: an ordered op list over immutable tensors.

    Single-threaded during forward/backward; distinct tapes are independent
    and may be used concurrently from different threads.
    """

    def __init__(self, dtype=np.float32, check_finite: bool = False):
        self.dtype = np.dtype(dtype)
        self.check_finite = check_finite
        self.ops: list[Op] = []
        self._next_uid = 0

    # -- construction -----------------------------------------------------

    def leaf(self, values) -> Tensor:
        """Register a leaf tensor (parameter or constant input)."""
        out = Tensor(_as_array(values, self.dtype), self, self._next_uid)
        self._next_uid += 1
        return out

    def _record(self, name: str, inputs: tuple, out_data: np.ndarray,
                backward) -> Tensor:
        if self.check_finite and not np.all(np.isfinite(out_data)):
            raise TapeError(f"non-finite values produced by op '{name}'")
        out = Tensor(out_data, self, self._next_uid)
        self._next_uid += 1
        self.ops.append(Op(name, inputs, out, backward))
        return out

    def release(self) -> None:
        """Drop the recorded ops, breaking the tensor/op reference cycles.

        Forward-only passes should call this when done; ``gradient`` does it
        automatically unless asked to keep the tape.
        """
        self.ops.clear()

    def _check(self, *tensors: Tensor) -> None:
        for t in tensors:
            if t.tape is not self:
                raise TapeError("tensors belong to different tapes")

    # -- primitive ops ----------------------------------------------------

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        self._check(a, b)
        out = a.data + b.data

        if a.data.shape == b.data.shape:
            def backward(g):
                return g, g
        else:
            def backward(g):
                return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

        return self._record("add", (a, b), out, backward)

    def sub(self, a: Tensor, b: Tensor) -> Tensor:
        self._check(a, b)
        out = a.data - b.data

        def backward(g):
            return _unbroadcast(g, a.data.shape), -_unbroadcast(g, b.data.shape)

        return self._record("sub", (a, b), out, backward)

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        """Elementwise product with numpy broadcasting."""
        self._check(a, b)
        out = a.data * b.data

        if a.data.shape == b.data.shape:
            def backward(g):
                return g * b.data, g * a.data
        else:
            def backward(g):
                return (_unbroadcast(g * b.data, a.data.shape),
                        _unbroadcast(g * a.data, b.data.shape))

        return self._record("mul", (a, b), out, backward)

    def scale(self, a: Tensor, factor: float) -> Tensor:
        """Multiply by a python constant (not a differentiable input)."""
        self._check(a)
        c = self.dtype.type(factor)
        out = a.data * c

        def backward(g):
            return (g * c,)

        return self._record("scale", (a,), out, backward)

    def matmul(self, a: Tensor, b: Tensor, transpose_b: bool = False) -> Tensor:
        self._check(a, b)
        bd = b.data.T if transpose_b else b.data
        if a.data.shape[-1] != bd.shape[0]:
            raise TapeError(
                f"matmul shape mismatch: {a.data.shape} @ {bd.shape}")
        out = a.data @ bd

        if transpose_b:
            def backward(g):
                return g @ b.data, g.T @ a.data
        else:
            def backward(g):
                return g @ b.data.T, a.data.T @ g

        return self._record("matmul", (a, b), out, backward)

    def relu(self, a: Tensor) -> Tensor:
        self._check(a)
        out = np.maximum(a.data, 0)

        def backward(g):
            return (g * (a.data > 0),)

        return self._record("relu", (a,), out, backward)

    def gather(self, a: Tensor, index: np.ndarray) -> Tensor:
        """Select rows of a 2-D tensor: out[i] = a[index[i]]."""
        self._check(a)
        idx = index if isinstance(index, np.ndarray) else np.asarray(index, dtype=np.intp)
        out = a.data[idx]

        def backward(g):
            ga = np.zeros_like(a.data)
            np.add.at(ga, idx, g)
            return (ga,)

        return self._record("gather", (a,), out, backward)

    def scatter_add(self, a: Tensor, index: np.ndarray, num_rows: int) -> Tensor:
        """Accumulate rows of ``a`` into ``num_rows`` slots: out[index[i]] += a[i]."""
        self._check(a)
        idx = index if isinstance(index, np.ndarray) else np.asarray(index, dtype=np.intp)
        out = np.zeros((num_rows,) + a.data.shape[1:], dtype=a.data.dtype)
        np.add.at(out, idx, a.data)

        def backward(g):
            return (g[idx],)

        return self._record("scatter_add", (a,), out, backward)

    def sum(self, a: Tensor, axis: int | None = None) -> Tensor:
        self._check(a)
        if axis is None:
            out = a.data.sum().reshape(1)

            def backward(g):
                return (np.broadcast_to(g.reshape(()), a.data.shape),)
        else:
            out = a.data.sum(axis=axis, keepdims=True)

            def backward(g):
                return (np.broadcast_to(g, a.data.shape),)

        return self._record("sum", (a,), out, backward)

    def mean(self, a: Tensor, axis: int | None = None) -> Tensor:
        self._check(a)
        n = a.data.size if axis is None else a.data.shape[axis]
        inv = self.dtype.type(1.0 / n)
        if axis is None:
            out = (a.data.sum() * inv).reshape(1)

            def backward(g):
                return (np.broadcast_to(g.reshape(()), a.data.shape) * inv,)
        else:
            out = a.data.sum(axis=axis, keepdims=True) * inv

            def backward(g):
                return (np.broadcast_to(g, a.data.shape) * inv,)

        return self._record("mean", (a,), out, backward)

    def softmax_cross_entropy(self, logits: Tensor, targets) -> Tensor:
        """Fused -log softmax(logits)[target].

        1-D logits with an int target give a scalar; 2-D logits of shape
        (n, k) with n int targets give the per-row loss vector (n,).
        The gradient w.r.t. the logits is softmax - one_hot.
        """
        self._check(logits)
        squeeze = logits.data.ndim == 1
        z = logits.data.reshape(1, -1) if squeeze else logits.data
        t = np.asarray(targets, dtype=np.intp).reshape(-1)
        n, k = z.shape
        if k < 2:
            raise TapeError("softmax_cross_entropy needs at least 2 classes")
        if t.shape[0] != n:
            raise TapeError(f"expected {n} targets, got {t.shape[0]}")
        if np.any(t < 0) or np.any(t >= k):
            raise TapeError(f"target index out of range for {k} classes")

        zmax = z.max(axis=1, keepdims=True)
        shifted = z - zmax
        lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        probs = np.exp(shifted - lse)
        rows = np.arange(n)
        losses = (lse[:, 0] - shifted[rows, t]).astype(self.dtype)
        out = losses[0:1] if squeeze else losses

        def backward(g):
            gz = probs.copy()
            gz[rows, t] -= 1.0
            gz *= g.reshape(-1, 1)
            return (gz.reshape(logits.data.shape) if squeeze else gz,)

        return self._record("softmax_cross_entropy", (logits,), out, backward)

    def cosine_embedding(self, a: Tensor, b: Tensor, sign: int) -> Tensor:
        """Cosine embedding loss on two nonzero vectors.

        sign=+1 pulls the vectors together (1 - cos); sign=-1 pushes them
        apart with margin 0 (max(0, cos)).
        """
        self._check(a, b)
        if sign not in (1, -1):
            raise TapeError("sign must be +1 or -1")
        av = a.data.reshape(-1)
        bv = b.data.reshape(-1)
        if av.shape != bv.shape:
            raise TapeError("cosine_embedding requires equal-length vectors")
        na = float(np.linalg.norm(av))
        nb = float(np.linalg.norm(bv))
        if na == 0.0 or nb == 0.0:
            raise TapeError("cosine undefined for a zero vector")
        cos = float(av @ bv) / (na * nb)
        if sign == 1:
            loss = 1.0 - cos
            active = True
        else:
            loss = max(0.0, cos)
            active = cos > 0.0
        out = np.array([loss], dtype=self.dtype)

        def backward(g):
            if not active:
                za = np.zeros_like(a.data)
                return za, np.zeros_like(b.data)
            gs = float(g.reshape(())) * (-1.0 if sign == 1 else 1.0)
            dcos_da = bv / (na * nb) - cos * av / (na * na)
            dcos_db = av / (na * nb) - cos * bv / (nb * nb)
            return ((gs * dcos_da).reshape(a.data.shape).astype(a.data.dtype),
                    (gs * dcos_db).reshape(b.data.shape).astype(b.data.dtype))

        return self._record("cosine_embedding", (a, b), out, backward)

    # -- reverse pass ------------------------------------------------------

    def gradient(self, loss: Tensor, params: Sequence[Tensor],
                 keep: bool = False) -> list[np.ndarray]:
        """dLoss/dp for every tensor in ``params``.

        Parameters that do not reach the loss get zero gradients. The loss
        must be a scalar produced on this tape. The tape is released after
        the walk unless ``keep`` is set (each op is visited exactly once).
        """
        if loss.tape is not self:
            raise TapeError("loss was not recorded on this tape")
        for p in params:
            if p.tape is not self:
                raise TapeError("parameter was not recorded on this tape")
        if loss.data.size != 1:
            raise TapeError(f"loss must be scalar, got shape {loss.data.shape}")
        if not np.all(np.isfinite(loss.data)):
            raise TapeError("loss is not finite")

        grads: list = [None] * self._next_uid
        grads[loss.uid] = np.ones_like(loss.data)
        for op in reversed(self.ops):
            g = grads[op.output.uid]
            if g is None:
                continue
            for tensor, contrib in zip(op.inputs, op.backward(g)):
                if contrib is None:
                    continue
                prev = grads[tensor.uid]
                grads[tensor.uid] = contrib if prev is None else prev + contrib
        result = [grads[p.uid] if grads[p.uid] is not None
                  else np.zeros_like(p.data) for p in params]
        if not keep:
            self.release()
        return result


def stable_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Plain-numpy softmax for forward-only prediction paths."""
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)
