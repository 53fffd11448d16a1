"""Reverse-mode automatic differentiation over dense float64 arrays.

The engine is define-by-run: a :class:`Tape` is opened as a context manager,
every differentiable op executed inside records one node, and
``tape.backward(loss)`` replays the nodes in reverse to fill ``.grad`` on the
participating tensors.  Tapes are rebuilt per forward pass and hold strong
references to everything they recorded, so dropping the tape frees the graph.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import ContractError, DimensionError

__all__ = ["Tensor", "Tape", "active_tape", "as_tensor"]


class Tensor:
    """Dense n-dimensional float64 array with optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.size == 0:
            raise DimensionError(f"tensor dimensions must all be >= 1, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        """Copy of the values with no gradient tracking."""
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar; the real work happens in the free functions below --

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

    def __neg__(self):
        return neg(self)

    def __getitem__(self, key):
        return narrow(self, key)

    def sum(self) -> "Tensor":
        return sum_all(self)

    def mean(self) -> "Tensor":
        return mul(sum_all(self), 1.0 / self.size)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


class TapeNode:
    """One recorded operation: which tensors fed it and how to run it backward."""

    __slots__ = ("input_ids", "output_id", "backward", "needs")

    def __init__(self, input_ids, output_id, backward, needs):
        self.input_ids = input_ids
        self.output_id = output_id
        self.backward = backward
        self.needs = needs


_state = threading.local()


def _stack() -> list:
    stack = getattr(_state, "stack", None)
    if stack is None:
        stack = _state.stack = []
    return stack


def active_tape() -> Optional["Tape"]:
    stack = _stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of operations for one forward pass.

    ``wrt`` optionally restricts which leaf tensors receive gradients; any
    other tensor is treated as a constant on this tape even if its
    ``requires_grad`` flag is set (used to freeze the classifier during
    defense training and to speed up input-only attack gradients).
    """

    def __init__(self, wrt: Optional[Iterable[Tensor]] = None):
        self.nodes: list[TapeNode] = []
        self.next_id = 0
        self._tensors: dict[int, Tensor] = {}
        self._ids: dict[int, int] = {}
        self._live: set[int] = set()
        self._wrt: Optional[set[int]] = None if wrt is None else {id(t) for t in wrt}

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _stack().pop()
        assert popped is self, "tape context exited out of order"

    # -- recording --

    def _tensor_id(self, t: Tensor) -> int:
        tid = self._ids.get(id(t))
        if tid is None:
            tid = self.next_id
            self.next_id += 1
            self._ids[id(t)] = tid
            self._tensors[tid] = t
        return tid

    def _leaf_live(self, t: Tensor) -> bool:
        if not t.requires_grad:
            return False
        return self._wrt is None or id(t) in self._wrt

    def _is_live(self, t: Tensor) -> bool:
        tid = self._ids.get(id(t))
        if tid is not None and tid in self._live:
            return True
        return self._leaf_live(t)

    def record(self, inputs: Sequence[Tensor], output: Tensor,
               backward: Callable[[np.ndarray, tuple], tuple]) -> bool:
        """Append one node; returns False when no input can carry gradient."""
        needs = tuple(self._is_live(t) for t in inputs)
        if not any(needs):
            return False
        input_ids = tuple(self._tensor_id(t) for t in inputs)
        output_id = self._tensor_id(output)
        self._live.add(output_id)
        for tid, need in zip(input_ids, needs):
            if need:
                self._live.add(tid)
        self.nodes.append(TapeNode(input_ids, output_id, backward, needs))
        return True

    # -- replay --

    def backward(self, loss: Tensor) -> None:
        """Reverse sweep from ``loss``; fills ``.grad`` on live tensors.

        Each call recomputes gradients from scratch, so replaying the same
        tape twice yields bit-identical results.
        """
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        loss_id = self._ids.get(id(loss))
        if loss_id is None or loss_id not in self._live:
            raise ContractError("loss tensor was not recorded on this tape")

        adjoint: dict[int, np.ndarray] = {loss_id: np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = adjoint.get(node.output_id)
            if g is None:
                continue
            grads = node.backward(g, node.needs)
            for tid, need, grad in zip(node.input_ids, node.needs, grads):
                if not need or grad is None:
                    continue
                prev = adjoint.get(tid)
                adjoint[tid] = grad if prev is None else prev + grad

        for tid in self._live:
            t = self._tensors[tid]
            acc = adjoint.get(tid)
            t.grad = np.zeros_like(t.data) if acc is None else np.asarray(acc, dtype=np.float64)


# -- generic differentiable ops -------------------------------------------


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _record(inputs: Sequence[Tensor], out_data: np.ndarray, backward) -> Tensor:
    out = Tensor(out_data)
    tape = active_tape()
    if tape is not None:
        tape.record(inputs, out, backward)
    return out


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def bwd(g, needs):
        ga = _unbroadcast(g, a.data.shape) if needs[0] else None
        gb = _unbroadcast(g, b.data.shape) if needs[1] else None
        return ga, gb

    return _record((a, b), out_data, bwd)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data - b.data

    def bwd(g, needs):
        ga = _unbroadcast(g, a.data.shape) if needs[0] else None
        gb = -_unbroadcast(g, b.data.shape) if needs[1] else None
        return ga, gb

    return _record((a, b), out_data, bwd)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def bwd(g, needs):
        ga = _unbroadcast(g * b.data, a.data.shape) if needs[0] else None
        gb = _unbroadcast(g * a.data, b.data.shape) if needs[1] else None
        return ga, gb

    return _record((a, b), out_data, bwd)


def neg(a) -> Tensor:
    a = as_tensor(a)

    def bwd(g, needs):
        return (-g,)

    return _record((a,), -a.data, bwd)


def sum_all(a) -> Tensor:
    a = as_tensor(a)

    def bwd(g, needs):
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return _record((a,), np.asarray(a.data.sum()), bwd)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.reshape(shape)

    def bwd(g, needs):
        return (g.reshape(a.data.shape),)

    return _record((a,), out_data, bwd)


def narrow(a, key) -> Tensor:
    """Basic slicing as a differentiable op; backward scatters into zeros."""
    a = as_tensor(a)
    out_data = a.data[key]
    if not isinstance(out_data, np.ndarray):
        out_data = np.asarray(out_data)

    def bwd(g, needs):
        full = np.zeros_like(a.data)
        full[key] = g
        return (full,)

    return _record((a,), out_data.copy(), bwd)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g, needs):
        grads = []
        for i, p in enumerate(parts):
            if not needs[i]:
                grads.append(None)
                continue
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(offsets[i], offsets[i + 1])
            grads.append(g[tuple(idx)].copy())
        return tuple(grads)

    return _record(parts, out_data, bwd)
