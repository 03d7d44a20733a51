"""Dense tensor with a dynamically recorded graph for reverse-mode autodiff."""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Optional, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

_seq = itertools.count()
_grad_enabled = True
_check_finite = False


class GraphError(RuntimeError):
    """Raised for invalid use of the recorded graph (e.g. a second backward)."""


class NonFiniteError(FloatingPointError):
    """Raised when finite-checking is on and an op produces NaN or Inf."""


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def check_finite(enabled: bool = True):
    """Raise NonFiniteError as soon as any op output contains NaN/Inf."""
    global _check_finite
    prev = _check_finite
    _check_finite = enabled
    try:
        yield
    finally:
        _check_finite = prev


class Node:
    """One recorded operation: its inputs and the rule mapping output grad to input grads."""

    __slots__ = ("name", "inputs", "backward_fn", "seq", "consumed")

    def __init__(self, name: str, inputs: Sequence["Tensor"], backward_fn: Callable):
        self.name = name
        self.inputs = tuple(inputs)
        self.backward_fn = backward_fn
        self.seq = next(_seq)
        self.consumed = False

    def __repr__(self) -> str:
        return f"Node({self.name}, seq={self.seq})"


class Tensor:
    """N-dimensional array plus optional gradient.

    ``data`` is a contiguous row-major numpy array; ``grad`` (when set) has the same
    shape. Tensors produced by ops keep a reference to the ``Node`` that made them.
    """

    __slots__ = ("data", "requires_grad", "grad", "_node", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            if isinstance(data, np.ndarray) and np.issubdtype(data.dtype, np.floating):
                dtype = data.dtype
            else:
                dtype = DEFAULT_DTYPE
        self.data = np.require(data, dtype=dtype, requirements="C")
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._node: Optional[Node] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return self.data.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def all_finite(self) -> bool:
        return bool(np.isfinite(self.data).all())

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other: "Tensor") -> "Tensor":
        from . import ops

        return ops.add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        from . import ops

        return ops.mul(self, other)


def make_result(data: np.ndarray, inputs: Sequence[Tensor], name: str, backward_fn: Callable) -> Tensor:
    """Wrap an op's output and record it on the graph if any input needs a gradient."""
    out = Tensor(data, dtype=data.dtype)
    if _check_finite and not np.isfinite(data).all():
        raise NonFiniteError(f"{name} produced non-finite values")
    if _grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._node = Node(name, inputs, backward_fn)
    return out


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf reachable from ``loss`` that requires it.

    Ops are replayed in exact reverse execution order. Leaf gradients accumulate
    across calls; the recorded graph itself can only be traversed once.
    """
    if loss.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GraphError("loss does not require grad; nothing was recorded")
    seed = np.ones_like(loss.data)
    if loss._node is None:
        _accumulate_leaf(loss, seed)
        return

    nodes = []
    seen = set()
    stack = [loss._node]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        if node.consumed:
            raise GraphError(
                f"graph already consumed by a previous backward (at {node.name}); re-run forward first"
            )
        nodes.append(node)
        for t in node.inputs:
            if t._node is not None and t.requires_grad:
                stack.append(t._node)
    nodes.sort(key=lambda n: n.seq, reverse=True)

    pending = {id(loss._node): seed}
    for node in nodes:
        g = pending.pop(id(node), None)
        if g is not None:
            in_grads = node.backward_fn(g)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                if gi.shape != t.shape:
                    raise GraphError(f"{node.name} returned grad {gi.shape} for input {t.shape}")
                if t._node is None:
                    _accumulate_leaf(t, gi)
                else:
                    key = id(t._node)
                    if key in pending:
                        pending[key] = pending[key] + gi
                    else:
                        pending[key] = gi
        node.consumed = True
        node.backward_fn = _consumed


def _consumed(g):
    raise GraphError("graph already consumed")


def _accumulate_leaf(t: Tensor, g: np.ndarray) -> None:
    g = g.astype(t.data.dtype, copy=False)
    if t.grad is None:
        t.grad = np.array(g, copy=True)
    else:
        t.grad = t.grad + g
