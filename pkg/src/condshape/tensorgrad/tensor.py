# Copyright 2024-present The condshape Authors. All rights reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     https://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""
Dense numpy tensors with reverse-mode autodiff.

A Tensor remembers the tensors it was computed from (_prev) and a closure
(_backward) that pushes its gradient to them. backward() walks the graph in
reverse topological order. Graph recording is switched off by no_grad(), and
wide_precision() makes newly created tensors float64 for gradient checking.

Both switches are thread-local, so concurrent sweep cells do not see each
other's modes.
"""

import threading
from contextlib import contextmanager
from typing import Callable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from condshape.errors import ContractError, ShapeError

ArrayLike = Union[np.ndarray, float, int, Sequence]


class _Mode(threading.local):
    grad_enabled: bool = True
    wide: bool = False


_mode = _Mode()


def default_dtype() -> np.dtype:
    return np.dtype(np.float64) if _mode.wide else np.dtype(np.float32)


def is_grad_enabled() -> bool:
    return _mode.grad_enabled


@contextmanager
def no_grad():
    """Run ops without recording a graph (inference, validation)"""
    prev = _mode.grad_enabled
    _mode.grad_enabled = False
    try:
        yield
    finally:
        _mode.grad_enabled = prev


@contextmanager
def wide_precision():
    """Create tensors (and parameters) at float64; training runs at float32"""
    prev = _mode.wide
    _mode.wide = True
    try:
        yield
    finally:
        _mode.wide = prev


class Tensor:
    """
    Array node in a differentiable graph.

    Attributes:
        data: numpy array (channels-first for volumes: N x C x X x Y x Z)
        grad: Gradient of the same shape after backward(), else None
        requires_grad: Whether gradients flow into this tensor
        name: Optional label (parameter name), used in error messages
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_prev", "_backward")

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: Optional[str] = None,
                 dtype: Optional[np.dtype] = None):
        self.data = np.array(data, dtype=dtype or default_dtype())
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._prev: Tuple["Tensor", ...] = ()
        self._backward: Callable[[np.ndarray], None] = lambda g: None

    @classmethod
    def from_op(cls, data: np.ndarray, parents: Iterable["Tensor"], backward: Callable[[np.ndarray], None]) -> "Tensor":
        """Result of an op; records the graph edge only when some parent needs grad"""
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        parents = tuple(parents)
        out.requires_grad = _mode.grad_enabled and any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._prev = parents
            out._backward = backward
        else:
            out._prev = ()
            out._backward = lambda g: None
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        label = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label})"

    def accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        g = np.asarray(g, dtype=self.data.dtype).reshape(self.data.shape)
        self.grad = g.copy() if self.grad is None else self.grad + g

    # elementwise arithmetic on equal shapes or with python scalars

    def __add__(self, other: Union["Tensor", float]) -> "Tensor":
        other = _lift(other, self)
        _same_shape("add", self, other)

        def backward(g):
            self.accumulate(g)
            other.accumulate(g)
        return Tensor.from_op(self.data + other.data, (self, other), backward)

    __radd__ = __add__

    def __mul__(self, other: Union["Tensor", float]) -> "Tensor":
        other = _lift(other, self)
        _same_shape("mul", self, other)

        def backward(g):
            self.accumulate(g * other.data)
            other.accumulate(g * self.data)
        return Tensor.from_op(self.data * other.data, (self, other), backward)

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return self * -1.0

    def __sub__(self, other: Union["Tensor", float]) -> "Tensor":
        return self + (-_lift(other, self))

    def sum(self) -> "Tensor":
        def backward(g):
            self.accumulate(np.broadcast_to(g, self.data.shape))
        return Tensor.from_op(np.asarray(self.data.sum(), dtype=self.data.dtype), (self,), backward)

    def mean(self) -> "Tensor":
        n = self.data.size

        def backward(g):
            self.accumulate(np.broadcast_to(g / n, self.data.shape))
        return Tensor.from_op(np.asarray(self.data.mean(), dtype=self.data.dtype), (self,), backward)

    def reshape(self, *shape: int) -> "Tensor":
        def backward(g):
            self.accumulate(g.reshape(self.data.shape))
        return Tensor.from_op(self.data.reshape(*shape), (self,), backward)

    def backward(self) -> None:
        """Backpropagate from this scalar into every tensor that requires grad"""
        if self.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {self.shape}")
        order = _topological(self)
        # interior nodes are fresh per forward pass; only leaves carry old grads
        for node in order:
            if node._prev:
                node.grad = None
        self.accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._prev and node.grad is not None:
                node._backward(node.grad)


def _topological(root: Tensor) -> List[Tensor]:
    """Iterative post-order DFS (deep UNets overflow the recursion limit)"""
    order: List[Tensor] = []
    visited = set()
    stack: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._prev:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def _lift(value: Union[Tensor, float], like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.full(like.data.shape, value, dtype=like.data.dtype), dtype=like.data.dtype)


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: expected equal shapes, got {a.shape} and {b.shape}")


def backward(loss: Tensor, params: Sequence[Tensor]) -> List[np.ndarray]:
    """
    Gradients of a scalar loss with respect to params.

    Existing grads are cleared first. Parameters the loss does not depend on get
    exact zeros.

    Raises:
        ContractError: Loss is not a scalar
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    for p in params:
        p.grad = None
    loss.backward()
    out = []
    for p in params:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
        out.append(p.grad)
    return out
