"""Reverse-mode differentiation over numpy arrays.

Every primitive applied to a :class:`Var` appends one node to the owning
:class:`Tape`. Nodes are appended in evaluation order, so walking the tape
backwards is a valid topological order for the chain rule.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import ContractError

VJP = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Var:
    """A value recorded on a tape."""

    __slots__ = ("value", "tape", "name", "parents", "vjp", "index")
    __array_ufunc__ = None  # make numpy defer to the reflected operators below

    def __init__(self, value, tape, parents=(), vjp=None, name=None):
        self.value = value
        self.tape = tape
        self.parents = parents
        self.vjp = vjp
        self.name = name
        self.index = -1

    @property
    def shape(self):
        return np.shape(self.value)

    @property
    def ndim(self):
        return np.ndim(self.value)

    @property
    def T(self):
        from .ops import transpose
        return transpose(self)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Var{label}(shape={self.shape})"

    def __add__(self, other):
        from .ops import add
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from .ops import sub
        return sub(self, other)

    def __rsub__(self, other):
        from .ops import sub
        return sub(other, self)

    def __mul__(self, other):
        from .ops import mul
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from .ops import neg
        return neg(self)

    def __matmul__(self, other):
        from .ops import matmul
        return matmul(self, other)

    def __rmatmul__(self, other):
        from .ops import matmul
        return matmul(other, self)


class Tape:
    """Ordered record of primitive operations for one forward pass."""

    def __init__(self):
        self.nodes: list[Var] = []

    def __len__(self):
        return len(self.nodes)

    def _push(self, var: Var) -> Var:
        var.index = len(self.nodes)
        self.nodes.append(var)
        return var

    def param(self, value, name: str) -> Var:
        """Register a trainable leaf."""
        return self._push(Var(np.asarray(value, dtype=np.float64), self, name=name))

    def watch(self, params: dict) -> dict:
        return {k: self.param(v, k) for k, v in params.items()}

    def record(self, value, parents, vjp: VJP) -> Var:
        return self._push(Var(value, self, tuple(parents), vjp))


def backward(tape: Tape, loss: Var) -> dict[str, np.ndarray]:
    """Gradients of a scalar ``loss`` with respect to every named leaf on ``tape``.

    Leaves that do not influence the loss get zero gradients.
    """
    if not isinstance(loss, Var) or loss.tape is not tape:
        raise ContractError("loss was not recorded on this tape")
    if np.size(loss.value) != 1:
        raise ContractError(f"backward needs a scalar root, got shape {np.shape(loss.value)}")

    grads: dict[int, np.ndarray] = {loss.index: np.ones_like(loss.value, dtype=np.float64)}
    for node in reversed(tape.nodes[: loss.index + 1]):
        g = grads.pop(node.index, None)
        if node.vjp is None:
            if g is not None:
                grads[node.index] = g  # leaf: keep for collection
            continue
        if g is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if pg is None or not isinstance(parent, Var):
                continue
            prev = grads.get(parent.index)
            grads[parent.index] = pg if prev is None else prev + pg

    out = {}
    for node in tape.nodes:
        if node.name is not None and node.vjp is None:
            g = grads.get(node.index)
            out[node.name] = np.zeros_like(node.value) if g is None else np.asarray(g, dtype=np.float64)
    return out
