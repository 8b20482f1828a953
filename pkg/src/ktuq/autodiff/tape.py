"""Reverse-mode autodiff tape over dense float64 numpy arrays.

The model code builds a fresh graph on every forward pass: while a
:class:`Tape` is active (``with Tape() as tape:``), every op records one node
holding the output tensor, its parents, and a backward closure. The backward
sweep walks the node list in exact reverse creation order — the list *is* a
topological order because an op can only consume tensors that already exist —
and accumulates gradients in a fixed order, so identical tapes produce
bitwise-identical gradients.

With no tape active, the same ops run as plain numpy computations (used for
evaluation and MC sampling, where gradients are never needed).
"""

from __future__ import annotations

from typing import Callable, Mapping, Sequence

import numpy as np

from ..validation import ValidationError

_TAPE_STACK: list["Tape"] = []


def current_tape() -> "Tape | None":
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tensor:
    """A float64 array plus an optional name (parameters are named leaves)."""

    __slots__ = ("data", "name")

    def __init__(self, data, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.data.shape})"

    # Arithmetic sugar; the heavy lifting lives in ops.py (imported lazily to
    # avoid a module cycle).
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __neg__(self):
        from . import ops

        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


class _Node:
    __slots__ = ("out", "parents", "backward")

    def __init__(self, out: Tensor, parents: Sequence[Tensor], backward: Callable):
        self.out = out
        self.parents = tuple(parents)
        self.backward = backward


class Tape:
    """Ordered record of one forward pass."""

    __slots__ = ("_nodes",)

    def __init__(self):
        self._nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self, "tape stack corrupted"
        return False

    def __len__(self):
        return len(self._nodes)

    def record(self, out: Tensor, parents: Sequence[Tensor], backward: Callable) -> None:
        self._nodes.append(_Node(out, parents, backward))

    def gradients(
        self,
        loss: Tensor,
        params: Mapping[str, Tensor] | None = None,
    ) -> dict[str, np.ndarray]:
        """Backpropagate from ``loss`` and return gradients per parameter name.

        ``loss`` must be a scalar produced under this tape. Parameters that do
        not influence the loss get exact-zero gradients of matching shape.
        When ``params`` is None the gradient table covers every *named* leaf
        encountered on the tape.
        """
        if loss.data.shape != ():
            raise ValidationError(
                f"backward requires a scalar loss, got shape {loss.data.shape}"
            )
        grads: dict[int, np.ndarray] = {id(loss): np.array(1.0)}
        seen_named: dict[int, Tensor] = {}
        for node in reversed(self._nodes):
            out_grad = grads.pop(id(node.out), None)
            if out_grad is None:
                continue
            parent_grads = node.backward(out_grad)
            for parent, pgrad in zip(node.parents, parent_grads):
                if pgrad is None:
                    continue
                key = id(parent)
                held = grads.get(key)
                grads[key] = pgrad if held is None else held + pgrad
                if parent.name is not None:
                    seen_named[key] = parent

        if params is None:
            return {t.name: grads[k] for k, t in seen_named.items()}
        table: dict[str, np.ndarray] = {}
        for name, tensor in params.items():
            g = grads.get(id(tensor))
            table[name] = np.zeros_like(tensor.data) if g is None else g
        return table
