"""Minimal tape-based reverse-mode differentiation over numpy arrays.

A ``Tape`` records every differentiable op as (output node, input nodes,
backward closure). ``backward`` walks the records once, newest first, and
accumulates adjoints into ``Node.grad``. The graph is rebuilt fresh at every
forward pass; a tape may be consumed by ``backward`` at most once.
"""

from __future__ import annotations

from typing import Callable, List, Optional, Sequence

import numpy as np

from .errors import ShapeError, TapeConsumedError


class Node:
    """A value in the computation graph, with an optional adjoint buffer."""

    __slots__ = ("value", "grad", "requires_grad", "name")

    def __init__(self, value: np.ndarray, requires_grad: bool = False, name: str = ""):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def accumulate(self, g: np.ndarray) -> None:
        if g.shape != self.value.shape:
            raise ShapeError(f"adjoint shape {g.shape} != value shape {self.value.shape}")
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g


class Parameter(Node):
    """A trainable leaf. Its gradient buffer persists across episodes."""

    def __init__(self, value: np.ndarray, name: str):
        super().__init__(value, requires_grad=True, name=name)
        self.grad = np.zeros_like(self.value)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)


class Tape:
    """Ordered record of ops for one forward pass."""

    def __init__(self):
        self._records: List[tuple] = []
        self._consumed = False

    def record(self, out: Node, inputs: Sequence[Node], backward_fn: Callable) -> None:
        self._records.append((out, tuple(inputs), backward_fn))

    def __len__(self) -> int:
        return len(self._records)

    def backward(self, loss: Node) -> None:
        """Propagate d(loss)/d(node) to every recorded node, newest record first."""
        if self._consumed:
            raise TapeConsumedError("tape already consumed by backward; build a new graph")
        if loss.value.ndim != 0:
            raise ShapeError(f"backward seed must be scalar, got shape {loss.value.shape}")
        self._consumed = True
        loss.accumulate(np.ones_like(loss.value))
        for out, inputs, backward_fn in reversed(self._records):
            if out.grad is None:
                continue
            grads = backward_fn(out.grad)
            for node, g in zip(inputs, grads):
                if g is None or not node.requires_grad:
                    continue
                node.accumulate(g)

    def reset(self) -> None:
        self._records.clear()
        self._consumed = False


def record_op(tape: Optional[Tape], out_value: np.ndarray, inputs: Sequence[Node],
              backward_fn: Callable) -> Node:
    """Wrap ``out_value`` in a Node and record it if any input needs gradients."""
    needs = any(n.requires_grad for n in inputs)
    out = Node(out_value, requires_grad=needs)
    if tape is not None and needs:
        tape.record(out, inputs, backward_fn)
    return out


def grad_check(f: Callable[[Optional[Tape], Node], Node], x: np.ndarray,
               eps: float = 1e-4, samples: Optional[int] = None,
               rng: Optional[np.random.Generator] = None) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` maps (tape, input node) to a scalar-output node. The relative error
    at each probed coordinate is |analytic - numeric| / max(1, |numeric|).
    All coordinates are probed unless ``samples`` caps the count, in which
    case that many are drawn without replacement using ``rng``.
    """
    x = np.asarray(x, dtype=np.float64)
    node = Node(x, requires_grad=True)
    tape = Tape()
    loss = f(tape, node)
    tape.backward(loss)
    analytic = node.grad.copy() if node.grad is not None else np.zeros_like(x)

    if samples is None or samples >= x.size:
        coords = np.arange(x.size)
    else:
        coords = (rng or np.random.default_rng(0)).choice(x.size, samples, replace=False)

    worst = 0.0
    flat = x.reshape(-1)
    for i in coords:
        orig = flat[i]
        flat[i] = orig + eps
        plus = float(f(None, Node(x)).value)
        flat[i] = orig - eps
        minus = float(f(None, Node(x)).value)
        flat[i] = orig
        numeric = (plus - minus) / (2.0 * eps)
        err = abs(analytic.reshape(-1)[i] - numeric) / max(1.0, abs(numeric))
        worst = max(worst, err)
    return worst
