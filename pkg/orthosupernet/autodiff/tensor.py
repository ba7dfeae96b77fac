from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from orthosupernet.autodiff.exceptions import ContractError


BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Parameter:
    """A named learnable array together with its accumulated gradient.

    Attributes
    ----------
    name : str
        Path in the ``module/block/kind/index`` style
    value : np.ndarray
    grad : np.ndarray
        Same shape and dtype as ``value``
    """

    name: str
    value: np.ndarray
    grad: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.grad = np.zeros_like(self.value)

    @property
    def size(self) -> int:
        return int(self.value.size)

    def zero_grad(self) -> None:
        self.grad[...] = 0


class Tensor:
    """Dense array bound (optionally) to the tape that produced it."""

    __slots__ = ("data", "tape", "requires_grad")

    def __init__(
        self, data: np.ndarray, tape: Tape | None = None, requires_grad: bool = False
    ) -> None:
        self.data = data
        self.tape = tape
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def T(self) -> Tensor:
        from orthosupernet.autodiff import functional

        return functional.transpose(self)

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __add__(self, other: Tensor | float) -> Tensor:
        from orthosupernet.autodiff import functional

        return functional.add(self, other)

    def __radd__(self, other: float) -> Tensor:
        from orthosupernet.autodiff import functional

        return functional.add(other, self)

    def __sub__(self, other: Tensor | float) -> Tensor:
        from orthosupernet.autodiff import functional

        return functional.sub(self, other)

    def __rsub__(self, other: float) -> Tensor:
        from orthosupernet.autodiff import functional

        return functional.sub(other, self)

    def __mul__(self, other: Tensor | float) -> Tensor:
        from orthosupernet.autodiff import functional

        return functional.mul(self, other)

    def __rmul__(self, other: float) -> Tensor:
        from orthosupernet.autodiff import functional

        return functional.mul(other, self)

    def __neg__(self) -> Tensor:
        from orthosupernet.autodiff import functional

        return functional.scale(self, -1.0)

    def __matmul__(self, other: Tensor) -> Tensor:
        from orthosupernet.autodiff import functional

        return functional.matmul(self, other)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype})"


@dataclass
class Node:
    output: Tensor
    inputs: tuple[Tensor, ...]
    backward: BackwardFn


class Tape:
    """Ordered record of executed primitives.

    A recording tape keeps every node whose output depends on a watched
    parameter; a non-recording tape only evaluates. Both count the
    multiply-accumulates issued by matmul and convolution primitives.

    Attributes
    ----------
    record : bool, default=True
    nodes : list[Node]
    macs : int
    """

    def __init__(self, *, record: bool = True) -> None:
        self.record = record
        self.nodes: list[Node] = []
        self.macs = 0
        self._watched: dict[str, tuple[Parameter, Tensor]] = {}

    def watch(self, parameter: Parameter) -> Tensor:
        """Leaf tensor reading ``parameter.value``; repeated calls for the
        same parameter return the same leaf."""
        if parameter.name in self._watched:
            return self._watched[parameter.name][1]
        leaf = Tensor(parameter.value, self, requires_grad=self.record)
        self._watched[parameter.name] = (parameter, leaf)
        return leaf

    def constant(self, data: np.ndarray | float, dtype: np.dtype | None = None) -> Tensor:
        return Tensor(np.asarray(data, dtype=dtype), self)

    def add_node(
        self, output: Tensor, inputs: tuple[Tensor, ...], backward: BackwardFn
    ) -> None:
        self.nodes.append(Node(output, inputs, backward))

    def watched(self) -> list[Parameter]:
        return [parameter for parameter, _ in self._watched.values()]

    def reset(self) -> None:
        self.nodes.clear()
        self._watched.clear()
        self.macs = 0


def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate d(loss)/d(parameter) into every watched parameter's grad.

    Parameters
    ----------
    tape : Tape
        Recording tape holding the graph of ``loss``
    loss : Tensor
        Scalar output

    Raises
    ------
    ContractError
        ``loss`` is not a scalar or was not produced on ``tape``
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.tape is not tape:
        raise ContractError("loss was not recorded on the given tape")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        grad_output = grads.pop(id(node.output), None)
        if grad_output is None:
            continue
        for tensor, grad in zip(node.inputs, node.backward(grad_output)):
            if grad is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            if key in grads:
                grads[key] = grads[key] + grad
            else:
                grads[key] = grad

    for parameter, leaf in tape._watched.values():
        grad = grads.get(id(leaf))
        if grad is not None:
            parameter.grad += grad.astype(parameter.grad.dtype, copy=False)
