"""Dense float64 tensors and the reverse-mode compute graph."""

import threading
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from app.services.exceptions import GraphStateError

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_state = threading.local()


class Tensor:
    """Dense multi-dimensional float64 array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, copy: bool = True):
        self.data = np.array(data, dtype=np.float64) if copy else np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"


@dataclass
class Node:
    """One recorded op: kind, inputs, output and the vector-Jacobian product."""
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


class ComputeGraph:
    """Tape of ops executed while the graph is active on the current thread.

    Usage:
        with ComputeGraph() as graph:
            loss = model.loss(frames, target)
        graph.backward(loss)
    """

    def __init__(self):
        self.nodes: List[Node] = []
        self.ops_run = 0

    def __enter__(self) -> "ComputeGraph":
        stack = _graph_stack()
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _graph_stack().pop()

    def record(self, op: str, inputs: Tuple[Tensor, ...], output: Tensor, backward: BackwardFn) -> None:
        self.nodes.append(Node(op, inputs, output, backward))

    def backward(self, loss: Tensor, parameters: Optional[Iterable[Tensor]] = None, seed: float = 1.0) -> None:
        """Populate ``grad`` on every leaf tensor that requires it.

        Leaves reached by the graph accumulate into their existing buffer;
        tensors passed in ``parameters`` get a zero buffer first if they have
        none, so unused parameters end with a zero gradient.
        """
        if self.ops_run == 0:
            raise GraphStateError("backward called before any forward op ran on this graph")
        if loss.size != 1:
            raise GraphStateError(f"loss must be a scalar, got shape {loss.shape}")

        if parameters is not None:
            for p in parameters:
                if p.grad is None:
                    p.zero_grad()

        produced = {id(node.output) for node in self.nodes}
        if id(loss) not in produced:
            if loss.requires_grad:
                raise GraphStateError("loss was not produced on this graph")
            # Constant loss: nothing to propagate.
            return

        grads: Dict[int, np.ndarray] = {id(loss): np.full(loss.shape, seed, dtype=np.float64)}
        for node in reversed(self.nodes):
            upstream = grads.pop(id(node.output), None)
            if upstream is None:
                continue
            for tensor, g in zip(node.inputs, node.backward(upstream)):
                if g is None or not tensor.requires_grad:
                    continue
                key = id(tensor)
                if key in produced:
                    grads[key] = grads[key] + g if key in grads else g
                elif tensor.grad is None:
                    tensor.grad = np.array(g, dtype=np.float64)
                else:
                    tensor.grad = tensor.grad + g


def _graph_stack() -> List[ComputeGraph]:
    if not hasattr(_state, "stack"):
        _state.stack = []
    return _state.stack


def current_graph() -> Optional[ComputeGraph]:
    stack = _graph_stack()
    return stack[-1] if stack else None


def make_output(op: str, inputs: Tuple[Tensor, ...], data: np.ndarray, backward: BackwardFn) -> Tensor:
    """Wrap an op result, recording it on the active graph when gradients flow."""
    graph = current_graph()
    if graph is None:
        return Tensor(data, copy=False)
    graph.ops_run += 1
    needs_grad = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs_grad, copy=False)
    if needs_grad:
        graph.record(op, inputs, out, backward)
    return out


def backward(graph: ComputeGraph, loss: Tensor, parameters: Optional[Iterable[Tensor]] = None) -> None:
    """Run reverse-mode differentiation of ``loss`` over ``graph``."""
    graph.backward(loss, parameters=parameters)
