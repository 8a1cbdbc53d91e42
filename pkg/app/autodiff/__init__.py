"""Minimal reverse-mode autodiff over float64 numpy arrays."""

from app.autodiff.tensor import Tensor, ComputeGraph, Node, backward, current_graph
from app.autodiff import ops

__all__ = ["Tensor", "ComputeGraph", "Node", "backward", "current_graph", "ops"]
