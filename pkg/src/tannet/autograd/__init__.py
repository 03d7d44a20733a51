"""Minimal dense tensor library with reverse-mode autodiff."""

from . import ops
from .ops import DilationWarning, ShapeError, count_macs
from .tensor import GraphError, NonFiniteError, Tensor, backward, check_finite, no_grad

__all__ = [
    "DilationWarning",
    "GraphError",
    "NonFiniteError",
    "ShapeError",
    "Tensor",
    "backward",
    "check_finite",
    "count_macs",
    "no_grad",
    "ops",
]
