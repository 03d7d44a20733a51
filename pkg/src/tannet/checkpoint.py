"""Saving and loading model parameters through the named-tensor container."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import io
from .io import CheckpointError, FormatError
from .model import TANModel, is_temporal_param

__all__ = [
    "CheckpointError",
    "FormatError",
    "MissingParameterError",
    "UnexpectedParameterError",
    "ShapeMismatchError",
    "LoadReport",
    "save_checkpoint",
    "load_checkpoint",
    "load_spatial_from_2d",
    "checkpoint_nbytes",
]


class MissingParameterError(CheckpointError):
    """The checkpoint lacks names the model needs."""

    def __init__(self, names):
        self.names = list(names)
        super().__init__(f"checkpoint is missing {len(self.names)} parameter(s): {', '.join(self.names)}")


class UnexpectedParameterError(CheckpointError):
    """The checkpoint has names the model does not know."""

    def __init__(self, names):
        self.names = list(names)
        super().__init__(f"checkpoint has {len(self.names)} unknown parameter(s): {', '.join(self.names)}")


class ShapeMismatchError(CheckpointError):
    def __init__(self, conflicts):
        self.conflicts = list(conflicts)
        desc = ", ".join(f"{n}: checkpoint {tuple(a)} vs model {tuple(b)}" for n, a, b in self.conflicts)
        super().__init__(f"shape conflict: {desc}")


def save_checkpoint(model: TANModel, path) -> None:
    io.write_tensors(path, model.state_dict())


def _as_tensors(source) -> dict[str, np.ndarray]:
    if isinstance(source, dict):
        return source
    return io.read_tensors(source)


def _check_shapes(model: TANModel, tensors, names) -> None:
    conflicts = [(n, tensors[n].shape, model.params[n].shape) for n in names if tuple(tensors[n].shape) != tuple(model.params[n].shape)]
    if conflicts:
        raise ShapeMismatchError(conflicts)


def load_checkpoint(model: TANModel, source) -> None:
    """Replace every parameter from ``source`` (a path or a name->array dict).

    Names and shapes must match the registry exactly. All checks run before any
    parameter is written, so a failed load leaves the model untouched.
    """
    tensors = _as_tensors(source)
    missing = [n for n in model.params if n not in tensors]
    if missing:
        raise MissingParameterError(missing)
    unexpected = [n for n in tensors if n not in model.params]
    if unexpected:
        raise UnexpectedParameterError(unexpected)
    _check_shapes(model, tensors, list(model.params))
    for n, t in model.params.items():
        t.data[...] = tensors[n]


@dataclass
class LoadReport:
    loaded: list = field(default_factory=list)
    skipped: list = field(default_factory=list)

    @property
    def n_loaded(self) -> int:
        return len(self.loaded)

    @property
    def n_skipped(self) -> int:
        return len(self.skipped)


def load_spatial_from_2d(model: TANModel, source) -> LoadReport:
    """Copy spatial (stem, bottleneck, head) weights from a 2D checkpoint.

    Temporal parameters of ``model`` are never written and are reported as
    skipped, as are model parameters the checkpoint does not provide. Checkpoint
    entries that are temporal, or unknown to the model, raise the same errors as
    ``load_checkpoint``.
    """
    tensors = _as_tensors(source)
    temporal = [n for n in tensors if is_temporal_param(n)]
    if temporal:
        raise UnexpectedParameterError(temporal)
    unexpected = [n for n in tensors if n not in model.params]
    if unexpected:
        raise UnexpectedParameterError(unexpected)
    _check_shapes(model, tensors, list(tensors))
    report = LoadReport()
    for n, t in model.params.items():
        if n in tensors:
            t.data[...] = tensors[n]
            report.loaded.append(n)
        else:
            report.skipped.append(n)
    return report


def checkpoint_nbytes(model: TANModel) -> int:
    """File size a checkpoint of ``model`` will have, from per-entry accounting."""
    header = len(io.MAGIC) + 8
    return header + sum(io.entry_size(n, t.shape) for n, t in model.params.items())
