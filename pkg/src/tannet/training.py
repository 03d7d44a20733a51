"""Multi-label training: sigmoid cross-entropy, Adam with a step schedule, and the epoch loop."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .autograd import Tensor, backward, no_grad, ops
from .data import VideoDataset
from .metrics import MetricReport, evaluate_scores
from .model import TANModel

log = logging.getLogger(__name__)

# full-scale recipe: 1e-4, dropped 10x; the desk default starts higher because runs are short
REFERENCE_LR = 1e-4
DEFAULT_LR = 1e-3


class TrainingDivergedError(FloatingPointError):
    """Loss became NaN/Inf."""


def bce_multilabel_loss(logits: Tensor, labels) -> Tensor:
    """Mean over all frames and classes of sigmoid binary cross-entropy."""
    return ops.bce_with_logits(logits, labels)


def step_schedule(epochs: int, base_lr: float = DEFAULT_LR, drop_at: float = 2 / 3, factor: float = 0.1) -> list[tuple[int, float]]:
    """``[(0, lr), (round(drop_at * epochs), lr * factor)]``."""
    drop = max(1, int(round(drop_at * epochs)))
    if epochs <= 1:
        return [(0, base_lr)]
    return [(0, base_lr), (drop, base_lr * factor)]


def lr_at(schedule: Sequence[tuple[int, float]], epoch: int) -> float:
    lr = schedule[0][1]
    for start, value in schedule:
        if epoch >= start:
            lr = value
    return lr


@dataclass
class OptimState:
    """Adam moments per parameter name plus the global step count."""

    schedule: list = field(default_factory=lambda: [(0, REFERENCE_LR), (10, REFERENCE_LR * 0.1)])
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params: dict, grads: dict, state: OptimState, lr: float) -> None:
    """In-place bias-corrected Adam update of every array in ``params``.

    ``params`` maps names to numpy arrays (or Tensors); missing grads are skipped.
    """
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        arr = p.data if isinstance(p, Tensor) else p
        if name not in state.m:
            state.m[name] = np.zeros_like(arr)
            state.v[name] = np.zeros_like(arr)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        arr -= (lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)).astype(arr.dtype)


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    frame_map: float = float("nan")
    video_map: float = float("nan")


def init_head_bias(model: TANModel, labels: np.ndarray, eps: float = 1e-3) -> None:
    """Set the classifier bias to the logit of each class's frame-level prior."""
    prior = np.clip(np.asarray(labels, dtype=np.float64).reshape(-1, labels.shape[-1]).mean(axis=0), eps, 1 - eps)
    b = model.params["head/fc/bias"]
    b.data[...] = np.log(prior / (1 - prior)).astype(b.dtype)


def predict_scores(model: TANModel, clips: np.ndarray, batch_size: int = 16) -> np.ndarray:
    """Sigmoid frame scores ``[N, T, K]`` for a stack of clips."""
    out = []
    with no_grad():
        for i in range(0, len(clips), batch_size):
            logits = model.forward(Tensor(clips[i:i + batch_size]))
            out.append(ops.sigmoid(logits).data)
    return np.concatenate(out) if out else np.zeros((0,) + clips.shape[1:2] + (model.config.num_classes,))


def evaluate(model: TANModel, dataset: VideoDataset, protocol="sampled:25") -> MetricReport:
    return evaluate_scores(predict_scores(model, dataset.clips), dataset.labels, protocol)


def train(
    model: TANModel,
    dataset: VideoDataset,
    epochs: int,
    seed: int = 0,
    schedule: Sequence[tuple[int, float]] | None = None,
    batch_size: int = 1,
    eval_dataset: VideoDataset | None = None,
    eval_every: int = 1,
    protocol="sampled:25",
    state: OptimState | None = None,
    start_epoch: int = 0,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> list[EpochRecord]:
    """Shuffled clip-level training; returns one ``EpochRecord`` per epoch run.

    ``batch_size`` clips are stacked per update, which is the same as accumulating
    their gradients (the loss is a mean). Shuffling for epoch ``e`` depends only on
    ``(seed, e)`` so resumed runs replay the same order.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    if epochs <= 0:
        return []
    if dataset.num_classes != model.config.num_classes:
        raise ValueError(f"dataset has {dataset.num_classes} classes, model expects {model.config.num_classes}")
    if state is None:
        state = OptimState(schedule=list(schedule or step_schedule(start_epoch + epochs)))
    elif schedule is not None:
        state.schedule = list(schedule)
    if start_epoch == 0 and state.step == 0:
        init_head_bias(model, dataset.labels)

    history = []
    names = list(model.params)
    for epoch in range(start_epoch, start_epoch + epochs):
        lr = lr_at(state.schedule, epoch)
        order = np.random.default_rng([seed, epoch]).permutation(len(dataset))
        losses = []
        for i in range(0, len(order), batch_size):
            idx = np.sort(order[i:i + batch_size]) if batch_size > 1 else order[i:i + 1]
            model.zero_grad()
            clips = dataset.clips[idx]
            labels = dataset.labels[idx]
            if batch_size == 1:
                clips, labels = clips[0], labels[0]
            logits = model.forward(Tensor(clips))
            loss = bce_multilabel_loss(logits, labels)
            value = float(loss.data)
            if not math.isfinite(value):
                ids = [dataset.video_ids[j] for j in idx]
                raise TrainingDivergedError(f"non-finite loss {value} at epoch {epoch}, lr={lr:g}, clips {ids}")
            backward(loss)
            adam_step(model.params, {n: model.params[n].grad for n in names}, state, lr)
            losses.append(value * len(idx))
        rec = EpochRecord(epoch, float(np.sum(losses) / len(dataset)))
        last = epoch == start_epoch + epochs - 1
        if eval_every and ((epoch - start_epoch + 1) % eval_every == 0 or last):
            report = evaluate(model, eval_dataset if eval_dataset is not None else dataset, protocol)
            rec.frame_map, rec.video_map = report.frame_map, report.video_map
        log.info("epoch %d lr %.3g loss %.5f frame_mAP %.4f video_mAP %.4f", epoch, lr, rec.mean_loss, rec.frame_map, rec.video_map)
        history.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
    model.zero_grad()
    return history


LOG_HEADER = ("epoch", "mean_loss", "frame_map", "video_map")


def write_log(path, records: Sequence[EpochRecord], comments: Sequence[str] = (), append: bool = False) -> None:
    """Training log CSV; ``comments`` become leading ``# ...`` lines on a fresh file."""
    mode = "a" if append else "w"
    with open(path, mode, newline="") as f:
        if not append:
            for c in comments:
                f.write(f"# {c}\n")
            f.write(",".join(LOG_HEADER) + "\n")
        w = csv.writer(f, lineterminator="\n")
        for r in records:
            w.writerow([r.epoch, repr(r.mean_loss), repr(r.frame_map), repr(r.video_map)])


def read_log(path) -> list[EpochRecord]:
    out = []
    with open(path) as f:
        rows = [ln for ln in f if ln.strip() and not ln.startswith("#")]
    for row in csv.reader(rows[1:]):
        out.append(EpochRecord(int(row[0]), float(row[1]), float(row[2]), float(row[3])))
    return out
