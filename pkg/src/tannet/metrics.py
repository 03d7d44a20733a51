"""Average precision, frame/video mAP and proposal scoring."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .model import video_score


def average_precision(scores, labels) -> float | None:
    """Mean over positives of precision at each positive's rank.

    Ranking is by descending score with ties kept in original order. Returns
    ``None`` when there is no positive label (the class is excluded from mAP).
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1).astype(bool)
    if scores.shape != labels.shape:
        raise ValueError(f"scores {scores.shape} and labels {labels.shape} differ")
    n_pos = int(labels.sum())
    if n_pos == 0:
        return None
    order = np.argsort(-scores, kind="stable")
    hits = labels[order]
    ranks = np.flatnonzero(hits) + 1
    return float(np.mean(np.arange(1, n_pos + 1) / ranks))


def mean_ap(scores: np.ndarray, labels: np.ndarray) -> tuple[float, list[float | None]]:
    """Per-class AP over rows of ``[n, K]`` arrays and their mean over classes with positives."""
    per_class = [average_precision(scores[:, k], labels[:, k]) for k in range(labels.shape[1])]
    valid = [a for a in per_class if a is not None]
    return (float(np.mean(valid)) if valid else float("nan")), per_class


def parse_protocol(protocol) -> tuple[str, int | None]:
    """``"dense"``, ``"sampled"`` (25 frames), ``"sampled:N"`` or ``("sampled", N)``."""
    if isinstance(protocol, tuple):
        kind, n = protocol
        return str(kind), int(n)
    p = str(protocol)
    if p == "dense":
        return "dense", None
    if p == "sampled":
        return "sampled", 25
    if p.startswith("sampled:"):
        n = int(p.split(":", 1)[1])
        if n < 1:
            raise ValueError(f"sampled protocol needs n >= 1, got {n}")
        return "sampled", n
    raise ValueError(f"unknown protocol {protocol!r}; use 'dense' or 'sampled:N'")


def protocol_name(protocol) -> str:
    kind, n = parse_protocol(protocol)
    return kind if n is None else f"{kind}:{n}"


def sampled_frames(T: int, n: int) -> np.ndarray:
    """``n`` uniformly spaced frame indices; every frame when the video is shorter."""
    if n >= T:
        return np.arange(T)
    if n == 1:
        return np.array([(T - 1) // 2])
    return np.round(np.linspace(0, T - 1, n)).astype(int)


@dataclass
class MetricReport:
    per_class_ap: list
    frame_map: float
    video_map: float
    protocol: str
    excluded_classes: list = field(default_factory=list)
    video_per_class_ap: list = field(default_factory=list)

    def summary(self) -> str:
        lines = [
            f"# protocol={self.protocol}",
            f"frame_mAP={self.frame_map:.6f}",
            f"video_mAP={self.video_map:.6f}",
        ]
        if self.excluded_classes:
            lines.append(f"excluded_classes={self.excluded_classes}")
        return "\n".join(lines)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["# protocol", self.protocol])
            w.writerow(["class_id", "frame_ap", "video_ap"])
            for k, ap in enumerate(self.per_class_ap):
                vap = self.video_per_class_ap[k] if k < len(self.video_per_class_ap) else None
                w.writerow([k, "" if ap is None else repr(ap), "" if vap is None else repr(vap)])
            w.writerow(["frame_mAP", repr(self.frame_map), ""])
            w.writerow(["video_mAP", repr(self.video_map), ""])


def evaluate_scores(scores: np.ndarray, labels: np.ndarray, protocol="sampled:25") -> MetricReport:
    """Frame and video mAP from dense per-frame scores ``[N, T, K]`` in [0, 1]."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 3:
        raise ValueError(f"scores {scores.shape} and labels {labels.shape} must both be [N, T, K]")
    kind, n = parse_protocol(protocol)
    T = scores.shape[1]
    idx = np.arange(T) if kind == "dense" else sampled_frames(T, n)
    K = scores.shape[2]
    frame_map, per_class = mean_ap(scores[:, idx].reshape(-1, K), labels[:, idx].reshape(-1, K))
    video_map, video_per_class = mean_ap(video_score(scores), labels.max(axis=1))
    excluded = [k for k, a in enumerate(per_class) if a is None]
    return MetricReport(per_class, frame_map, video_map, protocol_name(protocol), excluded, video_per_class)


def score_proposal(frame_scores, interval, actionness: float) -> np.ndarray:
    """Mean class score over frames ``[s, e]`` (inclusive), scaled by the proposal's actionness."""
    s_arr = getattr(frame_scores, "data", frame_scores)
    s_arr = np.asarray(s_arr)
    s, e = interval
    T = s_arr.shape[0]
    if e < s:
        raise ValueError(f"inverted interval [{s}, {e}]")
    if s < 0 or e >= T:
        raise ValueError(f"interval [{s}, {e}] outside 0..{T - 1}")
    if not 0.0 <= actionness <= 1.0:
        raise ValueError(f"actionness must be in [0, 1], got {actionness}")
    return video_score(s_arr[s:e + 1]) * actionness


def write_predictions(path, video_ids, scores: np.ndarray) -> None:
    """Dense score dump: ``video_id,frame_idx,class_id,score``."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["video_id", "frame_idx", "class_id", "score"])
        for vid, s in zip(video_ids, scores):
            for t in range(s.shape[0]):
                for k in range(s.shape[1]):
                    w.writerow([vid, t, k, f"{float(s[t, k]):.8g}"])
