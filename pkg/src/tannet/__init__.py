"""Temporal aggregation networks for dense multi-label video classification."""

from .checkpoint import load_checkpoint, load_spatial_from_2d, save_checkpoint
from .data import VideoDataset, generate, ingest, resample_rate
from .estimator import TANClassifier
from .metrics import MetricReport, average_precision, score_proposal
from .model import ArchConfig, TANModel, build, forward_dense, video_score
from .training import evaluate, train

__version__ = "0.1.0"

__all__ = [
    "ArchConfig",
    "MetricReport",
    "TANClassifier",
    "TANModel",
    "VideoDataset",
    "average_precision",
    "build",
    "evaluate",
    "forward_dense",
    "generate",
    "ingest",
    "load_checkpoint",
    "load_spatial_from_2d",
    "resample_rate",
    "save_checkpoint",
    "score_proposal",
    "train",
    "video_score",
]
