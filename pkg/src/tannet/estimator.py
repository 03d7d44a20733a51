"""scikit-learn style wrapper: dense multi-label frame classification over clips."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_clips, check_frame_labels
from .autograd import Tensor, no_grad
from .data import VideoDataset
from .metrics import evaluate_scores
from .model import ArchConfig, build
from .training import DEFAULT_LR, predict_scores, step_schedule, train


class TANClassifier(ClassifierMixin, BaseEstimator):
    """Per-frame multi-label classifier.

    ``X`` is ``[N, T, 3, H, W]`` in [0, 1]; ``y`` is ``[N, T, K]`` binary.
    ``predict_proba`` returns sigmoid frame scores ``[N, T, K]``.
    """

    def __init__(
        self,
        variant="tan",
        channels=(16, 32, 64, 128),
        blocks_per_level=(2, 2, 2, 2),
        ta_enabled=(True, True, True, True),
        ta_dilations=(1, 2, 3),
        epochs=10,
        lr=DEFAULT_LR,
        batch_size=8,
        threshold=0.5,
        protocol="dense",
        random_state=0,
    ):
        self.variant = variant
        self.channels = channels
        self.blocks_per_level = blocks_per_level
        self.ta_enabled = ta_enabled
        self.ta_dilations = ta_dilations
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.threshold = threshold
        self.protocol = protocol
        self.random_state = random_state

    def _config(self, X, y) -> ArchConfig:
        return ArchConfig(
            input_spatial=X.shape[3],
            temporal_len=X.shape[1],
            channels=tuple(self.channels),
            blocks_per_level=tuple(self.blocks_per_level),
            ta_enabled=tuple(self.ta_enabled),
            ta_dilations=tuple(self.ta_dilations),
            num_classes=y.shape[2],
            variant=self.variant,
        )

    def fit(self, X, y):
        X = check_clips(X)
        y = check_frame_labels(y, X.shape[0], X.shape[1])
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        seed = int(self.random_state or 0)
        self.config_ = self._config(X, y)
        self.model_ = build(self.config_, seed=seed)
        data = VideoDataset(X, y, [f"clip{i:05d}" for i in range(len(X))])
        self.history_ = train(
            self.model_,
            data,
            self.epochs,
            seed=seed,
            schedule=step_schedule(self.epochs, self.lr),
            batch_size=self.batch_size,
            eval_every=0,
        )
        self.n_classes_ = y.shape[2]
        self.classes_ = np.arange(self.n_classes_)
        return self

    def _check_X(self, X):
        check_is_fitted(self, "model_")
        return check_clips(X, self.config_.input_spatial)

    def decision_function(self, X) -> np.ndarray:
        """Frame logits ``[N, T, K]``."""
        X = self._check_X(X)
        out = []
        with no_grad():
            for i in range(0, len(X), 16):
                out.append(self.model_.forward(Tensor(X[i:i + 16])).data)
        return np.concatenate(out)

    def predict_proba(self, X) -> np.ndarray:
        X = self._check_X(X)
        return predict_scores(self.model_, X)

    def predict(self, X) -> np.ndarray:
        """Binary frame labels ``[N, T, K]`` at ``threshold``."""
        return (self.predict_proba(X) >= self.threshold).astype(np.uint8)

    def score(self, X, y, sample_weight=None) -> float:
        """Frame mAP under ``protocol``."""
        if sample_weight is not None:
            raise ValueError("sample_weight is not supported")
        X = self._check_X(X)
        y = check_frame_labels(y, X.shape[0], X.shape[1])
        return evaluate_scores(predict_scores(self.model_, X), y, self.protocol).frame_map
