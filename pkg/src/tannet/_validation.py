"""Input checks shared by the estimator and the CLI."""

from __future__ import annotations

import numpy as np


def check_clips(X, input_spatial: int | None = None, temporal_len: int | None = None) -> np.ndarray:
    """Return ``X`` as float32 ``[N, T, 3, H, W]`` with square frames; raise ``ValueError`` otherwise."""
    X = np.asarray(X)
    if X.dtype == object or not np.issubdtype(X.dtype, np.number):
        raise ValueError(f"clips must be numeric, got dtype {X.dtype}")
    if X.ndim == 4:
        X = X[None]
    if X.ndim != 5 or X.shape[2] != 3:
        raise ValueError(f"clips must be [N, T, 3, H, W], got shape {X.shape}")
    if X.shape[3] != X.shape[4]:
        raise ValueError(f"frames must be square, got {X.shape[3]}x{X.shape[4]}")
    if X.shape[0] == 0 or X.shape[1] == 0:
        raise ValueError(f"clips must have at least one clip and one frame, got shape {X.shape}")
    if input_spatial is not None and X.shape[3] != input_spatial:
        raise ValueError(f"expected {input_spatial}x{input_spatial} frames, got {X.shape[3]}x{X.shape[4]}")
    if temporal_len is not None and X.shape[1] != temporal_len:
        raise ValueError(f"expected {temporal_len} frames per clip, got {X.shape[1]}")
    X = X.astype(np.float32, copy=False)
    if not np.all(np.isfinite(X)):
        raise ValueError("clips contain NaN or Inf")
    return X


def check_frame_labels(y, n_clips: int, n_frames: int) -> np.ndarray:
    """Return ``y`` as uint8 ``[N, T, K]`` holding only 0/1."""
    y = np.asarray(y)
    if y.ndim == 2:
        y = y[None]
    if y.ndim != 3:
        raise ValueError(f"labels must be [N, T, K] binary frame labels, got shape {y.shape}")
    if y.shape[:2] != (n_clips, n_frames):
        raise ValueError(f"labels cover {y.shape[:2]} (clips, frames) but clips are {(n_clips, n_frames)}")
    if y.shape[2] < 1:
        raise ValueError("labels need at least one class")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0/1")
    return y.astype(np.uint8)
