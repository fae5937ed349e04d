"""Input checks shared by the estimator API."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .data import BiTemporalSample
from .exceptions import InvalidInputError, ShapeError


def check_bitemporal_X(X, patch_size: int | None = None) -> np.ndarray:
    """Return ``X`` as float32 ``(n, 4, s, s, 3)``.

    Accepts such an array or a sequence of :class:`BiTemporalSample`.  uint8
    arrays are rescaled to [0, 1].
    """
    if isinstance(X, Sequence) and X and isinstance(X[0], BiTemporalSample):
        X = np.stack([s.images() for s in X])
    X = np.asarray(X)
    if X.ndim != 5 or X.shape[1] != 4 or X.shape[-1] != 3 or X.shape[2] != X.shape[3]:
        raise ShapeError(f"X must have shape (n, 4, s, s, 3), got {X.shape}")
    if patch_size is not None and X.shape[2] != patch_size:
        raise ShapeError(f"X has side {X.shape[2]}, expected {patch_size}")
    if X.dtype == np.uint8:
        return X.astype(np.float32) / np.float32(255.0)
    X = X.astype(np.float32, copy=False)
    if not np.isfinite(X).all():
        raise InvalidInputError("X contains NaN or infinite values")
    return X


def check_labels(y, X: np.ndarray | None = None) -> np.ndarray:
    """Return ``y`` as int64 ``(n, s, s)`` holding only 0 and 1."""
    if isinstance(y, Sequence) and y and isinstance(y[0], BiTemporalSample):
        y = np.stack([s.label for s in y])
    y = np.asarray(y)
    if y.ndim != 3:
        raise ShapeError(f"y must have shape (n, s, s), got {y.shape}")
    if X is not None and (y.shape[0] != X.shape[0] or y.shape[1:] != X.shape[2:4]):
        raise ShapeError(f"y {y.shape} does not match X {X.shape}")
    if not np.isin(y, (0, 1)).all():
        raise InvalidInputError("labels must be 0 or 1")
    return y.astype(np.int64)


def arrays_to_samples(X: np.ndarray, y: np.ndarray | None = None) -> list[BiTemporalSample]:
    n, _, s = X.shape[:3]
    y = np.zeros((n, s, s), dtype=np.uint8) if y is None else y
    return [BiTemporalSample(*X[i], label=y[i].astype(np.uint8)) for i in range(n)]
