"""Input checks shared by the estimators and the functional API."""

from __future__ import annotations

import numpy as np
from sklearn.utils import check_array

from .spn import DimensionError


def check_binary_matrix(X, num_variables: int | None = None) -> np.ndarray:
    """Return ``X`` as a 2-D uint8 array of 0/1 values."""
    X = check_array(X, dtype=None, ensure_2d=True, ensure_min_samples=0)
    if X.dtype != bool and not np.isin(X, (0, 1)).all():
        raise ValueError("attribute vectors must be binary (0/1)")
    X = X.astype(np.uint8)
    if num_variables is not None and X.shape[1] != num_variables:
        raise DimensionError("attribute vectors have %d columns, expected %d" % (X.shape[1], num_variables))
    return X


def check_like_counts(y, n: int | None = None) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError("like counts must be one-dimensional")
    if y.size and (not np.all(np.isfinite(y)) or np.any(y < 0)):
        raise ValueError("like counts must be finite and nonnegative")
    if y.size and not np.all(np.equal(np.mod(y, 1), 0)):
        raise ValueError("like counts must be integers")
    y = y.astype(np.int64)
    if n is not None and len(y) != n:
        raise ValueError("got %d like counts for %d items" % (len(y), n))
    return y


def check_features(X, n_features: int | None = None) -> np.ndarray:
    X = check_array(X, dtype=np.float64, ensure_min_samples=0)
    if n_features is not None and X.shape[1] != n_features:
        raise DimensionError("features have %d columns, expected %d" % (X.shape[1], n_features))
    return X
