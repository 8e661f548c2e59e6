"""Input checks shared by the estimators and pipeline functions."""
from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array


def check_features(X, n_features=None):
    X = check_array(X, dtype=np.float64, ensure_all_finite=True)
    if n_features is not None and X.shape[1] != n_features:
        raise ValueError(
            f"X has {X.shape[1]} features, model was trained with {n_features}"
        )
    return X


def check_targets(y, n_samples):
    y = np.asarray(y, dtype=np.float64).ravel()
    if len(y) != n_samples:
        raise ValueError(f"got {len(y)} targets for {n_samples} samples")
    if not np.all(np.isfinite(y)):
        raise ValueError("targets must be finite")
    return y


def check_probability(value, name="probability"):
    value = float(value)
    if not 0.0 <= value <= 1.0 or not np.isfinite(value):
        raise ValueError(f"{name} must lie in [0, 1], got {value}")
    return value


def one_hot(index: int, size: int) -> np.ndarray:
    if not 0 <= index < size:
        raise ValueError(f"one-hot index {index} out of range for size {size}")
    v = np.zeros(size)
    v[index] = 1.0
    return v
