"""Input validation for multi-view data."""

from __future__ import annotations

from typing import Sequence

import numpy as np


def check_views(Xs, expected_dims: Sequence[int] | None = None, min_samples: int = 0) -> list[np.ndarray]:
    """Validate a multi-view dataset.

    Parameters
    ----------
    Xs : sequence of array-like
        One ``(n_samples, n_features_k)`` matrix per view.
    expected_dims : sequence of int, optional
        Feature count each view must have, e.g. from a fitted model.
    min_samples : int
        Minimum number of rows.

    Returns
    -------
    list of float64 ndarrays
    """
    if isinstance(Xs, np.ndarray) and Xs.ndim == 2:
        raise ValueError("expected a list of views, got a single 2-D array")
    views = []
    for k, X in enumerate(Xs):
        arr = np.asarray(X, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        if arr.ndim != 2:
            raise ValueError(f"view {k} must be 2-D, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError(f"view {k} contains NaN or infinite values")
        views.append(arr)
    if not views:
        raise ValueError("at least one view is required")
    n = {v.shape[0] for v in views}
    if len(n) != 1:
        raise ValueError(f"views disagree on the number of samples: {sorted(n)}")
    if views[0].shape[0] < min_samples:
        raise ValueError(f"need at least {min_samples} samples, got {views[0].shape[0]}")
    if expected_dims is not None:
        if len(views) != len(expected_dims):
            raise ValueError(f"expected {len(expected_dims)} views, got {len(views)}")
        for k, (v, dk) in enumerate(zip(views, expected_dims)):
            if v.shape[1] != dk:
                raise ValueError(f"view {k} has {v.shape[1]} features, expected {dk}")
    return views


def take_rows(views: Sequence[np.ndarray], idx) -> list[np.ndarray]:
    return [v[idx] for v in views]
