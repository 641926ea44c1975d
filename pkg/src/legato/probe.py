"""Closed-form ridge probe for measuring what a representation encodes."""

from __future__ import annotations

import numpy as np

RIDGE_LAMBDA = 1e-3


def fit_ridge(X: np.ndarray, Y: np.ndarray, lam: float = RIDGE_LAMBDA) -> tuple[np.ndarray, np.ndarray]:
    """Multi-output ridge with an unpenalized intercept.

    Returns ``(coef, intercept)`` with ``coef`` of shape ``(n_features, n_targets)``.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    x_mean, y_mean = X.mean(axis=0), Y.mean(axis=0)
    Xc, Yc = X - x_mean, Y - y_mean
    gram = Xc.T @ Xc + lam * np.eye(X.shape[1])
    try:
        coef = np.linalg.solve(gram, Xc.T @ Yc)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"ridge normal equations are singular (lambda={lam})") from exc
    if not np.isfinite(coef).all():
        raise np.linalg.LinAlgError(f"ridge normal equations are singular (lambda={lam})")
    return coef, y_mean - x_mean @ coef


def probe_downstream(
    train_repr: np.ndarray,
    train_latents: np.ndarray,
    test_repr: np.ndarray,
    test_latents: np.ndarray,
    lam: float = RIDGE_LAMBDA,
) -> float:
    """Fit one ridge per latent on the labeled split; mean test MSE over latents."""
    return float(probe_mse_per_latent(train_repr, train_latents, test_repr, test_latents, lam).mean())


def probe_mse_per_latent(train_repr, train_latents, test_repr, test_latents, lam: float = RIDGE_LAMBDA) -> np.ndarray:
    coef, intercept = fit_ridge(train_repr, train_latents, lam)
    pred = np.asarray(test_repr, dtype=np.float64) @ coef + intercept
    target = np.asarray(test_latents, dtype=np.float64).reshape(pred.shape)
    return ((pred - target) ** 2).mean(axis=0)
