"""Per-sample view adjacency learned from view embeddings."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

DEFAULT_TAU = 0.1


def learn_adjacency(H: Tensor, W: Tensor) -> Tensor:
    """Raw adjacency ``sigmoid(e_i . e_j)`` with ``e_i = LeakyReLU([h_i || onehot_i] W)``.

    ``H`` is ``(N, K, d)`` and ``W`` is ``(d + K, f)``. Returns ``(N, K, K)``,
    exactly symmetric per sample.
    """
    if H.ndim != 3:
        raise ShapeError(f"learn_adjacency: expected (N, K, d) embeddings, got {H.shape}")
    n, k, d = H.shape
    if W.shape[0] != d + k:
        raise ShapeError(f"learn_adjacency: W expects input dim {W.shape[0]}, embeddings give d + K = {d + k}")
    onehot = np.broadcast_to(np.eye(k), (n, k, k))
    e = T.leaky_relu(T.concat([H, onehot], axis=-1) @ W)
    logits = e @ T.transpose(e)
    # float summation order makes e e^T only approximately symmetric
    logits = 0.5 * (logits + T.transpose(logits))
    return T.sigmoid(logits)


def threshold_adjacency(raw: Tensor, tau: float = DEFAULT_TAU) -> Tensor:
    """Zero entries strictly below ``tau``; kept entries pass value and gradient unchanged."""
    if not 0.0 <= tau < 1.0:
        raise ValueError(f"tau must lie in [0, 1), got {tau}")
    mask = (raw.data >= tau).astype(np.float64)
    return raw * mask


def sparsity_loss(raw: Tensor) -> Tensor:
    """Entrywise L1 mass of the raw adjacency divided by ``N K^2``."""
    if raw.ndim != 3 or raw.shape[1] != raw.shape[2]:
        raise ShapeError(f"sparsity_loss: expected (N, K, K), got {raw.shape}")
    return T.mean(T.absolute(raw))
