"""Integrated Gradients over the multi-view input and learned-graph inspection."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .model import LegatoNetwork
from .tensor import Tensor


@dataclass
class Attribution:
    ig: list[np.ndarray]  # per view, same shape as the input view
    view_share: np.ndarray  # (K,), sums to 1 unless every attribution is zero
    f_input: float
    f_baseline: float

    @property
    def completeness_gap(self) -> float:
        """``sum(IG) - (f(x) - f(baseline))``."""
        return float(sum(g.sum() for g in self.ig) - (self.f_input - self.f_baseline))


def latent_target(H_z: Tensor, node: int, dim: int | None) -> Tensor:
    """Per-sample scalar: one latent coordinate, or the node's L2 norm when ``dim`` is None."""
    h = H_z[:, node, :]
    if dim is not None:
        return h[:, dim]
    return T.clamp_min(T.tsum(h * h, axis=-1), 1e-24) ** 0.5


def target_value(net: LegatoNetwork, views: Sequence[np.ndarray], node: int, dim: int | None = None) -> np.ndarray:
    with T.no_grad():
        return latent_target(net.forward(views, training=False).latent.H, node, dim).data.copy()


def path_integrated_gradients(
    f: Callable[[list[Tensor]], Tensor],
    inputs: Sequence[np.ndarray],
    baseline: Sequence[np.ndarray] | None = None,
    steps: int = 50,
) -> list[np.ndarray]:
    """Integrated Gradients of a row-wise scalar function of several inputs.

    ``f`` maps a list of ``(n, d_k)`` tensors to an ``(n,)`` tensor and must
    treat rows independently. Returns ``(x_k - b_k) * mean_s grad_k f(b + (s / steps)(x - b))``
    for ``s = 1..steps``, one array per input.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    xs = [np.asarray(x, dtype=np.float64) for x in inputs]
    if baseline is None:
        bs = [np.zeros_like(x) for x in xs]
    else:
        bs = [np.broadcast_to(np.asarray(b, dtype=np.float64), x.shape) for b, x in zip(baseline, xs)]
    n = xs[0].shape[0]
    alphas = np.arange(1, steps + 1, dtype=np.float64) / steps
    path = []
    for x, b in zip(xs, bs):
        # rows ordered (sample, step)
        p = b[:, None, :] + alphas[None, :, None] * (x - b)[:, None, :]
        path.append(Tensor(p.reshape(n * steps, -1), requires_grad=True))
    T.backward(T.tsum(f(path)))
    return [(x - b) * t.grad.reshape(n, steps, -1).mean(axis=1) for x, b, t in zip(xs, bs, path)]


def integrated_gradients(
    net: LegatoNetwork,
    views: Sequence[np.ndarray],
    node: int,
    dim: int | None = None,
    baseline: Sequence[np.ndarray] | None = None,
    steps: int = 50,
) -> list[Attribution]:
    """Integrated Gradients of a latent-node target for each sample in ``views``.

    The baseline defaults to all zeros. The model runs in evaluation mode so
    points along the path do not interact through batch statistics.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if not 0 <= node < net.n_latent:
        raise ValueError(f"node {node} out of range for {net.n_latent} latent nodes")
    views = [np.asarray(v, dtype=np.float64) for v in views]
    baseline = [np.zeros_like(v) for v in views] if baseline is None else [np.broadcast_to(np.asarray(b, dtype=np.float64), v.shape) for b, v in zip(baseline, views)]
    try:
        ig = path_integrated_gradients(lambda xs: latent_target(net.forward(xs, training=False).latent.H, node, dim), views, baseline, steps)
    finally:
        net.store.zero_grad()
    f_x = target_value(net, views, node, dim)
    f_b = target_value(net, baseline, node, dim)
    out = []
    for i in range(views[0].shape[0]):
        per_view = [g[i] for g in ig]
        mass = np.array([np.abs(v).sum() for v in per_view])
        share = mass / mass.sum() if mass.sum() > 0 else np.zeros_like(mass)
        out.append(Attribution(per_view, share, float(f_x[i]), float(f_b[i])))
    return out


def view_contribution_matrix(net: LegatoNetwork, views: Sequence[np.ndarray], steps: int = 50, dim: int | None = None) -> np.ndarray:
    """``(K', K)``: mean normalized view share of each latent node's norm over samples.

    Each row is a distribution over views.
    """
    rows = []
    for node in range(net.n_latent):
        shares = np.array([a.view_share for a in integrated_gradients(net, views, node, dim, steps=steps)])
        row = shares.mean(axis=0)
        total = row.sum()
        rows.append(row / total if total > 0 else row)
    return np.array(rows)


def mean_adjacency(net: LegatoNetwork, views: Sequence[np.ndarray]) -> np.ndarray:
    """Sample-averaged gated adjacency the model propagates, ``(K, K)``."""
    with T.no_grad():
        return net.forward(views, training=False).adjacency.data.mean(axis=0)


def pair_edge_contrast(adjacency: np.ndarray) -> tuple[float, float]:
    """Mean off-diagonal edge weight within consecutive view pairs and across pairs."""
    K = adjacency.shape[0]
    within, across = [], []
    for i in range(K):
        for j in range(K):
            if i == j:
                continue
            (within if i // 2 == j // 2 else across).append(adjacency[i, j])
    return float(np.mean(within)) if within else float("nan"), float(np.mean(across)) if across else float("nan")
