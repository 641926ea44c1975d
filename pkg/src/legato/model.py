"""The latent-graph autoencoder.

Views are encoded independently, connected by a learned adjacency, pooled
into a smaller latent graph with a soft assignment matrix, unpooled back to
the view graph and decoded. The readout is the mean latent node embedding.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .graph_learner import DEFAULT_TAU, learn_adjacency, sparsity_loss, threshold_adjacency
from .tensor import ParameterStore, ShapeError, Tensor

VARIANTS = ("full", "NoHier", "NoGraph", "NoReg", "GlobalPool")

NORM_MOMENTUM = 0.9
VAR_FLOOR = 1e-8


@dataclass
class LatentGraph:
    H: Tensor  # (N, K', r)
    A: Tensor  # (N, K', K')
    P: Tensor | None  # (N, K, K'); None when pooling is disabled


@dataclass
class LossBreakdown:
    recon_features: Tensor
    recon_adjacency: Tensor
    orthogonality: Tensor
    sparsity: Tensor
    alpha: float
    beta: float
    total: Tensor

    def as_dict(self) -> dict[str, float]:
        return {
            "recon_feat": self.recon_features.item(),
            "recon_adj": self.recon_adjacency.item(),
            "orth": self.orthogonality.item(),
            "spar": self.sparsity.item(),
            "total": self.total.item(),
        }


@dataclass
class ForwardResult:
    losses: LossBreakdown
    latent: LatentGraph
    readout: Tensor
    embeddings: Tensor
    raw_adjacency: Tensor | None
    adjacency: Tensor
    reconstruction: list[Tensor]
    adjacency_hat: Tensor


def n_latent_nodes(k: int) -> int:
    return max(1, k // 2)


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


# ----------------------------------------------------------------------------
# building blocks
# ----------------------------------------------------------------------------


def mlp(x: Tensor, W1: Tensor, b1: Tensor, W2: Tensor, b2: Tensor) -> Tensor:
    """One ReLU hidden layer followed by a linear head."""
    return T.linear(T.relu(T.linear(x, W1, b1)), W2, b2)


def gcn_layer(A: Tensor, H: Tensor, W: Tensor, activation: Callable[[Tensor], Tensor] | None = T.relu) -> Tensor:
    """Symmetric-normalized graph convolution with unit self-loops.

    ``h'_i = f(W sum_j (A + I)_ij h_j / sqrt(d_i d_j))`` where ``d`` are the
    row sums of ``A + I``.
    """
    A, H = T.as_tensor(A), T.as_tensor(H)
    if A.ndim != 3 or A.shape[1] != A.shape[2] or H.shape[:2] != A.shape[:2]:
        raise ShapeError(f"gcn_layer: adjacency {A.shape} does not match node features {H.shape}")
    if H.shape[-1] != W.shape[0]:
        raise ShapeError(f"gcn_layer: features {H.shape} do not match weights {W.shape}")
    if (A.data < 0).any():
        raise ValueError("gcn_layer: adjacency has negative entries")
    a_tilde = A + np.eye(A.shape[-1])
    scale = T.tsum(a_tilde, axis=-1, keepdims=True) ** -0.5
    a_norm = scale * a_tilde * T.transpose(scale)
    out = (a_norm @ H) @ W
    return activation(out) if activation is not None else out


def node_normalize(
    H: Tensor,
    running_mean: Tensor,
    running_var: Tensor,
    training: bool,
    momentum: float = NORM_MOMENTUM,
) -> Tensor:
    """Standardize each (node, dimension) over the batch axis.

    Training mode uses batch moments and updates the running buffers in place;
    evaluation mode uses the buffers. Variance is floored at 1e-8.
    """
    if H.shape[1:] != running_mean.shape:
        raise ShapeError(f"node_normalize: features {H.shape} do not match statistics {running_mean.shape}")
    if not training:
        inv = np.maximum(running_var.data, VAR_FLOOR) ** -0.5
        return (H - running_mean.data) * inv
    if H.shape[0] < 2:
        raise ValueError("node_normalize: training mode needs at least 2 samples per batch")
    out, mu, var = T.standardize(H, axis=0, var_floor=VAR_FLOOR)
    running_mean.data = momentum * running_mean.data + (1 - momentum) * mu[0]
    running_var.data = momentum * running_var.data + (1 - momentum) * var[0]
    return out


def pool_graph(A: Tensor, P: Tensor, Z: Tensor) -> tuple[Tensor, Tensor]:
    """``(P^T A P, P^T Z)`` per sample."""
    Pt = T.transpose(P)
    return Pt @ A @ P, Pt @ Z


def orthogonality_loss(H: Tensor) -> Tensor:
    """Mean absolute cosine similarity over distinct latent node pairs, averaged over samples."""
    if H.ndim != 3:
        raise ShapeError(f"orthogonality_loss: expected (N, K', r), got {H.shape}")
    n, k = H.shape[:2]
    pairs = k * (k - 1) // 2
    if pairs == 0:
        return Tensor(0.0)
    U = T.l2_normalize(H)
    cos = U @ T.transpose(U)
    lower = np.tril(np.ones((k, k)), -1)
    return T.tsum(T.absolute(cos) * lower) * (1.0 / (n * pairs))


def reconstruction_loss(x: Sequence, x_hat: Sequence[Tensor], A: Tensor, A_hat: Tensor) -> tuple[Tensor, Tensor]:
    """Feature and adjacency reconstruction terms.

    Features: squared L2 error summed over views, divided by ``N K``.
    Adjacency: squared Frobenius error per sample, averaged over samples.
    """
    if len(x) != len(x_hat):
        raise ShapeError(f"reconstruction_loss: {len(x)} views vs {len(x_hat)} reconstructions")
    n, k = A.shape[0], len(x)
    feat = None
    for xv, xh in zip(x, x_hat):
        xv = T.as_tensor(xv)
        if xv.shape != xh.shape:
            raise ShapeError(f"reconstruction_loss: view {xv.shape} vs reconstruction {xh.shape}")
        diff = xv - xh
        term = T.tsum(diff * diff)
        feat = term if feat is None else feat + term
    feat = feat * (1.0 / (n * k))
    if A.shape != A_hat.shape:
        raise ShapeError(f"reconstruction_loss: adjacency {A.shape} vs {A_hat.shape}")
    d = T.as_tensor(A) - A_hat
    adj = T.tsum(d * d) * (1.0 / n)
    return feat, adj


def readout(latent: LatentGraph) -> Tensor:
    """Mean over latent nodes: ``(N, K', r) -> (N, r)``."""
    return T.mean(latent.H, axis=1)


# ----------------------------------------------------------------------------
# network
# ----------------------------------------------------------------------------


class LegatoNetwork:
    """Parameters and forward pass of the latent-graph autoencoder.

    Parameters
    ----------
    view_dims : sequence of int
        Feature count of each view.
    embed_dim, latent_dim, hidden_dim : int
        View embedding size ``d``, latent node size ``r`` and codec hidden width.
    n_latent : int, optional
        Latent node count of the last pooling level. Defaults to ``max(1, K // 2)``
        halving per level.
    n_levels : int
        Number of stacked pool/unpool levels.
    alpha, beta : float
        Weights of the orthogonality and sparsity terms.
    tau : float
        Adjacency threshold.
    key_dim : int, optional
        Output size of the graph-learner transform; defaults to ``embed_dim``.
    variant : str
        One of ``full``, ``NoHier``, ``NoGraph``, ``NoReg``, ``GlobalPool``.
    detach_target : bool
        Treat the gated adjacency as fixed data in the adjacency reconstruction
        term. Without this the graph learner can shrink that term by emitting
        a constant graph.
    seed : int
        Seed for weight initialization.
    """

    def __init__(
        self,
        view_dims: Sequence[int],
        embed_dim: int = 64,
        latent_dim: int = 64,
        hidden_dim: int = 64,
        n_latent: int | None = None,
        n_levels: int = 1,
        alpha: float = 0.01,
        beta: float = 0.01,
        tau: float = DEFAULT_TAU,
        key_dim: int | None = None,
        variant: str = "full",
        detach_target: bool = True,
        seed: int = 0,
    ):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
        self.view_dims = [int(v) for v in view_dims]
        if not self.view_dims:
            raise ValueError("at least one view is required")
        self.K = len(self.view_dims)
        self.embed_dim = embed_dim
        self.latent_dim = latent_dim
        self.hidden_dim = hidden_dim
        self.n_levels = n_levels
        self.alpha = 0.0 if variant == "NoReg" else float(alpha)
        self.beta = float(beta)
        self.tau = tau
        self.key_dim = key_dim or embed_dim
        self.variant = variant
        self.detach_target = bool(detach_target)
        self.seed = seed
        self.use_graph = variant != "NoGraph"
        self.hierarchical = variant != "NoHier"
        if variant == "GlobalPool":
            n_latent = 1
        self.node_counts = self._node_counts(n_latent) if self.hierarchical else [self.K, self.K]
        self.adjacency_calls = 0
        self.store = ParameterStore()
        self._build(np.random.default_rng(seed))

    def _node_counts(self, n_latent: int | None) -> list[int]:
        if self.n_levels < 1:
            raise ValueError("n_levels must be >= 1")
        counts = [self.K]
        for _ in range(self.n_levels):
            counts.append(n_latent_nodes(counts[-1]))
        if n_latent is not None:
            counts[-1] = int(n_latent)
        if counts[-1] < 1 or counts[-1] > counts[-2]:
            raise ValueError(f"latent node count {counts[-1]} must lie in [1, {counts[-2]}]")
        return counts

    @property
    def n_latent(self) -> int:
        return self.node_counts[-1]

    def _build(self, rng: np.random.Generator) -> None:
        s, d, r, h = self.store, self.embed_dim, self.latent_dim, self.hidden_dim
        for k, dk in enumerate(self.view_dims):
            s.add(f"encoder.{k}.W1", glorot(rng, dk, h))
            s.add(f"encoder.{k}.b1", np.zeros(h))
            s.add(f"encoder.{k}.W2", glorot(rng, h, d))
            s.add(f"encoder.{k}.b2", np.zeros(d))
        for k, dk in enumerate(self.view_dims):
            s.add(f"decoder.{k}.W1", glorot(rng, d, h))
            s.add(f"decoder.{k}.b1", np.zeros(h))
            s.add(f"decoder.{k}.W2", glorot(rng, h, dk))
            s.add(f"decoder.{k}.b2", np.zeros(dk))
        if self.use_graph:
            s.add("graph_learner.W", glorot(rng, d + self.K, self.key_dim))
        self._add_norm("norm.views", (self.K, d))
        if not self.hierarchical:
            s.add("pool.0.embed.W", glorot(rng, d, r))
            self._add_norm("pool.0.embed", (self.K, r))
            s.add("unpool.0.embed.W", glorot(rng, r, d))
            self._add_norm("unpool.0.embed", (self.K, d))
            return
        for lvl in range(self.n_levels):
            k_in, k_out = self.node_counts[lvl], self.node_counts[lvl + 1]
            d_in = d if lvl == 0 else r
            s.add(f"pool.{lvl}.assign.W", glorot(rng, d_in, k_out))
            s.add(f"pool.{lvl}.embed.W", glorot(rng, d_in, r))
            self._add_norm(f"pool.{lvl}.embed", (k_in, r))
            self._add_norm(f"pool.{lvl}.latent", (k_out, r))
            s.add(f"unpool.{lvl}.assign.W", glorot(rng, r, k_in))
            s.add(f"unpool.{lvl}.embed.W", glorot(rng, r, d_in))
            self._add_norm(f"unpool.{lvl}.embed", (k_out, d_in))

    def _add_norm(self, name: str, shape: tuple[int, int]) -> None:
        self.store.add(f"{name}.running_mean", np.zeros(shape), trainable=False)
        self.store.add(f"{name}.running_var", np.ones(shape), trainable=False)

    def _norm(self, name: str, H: Tensor, training: bool) -> Tensor:
        return node_normalize(H, self.store[f"{name}.running_mean"], self.store[f"{name}.running_var"], training)

    # -- schema ---------------------------------------------------------------

    def schema(self) -> dict:
        return {
            "view_dims": self.view_dims,
            "K": self.K,
            "embed_dim": self.embed_dim,
            "latent_dim": self.latent_dim,
            "hidden_dim": self.hidden_dim,
            "n_latent": self.n_latent,
            "n_levels": self.n_levels,
            "alpha": self.alpha,
            "beta": self.beta,
            "tau": self.tau,
            "key_dim": self.key_dim,
            "variant": self.variant,
            "detach_target": self.detach_target,
            "seed": self.seed,
        }

    @classmethod
    def from_schema(cls, schema: dict) -> "LegatoNetwork":
        kw = {k: schema[k] for k in ("embed_dim", "latent_dim", "hidden_dim", "n_levels", "alpha", "beta", "tau", "key_dim", "variant", "seed")}
        n_latent = schema["n_latent"] if schema["variant"] != "NoHier" else None
        return cls(schema["view_dims"], n_latent=n_latent, detach_target=schema.get("detach_target", True), **kw)

    def save(self, path) -> None:
        T.save_checkpoint(path, self.store, {"schema": self.schema()})

    @classmethod
    def load(cls, path) -> "LegatoNetwork":
        header, entries = T.read_checkpoint(path)
        net = cls.from_schema(header["schema"])
        net.store.load_state_dict({n: arr for n, (arr, _) in entries.items()})
        return net

    # -- stages -----------------------------------------------------------------

    def encode_views(self, views: Sequence) -> Tensor:
        """``(N, K, d)`` stack of per-view embeddings."""
        self._check_views(views)
        s = self.store
        hs = [
            mlp(T.as_tensor(x), s[f"encoder.{k}.W1"], s[f"encoder.{k}.b1"], s[f"encoder.{k}.W2"], s[f"encoder.{k}.b2"])
            for k, x in enumerate(views)
        ]
        return T.stack(hs, axis=1)

    def decode_views(self, H_hat: Tensor) -> list[Tensor]:
        if H_hat.ndim != 3 or H_hat.shape[1] != self.K or H_hat.shape[2] != self.embed_dim:
            raise ShapeError(f"decode_views: expected (N, {self.K}, {self.embed_dim}), got {H_hat.shape}")
        s = self.store
        return [
            mlp(H_hat[:, k, :], s[f"decoder.{k}.W1"], s[f"decoder.{k}.b1"], s[f"decoder.{k}.W2"], s[f"decoder.{k}.b2"])
            for k in range(self.K)
        ]

    def learn_adjacency(self, H: Tensor) -> Tensor:
        self.adjacency_calls += 1
        return learn_adjacency(H, self.store["graph_learner.W"])

    def pool(self, A: Tensor, H: Tensor, training: bool, level: int = 0) -> LatentGraph:
        """Pool ``(A, H)`` with ``K`` nodes into a latent graph with fewer nodes."""
        s = self.store
        k_in, k_out = self.node_counts[level], self.node_counts[level + 1]
        if k_out > k_in:
            raise ValueError(f"pool: latent node count {k_out} exceeds input node count {k_in}")
        # assignment logits stay linear and unnormalized: batch-centering them
        # would erase any consistent view-to-node preference
        P = T.softmax(gcn_layer(A, H, s[f"pool.{level}.assign.W"], activation=None))
        Z = self._norm(f"pool.{level}.embed", gcn_layer(A, H, s[f"pool.{level}.embed.W"]), training)
        A_z, H_z = pool_graph(A, P, Z)
        H_z = self._norm(f"pool.{level}.latent", H_z, training)
        return LatentGraph(H_z, A_z, P)

    def unpool(self, latent: LatentGraph, training: bool, level: int = 0) -> tuple[Tensor, Tensor]:
        """Mirror of :meth:`pool`: ``(N, K', r) -> (N, K, d_in)``."""
        s = self.store
        P_un = T.softmax(gcn_layer(latent.A, latent.H, s[f"unpool.{level}.assign.W"], activation=None))
        Z_un = self._norm(f"unpool.{level}.embed", gcn_layer(latent.A, latent.H, s[f"unpool.{level}.embed.W"]), training)
        Pt = T.transpose(P_un)
        return Pt @ Z_un, Pt @ latent.A @ P_un

    def _flat_embed(self, A: Tensor, H: Tensor, training: bool) -> LatentGraph:
        Z = self._norm("pool.0.embed", gcn_layer(A, H, self.store["pool.0.embed.W"]), training)
        return LatentGraph(Z, A, None)

    def _flat_unembed(self, latent: LatentGraph, training: bool) -> tuple[Tensor, Tensor]:
        Z_un = self._norm("unpool.0.embed", gcn_layer(latent.A, latent.H, self.store["unpool.0.embed.W"]), training)
        return Z_un, latent.A

    # -- full pass --------------------------------------------------------------

    def forward(self, views: Sequence, training: bool = False) -> ForwardResult:
        """Encode, build the view graph, pool, unpool, decode and score."""
        H0 = self._norm("norm.views", self.encode_views(views), training)
        n = H0.shape[0]
        if self.use_graph:
            raw = self.learn_adjacency(H0)
            A0 = threshold_adjacency(raw, self.tau)
            spar = sparsity_loss(raw)
        else:
            raw = None
            A0 = Tensor(np.ones((n, self.K, self.K)))
            spar = Tensor(0.0)

        if self.hierarchical:
            latents = []
            A, H = A0, H0
            for lvl in range(self.n_levels):
                lat = self.pool(A, H, training, lvl)
                latents.append(lat)
                A, H = lat.A, lat.H
            latent = latents[-1]
            cur = latent
            for lvl in reversed(range(self.n_levels)):
                H_hat, A_hat = self.unpool(cur, training, lvl)
                cur = LatentGraph(H_hat, A_hat, None)
            H_hat, A_hat = cur.H, cur.A
        else:
            latent = self._flat_embed(A0, H0, training)
            H_hat, A_hat = self._flat_unembed(latent, training)

        x_hat = self.decode_views(H_hat)
        target = Tensor(A0.data) if self.detach_target else A0
        rf, ra = reconstruction_loss(views, x_hat, target, A_hat)
        orth = orthogonality_loss(latent.H)
        total = rf + ra + self.alpha * orth + self.beta * spar
        losses = LossBreakdown(rf, ra, orth, spar, self.alpha, self.beta, total)
        return ForwardResult(losses, latent, readout(latent), H0, raw, A0, x_hat, A_hat)

    def transform(self, views: Sequence) -> np.ndarray:
        """Evaluation-mode readout as a plain array."""
        with T.no_grad():
            return self.forward(views, training=False).readout.data.copy()

    def _check_views(self, views: Sequence) -> None:
        if len(views) != self.K:
            raise ShapeError(f"expected {self.K} views, got {len(views)}")
        for k, (x, dk) in enumerate(zip(views, self.view_dims)):
            shape = np.shape(x.data if isinstance(x, Tensor) else x)
            if len(shape) != 2 or shape[1] != dk:
                raise ShapeError(f"view {k}: expected (N, {dk}), got {shape}")


def build_variant(variant: str, view_dims: Sequence[int], **kwargs) -> LegatoNetwork:
    """Construct the full model or one of its ablations by tag."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    return LegatoNetwork(view_dims, variant=variant, **kwargs)
