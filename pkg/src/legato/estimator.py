"""scikit-learn compatible wrapper around :class:`LegatoNetwork`."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils import check_random_state
from sklearn.utils.validation import check_is_fitted

from .attribution import mean_adjacency
from .model import LegatoNetwork
from .training import ModelConfig, TrainConfig, evaluate_losses, fit_network, make_network
from .utils.validation import check_views, take_rows


class LegatoEncoder(TransformerMixin, BaseEstimator):
    """Unsupervised multi-view encoder producing the latent-graph readout.

    ``fit`` takes a list of views (one ``(n_samples, n_features_k)`` array per
    view), holds out ``validation_fraction`` of the rows for early stopping
    and trains the autoencoder. ``transform`` returns ``(n_samples, latent_dim)``.

    Parameters
    ----------
    embed_dim : int, default=64
        View embedding size.
    latent_dim : int, default=64
        Latent node embedding size; also the output dimension.
    hidden_dim : int, default=64
        Hidden width of the per-view encoders and decoders.
    n_levels : int, default=1
        Stacked pooling levels.
    alpha, beta : float, default=0.01
        Weights of the orthogonality and sparsity regularizers.
    tau : float, default=0.1
        Edges below this weight are dropped.
    variant : {"full", "NoHier", "NoGraph", "NoReg", "GlobalPool"}, default="full"
    learning_rate, weight_decay : float
        Adam step size and decoupled weight decay.
    batch_size, max_epochs, patience : int
    validation_fraction : float, default=0.25
    random_state : int, RandomState or None
    """

    def __init__(
        self,
        embed_dim=64,
        latent_dim=64,
        hidden_dim=64,
        n_levels=1,
        alpha=0.01,
        beta=0.01,
        tau=0.1,
        variant="full",
        learning_rate=0.01,
        weight_decay=0.001,
        batch_size=64,
        max_epochs=200,
        patience=20,
        validation_fraction=0.25,
        random_state=None,
    ):
        self.embed_dim = embed_dim
        self.latent_dim = latent_dim
        self.hidden_dim = hidden_dim
        self.n_levels = n_levels
        self.alpha = alpha
        self.beta = beta
        self.tau = tau
        self.variant = variant
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            patience=self.patience,
            alpha=self.alpha,
            beta=self.beta,
            seed=seed,
            variant=self.variant,
            model=ModelConfig(self.embed_dim, self.latent_dim, self.hidden_dim, self.n_levels, self.tau),
        )

    def fit(self, Xs, y=None):
        """Train on ``Xs``; ``y`` is ignored."""
        views = check_views(Xs, min_samples=4)
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError(f"validation_fraction must lie in (0, 1), got {self.validation_fraction}")
        rng = check_random_state(self.random_state if self.random_state is not None else 0)
        seed = int(rng.randint(np.iinfo(np.int32).max))
        n = views[0].shape[0]
        order = np.random.default_rng(seed).permutation(n)
        n_val = min(max(2, int(round(self.validation_fraction * n))), n - 2)
        val_idx, train_idx = np.sort(order[:n_val]), np.sort(order[n_val:])
        config = self._train_config(seed)
        net = make_network([v.shape[1] for v in views], config)
        self.record_ = fit_network(net, take_rows(views, train_idx), take_rows(views, val_idx), config)
        self.network_ = net
        self.view_dims_ = list(net.view_dims)
        self.n_views_ = net.K
        self.n_latent_ = net.n_latent
        return self

    def transform(self, Xs):
        check_is_fitted(self, "network_")
        views = check_views(Xs, expected_dims=self.view_dims_)
        return self.network_.transform(views)

    def score(self, Xs, y=None):
        """Negative evaluation-mode total loss (higher is better)."""
        check_is_fitted(self, "network_")
        views = check_views(Xs, expected_dims=self.view_dims_)
        return -evaluate_losses(self.network_, views)["total"]

    def learned_adjacency(self, Xs):
        """Sample-averaged view adjacency, ``(K, K)``."""
        check_is_fitted(self, "network_")
        return mean_adjacency(self.network_, check_views(Xs, expected_dims=self.view_dims_))

    @property
    def network(self) -> LegatoNetwork:
        check_is_fitted(self, "network_")
        return self.network_
