"""Optimization loop, early stopping and the end-to-end train/probe routine."""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .model import LegatoNetwork, build_variant
from .probe import probe_mse_per_latent
from .tensor import NonFiniteError, ParameterStore
from .utils.validation import check_views, take_rows

LOSS_COLUMNS = ("recon_feat", "recon_adj", "orth", "spar", "total")


class TrainingError(RuntimeError):
    pass


@dataclass
class ModelConfig:
    embed_dim: int = 64
    latent_dim: int = 64
    hidden_dim: int = 64
    n_levels: int = 1
    tau: float = 0.1
    key_dim: int | None = None
    detach_target: bool = True


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    weight_decay: float = 0.001
    batch_size: int = 64
    max_epochs: int = 200
    patience: int = 20
    alpha: float = 0.01
    beta: float = 0.01
    fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)
    seed: int = 0
    variant: str = "full"
    model: ModelConfig = field(default_factory=ModelConfig)

    def validate(self) -> None:
        if len(self.fractions) != 3 or abs(sum(self.fractions) - 1.0) > 1e-9 or min(self.fractions) < 0:
            raise ValueError(f"split fractions must be three non-negative numbers summing to 1, got {self.fractions}")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (node normalization needs batch moments)")
        if self.max_epochs < 0 or self.learning_rate < 0 or self.weight_decay < 0:
            raise ValueError("max_epochs, learning_rate and weight_decay must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        model = ModelConfig(**d.pop("model", {}))
        if "fractions" in d:
            d["fractions"] = tuple(d["fractions"])
        return cls(model=model, **d)


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(store: ParameterStore, state: AdamState, lr: float, weight_decay: float = 0.0) -> None:
    """Bias-corrected Adam with decoupled weight decay; clears gradients afterwards."""
    params = store.trainable()
    for name, p in params:
        if p.grad is None:
            raise TrainingError(f"adam_step: parameter {name!r} has no gradient")
    state.step += 1
    c1 = 1.0 - state.beta1**state.step
    c2 = 1.0 - state.beta2**state.step
    for name, p in params:
        g = p.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        if weight_decay:
            p.data *= 1.0 - lr * weight_decay
        p.data -= (lr / c1) * m / (np.sqrt(v / c2) + state.eps)
    store.zero_grad()


@dataclass
class EpochRecord:
    epoch: int
    train: dict[str, float]
    val_total: float


@dataclass
class RunRecord:
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    best_val_total: float = math.inf
    final_metric: float | None = None
    per_latent_mse: list[float] | None = None
    wall_clock: float = 0.0
    stopped_early: bool = False

    def to_dict(self) -> dict:
        d = asdict(self)
        if not math.isfinite(d["best_val_total"]):
            d["best_val_total"] = None
        return d

    def to_json(self, path) -> None:
        _atomic_write(Path(path), json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def to_csv(self, path) -> None:
        lines = [",".join(("epoch",) + LOSS_COLUMNS + ("val_total",))]
        for rec in self.history:
            vals = [repr(rec.train[c]) for c in LOSS_COLUMNS]
            lines.append(",".join([str(rec.epoch), *vals, repr(rec.val_total)]))
        _atomic_write(Path(path), "\n".join(lines) + "\n")

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        d = dict(d)
        d["history"] = [EpochRecord(**h) for h in d.get("history", [])]
        if d.get("best_val_total") is None:
            d["best_val_total"] = math.inf
        return cls(**d)


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def seed_streams(seed: int) -> dict[str, int]:
    """Independent integer seeds for model init, data split and batch shuffling."""
    states = np.random.SeedSequence(seed).generate_state(3, dtype=np.uint32)
    return {"init": int(states[0]), "split": int(states[1]), "shuffle": int(states[2])}


def split_indices(n: int, fractions=(0.6, 0.2, 0.2), seed: int = 0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Shuffle ``range(n)`` and cut it into unlabeled-train / labeled-train / test."""
    perm = np.random.default_rng(seed).permutation(n)
    a = int(math.floor(fractions[0] * n))
    b = a + int(math.floor(fractions[1] * n))
    return np.sort(perm[:a]), np.sort(perm[a:b]), np.sort(perm[b:])


def make_batches(order: np.ndarray, batch_size: int) -> list[np.ndarray]:
    """Consecutive chunks; a trailing singleton joins the previous chunk."""
    batches = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    if len(batches) > 1 and len(batches[-1]) < 2:
        tail = batches.pop()
        batches[-1] = np.concatenate([batches[-1], tail])
    return batches


def _check_finite(losses: dict[str, float], epoch: int) -> None:
    for name, value in losses.items():
        if not math.isfinite(value):
            raise TrainingError(f"non-finite {name} loss at epoch {epoch}")


def evaluate_losses(net: LegatoNetwork, views: Sequence[np.ndarray], batch_size: int = 1024) -> dict[str, float]:
    """Evaluation-mode losses averaged over samples."""
    n = views[0].shape[0]
    sums = dict.fromkeys(LOSS_COLUMNS, 0.0)
    with T.no_grad():
        for i in range(0, n, batch_size):
            chunk = [v[i : i + batch_size] for v in views]
            out = net.forward(chunk, training=False).losses.as_dict()
            m = chunk[0].shape[0]
            for c in LOSS_COLUMNS:
                sums[c] += out[c] * m
    return {c: sums[c] / max(n, 1) for c in LOSS_COLUMNS}


def fit_network(
    net: LegatoNetwork,
    train_views: Sequence[np.ndarray],
    val_views: Sequence[np.ndarray],
    config: TrainConfig,
    record: RunRecord | None = None,
) -> RunRecord:
    """Minimize the total loss on ``train_views``; keep the best validation epoch."""
    config.validate()
    record = record if record is not None else RunRecord()
    n = train_views[0].shape[0]
    if config.max_epochs and n < 2:
        raise ValueError("training needs at least 2 samples")
    rng = np.random.default_rng(seed_streams(config.seed)["shuffle"])
    state = AdamState()
    best_state = net.store.state_dict()
    net.store.zero_grad()
    for epoch in range(config.max_epochs):
        sums = dict.fromkeys(LOSS_COLUMNS, 0.0)
        for idx in make_batches(rng.permutation(n), config.batch_size):
            try:
                out = net.forward(take_rows(train_views, idx), training=True)
            except NonFiniteError as exc:
                raise TrainingError(f"epoch {epoch}: {exc}") from exc
            batch = out.losses.as_dict()
            _check_finite(batch, epoch)
            T.backward(out.losses.total)
            adam_step(net.store, state, config.learning_rate, config.weight_decay)
            for c in LOSS_COLUMNS:
                sums[c] += batch[c] * len(idx)
        train = {c: sums[c] / n for c in LOSS_COLUMNS}
        val = evaluate_losses(net, val_views)
        _check_finite({f"validation {k}": v for k, v in val.items()}, epoch)
        record.history.append(EpochRecord(epoch, train, val["total"]))
        if val["total"] < record.best_val_total:
            record.best_val_total = val["total"]
            record.best_epoch = epoch
            best_state = net.store.state_dict()
        elif epoch - record.best_epoch >= config.patience:
            record.stopped_early = True
            break
    net.store.load_state_dict(best_state)
    return record


def make_network(view_dims: Sequence[int], config: TrainConfig) -> LegatoNetwork:
    m = config.model
    return build_variant(
        config.variant,
        view_dims,
        embed_dim=m.embed_dim,
        latent_dim=m.latent_dim,
        hidden_dim=m.hidden_dim,
        n_levels=m.n_levels,
        tau=m.tau,
        key_dim=m.key_dim,
        detach_target=m.detach_target,
        alpha=config.alpha,
        beta=config.beta,
        seed=seed_streams(config.seed)["init"],
    )


def evaluate_probe(net: LegatoNetwork, views, latents, labeled_idx, test_idx) -> np.ndarray:
    """Per-latent test MSE of ridge probes fit on the labeled split's readouts."""
    train_repr = net.transform(take_rows(views, labeled_idx))
    test_repr = net.transform(take_rows(views, test_idx))
    return probe_mse_per_latent(train_repr, latents[labeled_idx], test_repr, latents[test_idx])


def train(
    model: LegatoNetwork | None,
    views: Sequence[np.ndarray],
    config: TrainConfig,
    latents: np.ndarray | None = None,
) -> tuple[LegatoNetwork, RunRecord]:
    """Split 60/20/20, train on the unlabeled part, early-stop on the labeled part.

    When ``latents`` are given the frozen readout is probed and the mean test
    MSE is stored in ``RunRecord.final_metric``.
    """
    config.validate()
    views = check_views(views)
    net = model if model is not None else make_network([v.shape[1] for v in views], config)
    start = time.perf_counter()
    unlabeled, labeled, test = split_indices(views[0].shape[0], config.fractions, seed_streams(config.seed)["split"])
    record = fit_network(net, take_rows(views, unlabeled), take_rows(views, labeled), config)
    if latents is not None:
        per = evaluate_probe(net, views, np.asarray(latents, dtype=np.float64), labeled, test)
        record.per_latent_mse = [float(v) for v in per]
        record.final_metric = float(per.mean())
    record.wall_clock = time.perf_counter() - start
    return net, record
