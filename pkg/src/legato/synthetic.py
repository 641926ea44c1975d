"""Multi-view simulator with global or local latent correlation.

Each view ``k`` is rendered from one scalar latent ``z_k`` by a frozen,
randomly initialized MLP with a Tanh hidden layer. Under ``global`` mode
every latent is mixed with the first one; under ``local`` mode latents come
in independent correlated pairs.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

RENDER_HIDDEN = 32
MODES = ("global", "local")


@dataclass
class SimSpec:
    K: int = 6
    w: float = 0.5
    mode: str = "local"
    N: int = 2000
    feature_dim: int = 100
    seed: int = 0

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0.0 <= self.w < 1.0:
            raise ValueError(f"w must lie in [0, 1), got {self.w}")
        if self.K < 1:
            raise ValueError(f"K must be positive, got {self.K}")
        if self.mode == "local" and self.K % 2:
            raise ValueError(f"local mode needs an even number of views, got K={self.K}")
        if self.N < 0 or self.feature_dim < 1:
            raise ValueError("N must be >= 0 and feature_dim >= 1")


@dataclass
class Renderer:
    """Frozen ``1 -> hidden (Tanh) -> feature_dim`` network."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    @classmethod
    def from_seed(cls, seed, feature_dim: int, hidden: int = RENDER_HIDDEN) -> "Renderer":
        rng = np.random.default_rng(seed)
        return cls(
            W1=rng.standard_normal((1, hidden)),
            b1=rng.standard_normal(hidden),
            W2=rng.standard_normal((hidden, feature_dim)) / np.sqrt(hidden),
            b2=rng.standard_normal(feature_dim) / np.sqrt(hidden),
        )

    def __call__(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64).reshape(-1, 1)
        return np.tanh(z @ self.W1 + self.b1) @ self.W2 + self.b2


@dataclass
class SimDataset:
    spec: SimSpec
    views: list[np.ndarray]
    latents: np.ndarray
    renderer_seeds: list[int] = field(default_factory=list)


def _seeds(seed: int, K: int) -> tuple[int, list[int]]:
    """Independent child seeds: one for the latents, one per renderer."""
    children = np.random.SeedSequence(seed).generate_state(K + 1, dtype=np.uint32)
    return int(children[0]), [int(c) for c in children[1:]]


def simulate_global(spec: SimSpec, rng: np.random.Generator | None = None) -> np.ndarray:
    """``z_k ~ N(k, 1)`` then ``z_k <- (1 - w) z_k + w z_1`` using the original draw of ``z_1``."""
    spec.validate()
    if spec.mode != "global":
        raise ValueError("simulate_global requires mode='global'")
    rng = rng if rng is not None else np.random.default_rng(_seeds(spec.seed, spec.K)[0])
    means = np.arange(1, spec.K + 1, dtype=np.float64)
    z = rng.standard_normal((spec.N, spec.K)) + means
    z1 = z[:, :1].copy()
    return (1.0 - spec.w) * z + spec.w * z1


def simulate_local(spec: SimSpec, rng: np.random.Generator | None = None) -> np.ndarray:
    """Independent pairs ``(z_{2p-1}, z_{2p})`` with means ``(2p-1, 2p)``, unit variance, covariance ``w``."""
    spec.validate()
    if spec.mode != "local":
        raise ValueError("simulate_local requires mode='local'")
    rng = rng if rng is not None else np.random.default_rng(_seeds(spec.seed, spec.K)[0])
    noise = rng.standard_normal((spec.N, spec.K))
    z = np.empty_like(noise)
    z[:, 0::2] = noise[:, 0::2]
    z[:, 1::2] = spec.w * noise[:, 0::2] + np.sqrt(1.0 - spec.w**2) * noise[:, 1::2]
    return z + np.arange(1, spec.K + 1, dtype=np.float64)


def render_views(latents: np.ndarray, spec: SimSpec, renderer_seeds: list[int] | None = None) -> list[np.ndarray]:
    """Render view ``k`` from latent column ``k`` with its own frozen MLP."""
    seeds = renderer_seeds if renderer_seeds is not None else _seeds(spec.seed, spec.K)[1]
    return [Renderer.from_seed(seeds[k], spec.feature_dim)(latents[:, k]) for k in range(latents.shape[1])]


def simulate(spec: SimSpec) -> SimDataset:
    """Latents and rendered views; fully determined by ``spec``."""
    spec.validate()
    latent_seed, render_seeds = _seeds(spec.seed, spec.K)
    rng = np.random.default_rng(latent_seed)
    latents = simulate_global(spec, rng) if spec.mode == "global" else simulate_local(spec, rng)
    return SimDataset(spec, render_views(latents, spec, render_seeds), latents, render_seeds)


def target_correlation(spec: SimSpec) -> np.ndarray:
    """Population correlation matrix of the latents for ``spec``."""
    K, w = spec.K, spec.w
    C = np.eye(K)
    if spec.mode == "local":
        for p in range(K // 2):
            C[2 * p, 2 * p + 1] = C[2 * p + 1, 2 * p] = w
        return C
    # z_1 is unmixed; z_k = (1-w) e_k + w e_1 for k > 1
    var = (1 - w) ** 2 + w**2
    for j in range(K):
        for k in range(K):
            if j == k:
                continue
            if 0 in (j, k):
                C[j, k] = w / np.sqrt(var)
            else:
                C[j, k] = w**2 / var
    return C


def target_means(spec: SimSpec) -> np.ndarray:
    means = np.arange(1, spec.K + 1, dtype=np.float64)
    if spec.mode == "global":
        means = (1 - spec.w) * means + spec.w * means[0]
    return means


# ----------------------------------------------------------------------------
# CSV layout
# ----------------------------------------------------------------------------


def _write_csv(path: Path, header: list[str], rows: np.ndarray) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) for v in row])
    tmp.replace(path)


def save_dataset(ds: SimDataset, directory) -> Path:
    """Write ``view_<k>.csv``, ``latents.csv`` and ``sim_manifest.json``."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    for k, view in enumerate(ds.views):
        _write_csv(out / f"view_{k}.csv", [f"f{j}" for j in range(view.shape[1])], view)
    _write_csv(out / "latents.csv", [f"z{k + 1}" for k in range(ds.latents.shape[1])], ds.latents)
    manifest = {"spec": asdict(ds.spec), "renderer_seeds": ds.renderer_seeds, "n_views": len(ds.views)}
    (out / "sim_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


def _read_csv(path: Path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader if row]
    return np.array(rows, dtype=np.float64).reshape(len(rows), len(header))


def load_dataset(directory) -> tuple[list[np.ndarray], np.ndarray | None, dict]:
    """Read any directory of ``view_<k>.csv`` files; latents and manifest are optional."""
    d = Path(directory)
    files = sorted(d.glob("view_*.csv"), key=lambda p: int(p.stem.split("_")[1]))
    if not files:
        raise FileNotFoundError(f"no view_<k>.csv files in {d}")
    views = [_read_csv(p) for p in files]
    latents = _read_csv(d / "latents.csv") if (d / "latents.csv").exists() else None
    manifest = json.loads((d / "sim_manifest.json").read_text()) if (d / "sim_manifest.json").exists() else {}
    return views, latents, manifest
