"""Experiment configuration and the resumable sweep runner."""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .synthetic import SimSpec, simulate
from .training import TrainConfig, train

log = logging.getLogger("legato")

SCHEMA_VERSION = 1
RESULT_COLUMNS = (
    "K", "w", "mode", "variant", "seed", "mean_mse", "best_val_total", "final_train_total",
    "epochs", "best_epoch", "mean_abs_cos", "within_pair_edge", "cross_pair_edge", "status", "error",
)


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration (exit code 1)."""


@dataclass
class SweepAxes:
    K: list[int] = field(default_factory=lambda: [6])
    w: list[float] = field(default_factory=lambda: [0.0, 0.25, 0.5, 0.75])
    modes: list[str] = field(default_factory=lambda: ["local"])
    variants: list[str] = field(default_factory=lambda: ["full", "GlobalPool"])
    seeds: list[int] = field(default_factory=lambda: list(range(10)))

    def cells(self) -> list[dict]:
        for name in ("K", "w", "modes", "variants", "seeds"):
            if not getattr(self, name):
                raise ConfigError(f"sweep axis {name!r} is empty")
        return [
            {"K": K, "w": w, "mode": mode, "variant": variant, "seed": seed}
            for mode, K, w, variant, seed in itertools.product(self.modes, self.K, self.w, self.variants, self.seeds)
        ]


@dataclass
class ExperimentConfig:
    """One JSON document describing data, training and sweep axes.

    Exactly one of ``sim`` and ``data_dir`` is the data source; ``data_dir``
    wins when both are set and is required to exist.
    """

    sim: SimSpec = field(default_factory=lambda: SimSpec(feature_dim=20, N=2000))
    data_dir: str | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    sweep: SweepAxes = field(default_factory=SweepAxes)
    out: str | None = None
    workers: int = 1
    schema_version: int = SCHEMA_VERSION

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        version = d.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version}; expected {SCHEMA_VERSION}")
        try:
            sim = SimSpec(**{**asdict(SimSpec(feature_dim=20, N=2000)), **d.pop("sim", {})})
            tr = TrainConfig.from_dict(d.pop("train", {}))
            sw = SweepAxes(**d.pop("sweep", {}))
            cfg = cls(sim=sim, train=tr, sweep=sw, **d)
        except TypeError as exc:
            raise ConfigError(f"unknown configuration key: {exc}") from None
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            return cls.from_dict(json.loads(p.read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON ({exc})") from None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train"]["fractions"] = list(self.train.fractions)
        return d


# ----------------------------------------------------------------------------
# cells
# ----------------------------------------------------------------------------


def cell_key(cell: dict) -> str:
    return f"{cell['mode']}|K={cell['K']}|w={cell['w']!r}|{cell['variant']}|seed={cell['seed']}"


def run_cell(cell: dict, sim: SimSpec, train_cfg: TrainConfig) -> tuple[dict, float]:
    """Simulate fresh data for the cell's seed, train, probe; never raises."""
    # local imports keep worker start-up light
    import numpy as np

    from . import tensor as T
    from .attribution import mean_adjacency, pair_edge_contrast
    from .training import seed_streams, split_indices
    from .utils.validation import take_rows

    start = time.perf_counter()
    row = {**cell}
    try:
        spec = replace(sim, K=cell["K"], w=cell["w"], mode=cell["mode"], seed=cell["seed"])
        ds = simulate(spec)
        cfg = replace(train_cfg, variant=cell["variant"], seed=cell["seed"])
        net, rec = train(None, ds.views, cfg, ds.latents)
        _, _, test = split_indices(spec.N, cfg.fractions, seed_streams(cfg.seed)["split"])
        test_views = take_rows(ds.views, test)
        with T.no_grad():
            out = net.forward(test_views, training=False)
        within, across = pair_edge_contrast(out.adjacency.data.mean(axis=0)) if net.K > 1 else (float("nan"),) * 2
        row.update(
            mean_mse=rec.final_metric,
            best_val_total=rec.best_val_total,
            final_train_total=rec.history[-1].train["total"] if rec.history else float("nan"),
            epochs=len(rec.history),
            best_epoch=rec.best_epoch,
            mean_abs_cos=_mean_abs_cos(out.latent.H.data),
            within_pair_edge=within,
            cross_pair_edge=across,
            status="ok",
            error="",
        )
    except Exception as exc:  # a failed cell is recorded, the sweep continues
        log.debug("cell %s failed:\n%s", cell_key(cell), traceback.format_exc())
        row.update(status="failed", error=f"{type(exc).__name__}: {exc}")
    return row, time.perf_counter() - start


def _mean_abs_cos(H) -> float:
    import numpy as np

    k = H.shape[1]
    if k < 2:
        return 0.0
    U = H / np.maximum(np.linalg.norm(H, axis=-1, keepdims=True), 1e-12)
    cos = np.abs(U @ U.transpose(0, 2, 1))
    iu = np.tril_indices(k, -1)
    return float(cos[:, iu[0], iu[1]].mean())


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RESULT_COLUMNS)
    for row in rows:
        writer.writerow([_fmt(row.get(c)) for c in RESULT_COLUMNS])
    return buf.getvalue()


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


class Manifest:
    """Append-only record of finished cells, rewritten atomically on each append."""

    def __init__(self, path: Path):
        self.path = path
        self.entries: dict[str, dict] = {}
        if path.exists():
            for line in path.read_text().splitlines():
                if line.strip():
                    entry = json.loads(line)
                    self.entries[entry["key"]] = entry

    def append(self, key: str, row: dict, runtime: float) -> None:
        self.entries[key] = {"key": key, "row": row, "runtime": runtime}
        lines = [json.dumps(e, sort_keys=True) for e in self.entries.values()]
        _atomic_write(self.path, "\n".join(lines) + "\n")


@dataclass
class SweepResult:
    rows: list[dict]
    runtimes: dict[str, float]
    csv_path: Path

    @property
    def n_failed(self) -> int:
        return sum(r["status"] != "ok" for r in self.rows)


def run_sweep(
    axes: SweepAxes,
    sim: SimSpec,
    train_cfg: TrainConfig,
    out_dir,
    workers: int = 1,
    config_dict: dict | None = None,
) -> SweepResult:
    """Run every cell of ``axes`` not already in the manifest, then write ``results.csv``.

    Only successful cells are treated as complete on resume; failed cells are
    retried.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells = axes.cells()
    log.info("sweep: %d cells (%s)", len(cells), " x ".join(f"{n}={len(getattr(axes, n))}" for n in ("modes", "K", "w", "variants", "seeds")))
    if config_dict is not None:
        _atomic_write(out / "config.json", json.dumps(config_dict, indent=2, sort_keys=True) + "\n")
    manifest = Manifest(out / "manifest.jsonl")
    todo = [c for c in cells if manifest.entries.get(cell_key(c), {}).get("row", {}).get("status") != "ok"]
    log.info("sweep: %d done, %d to run", len(cells) - len(todo), len(todo))

    def record(cell, row, runtime):
        manifest.append(cell_key(cell), row, runtime)
        log.info("cell %s: %s mse=%s (%.1fs)", cell_key(cell), row["status"], row.get("mean_mse"), runtime)

    if workers <= 1:
        for cell in todo:
            row, runtime = run_cell(cell, sim, train_cfg)
            record(cell, row, runtime)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [(c, pool.submit(run_cell, c, sim, train_cfg)) for c in todo]
            for cell, fut in futures:
                row, runtime = fut.result()
                record(cell, row, runtime)

    rows = [manifest.entries[cell_key(c)]["row"] for c in cells]
    runtimes = {cell_key(c): manifest.entries[cell_key(c)]["runtime"] for c in cells}
    csv_path = out / "results.csv"
    _atomic_write(csv_path, rows_to_csv(rows))
    timing = "key,runtime_s\n" + "".join(f"{k},{v:.3f}\n" for k, v in runtimes.items())
    _atomic_write(out / "timings.csv", timing)
    return SweepResult(rows, runtimes, csv_path)


def configure_logging() -> None:
    level = os.environ.get("LEGATO_LOG", "warn").lower()
    mapping = {"error": logging.ERROR, "warn": logging.WARNING, "warning": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=mapping.get(level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
