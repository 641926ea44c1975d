"""Command-line interface: ``legato {simulate,train,evaluate,attribute,sweep}``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
Settings resolve as flags > config file > defaults.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .attribution import mean_adjacency, view_contribution_matrix
from .experiment import ConfigError, ExperimentConfig, configure_logging, run_sweep
from .model import LegatoNetwork
from .synthetic import load_dataset, save_dataset, simulate
from .tensor import read_checkpoint, save_checkpoint
from .training import evaluate_probe, seed_streams, split_indices, train
from .utils.validation import check_views, take_rows

log = logging.getLogger("legato")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
    common.add_argument("--workers", type=int, help="worker processes for sweeps")

    sim = argparse.ArgumentParser(add_help=False)
    sim.add_argument("--K", type=int, dest="K", help="number of views")
    sim.add_argument("--w", type=float, help="correlation strength in [0, 1)")
    sim.add_argument("--mode", choices=["global", "local"])
    sim.add_argument("--n", type=int, dest="N", help="number of samples")
    sim.add_argument("--feature-dim", type=int)

    tr = argparse.ArgumentParser(add_help=False)
    tr.add_argument("--variant", choices=["full", "NoHier", "NoGraph", "NoReg", "GlobalPool"])
    tr.add_argument("--max-epochs", type=int)
    tr.add_argument("--lr", type=float, dest="learning_rate")
    tr.add_argument("--weight-decay", type=float)
    tr.add_argument("--alpha", type=float)
    tr.add_argument("--beta", type=float)
    tr.add_argument("--data", help="dataset directory (view_<k>.csv layout)")

    p = argparse.ArgumentParser(prog="legato", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common, sim], help="write a synthetic multi-view dataset")
    sub.add_parser("train", parents=[common, sim, tr], help="train a model and write a checkpoint")
    ev = sub.add_parser("evaluate", parents=[common, sim, tr], help="probe a checkpoint's representations")
    ev.add_argument("--checkpoint", required=True)
    at = sub.add_parser("attribute", parents=[common, sim, tr], help="view contributions and learned adjacency")
    at.add_argument("--checkpoint", required=True)
    at.add_argument("--steps", type=int, default=50)
    at.add_argument("--samples", type=int, default=64)
    sub.add_parser("sweep", parents=[common, sim, tr], help="run a grid of train+evaluate cells")
    return p


def _resolve(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    sim_over = {k: getattr(args, k) for k in ("K", "w", "mode", "N", "feature_dim") if getattr(args, k, None) is not None}
    if args.seed is not None:
        sim_over["seed"] = args.seed
    cfg.sim = replace(cfg.sim, **sim_over)
    tr_over = {k: getattr(args, k) for k in ("variant", "max_epochs", "learning_rate", "weight_decay", "alpha", "beta") if getattr(args, k, None) is not None}
    if args.seed is not None:
        tr_over["seed"] = args.seed
    cfg.train = replace(cfg.train, **tr_over)
    if getattr(args, "data", None):
        cfg.data_dir = args.data
    if args.out:
        cfg.out = args.out
    if args.workers is not None:
        cfg.workers = args.workers
    return cfg


def _prepare_out(cfg: ExperimentConfig, force: bool, allow_existing: bool = False) -> Path:
    if not cfg.out:
        raise UsageError("an output directory is required (--out or 'out' in the config)")
    out = Path(cfg.out)
    if out.exists() and any(out.iterdir()) and not (force or allow_existing):
        raise UsageError(f"output directory {out} is not empty; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_data(cfg: ExperimentConfig):
    if cfg.data_dir:
        if not Path(cfg.data_dir).is_dir():
            raise UsageError(f"dataset directory not found: {cfg.data_dir}")
        views, latents, _ = load_dataset(cfg.data_dir)
        return check_views(views), latents
    try:
        cfg.sim.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    ds = simulate(cfg.sim)
    return ds.views, ds.latents


def _load_checkpoint(path: str, views) -> tuple[LegatoNetwork, dict]:
    if not Path(path).exists():
        raise UsageError(f"checkpoint not found: {path}")
    header, _ = read_checkpoint(path)
    schema = header["schema"]
    dims = [v.shape[1] for v in views]
    if schema["view_dims"] != dims:
        raise UsageError(f"checkpoint expects view dims {schema['view_dims']}, data has {dims}")
    return LegatoNetwork.load(path), header


def _write_json(path: Path, obj) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    tmp.replace(path)


def _write_matrix(path: Path, M: np.ndarray, row_prefix: str, col_prefix: str) -> None:
    lines = [",".join([""] + [f"{col_prefix}{j}" for j in range(M.shape[1])])]
    for i, row in enumerate(M):
        lines.append(",".join([f"{row_prefix}{i}"] + [repr(float(v)) for v in row]))
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    tmp.replace(path)


# ----------------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = _resolve(args)
    try:
        cfg.sim.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = _prepare_out(cfg, args.force)
    save_dataset(simulate(cfg.sim), out)
    print(out)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _resolve(args)
    out = _prepare_out(cfg, args.force)
    views, latents = _load_data(cfg)
    net, record = train(None, views, cfg.train, latents)
    header = {"schema": net.schema(), "train": cfg.to_dict()["train"]}
    save_checkpoint(out / "checkpoint.bin", net.store, header)
    record.to_json(out / "run_record.json")
    record.to_csv(out / "history.csv")
    print(json.dumps({"checkpoint": str(out / "checkpoint.bin"), "mean_mse": record.final_metric}))
    return EXIT_OK


def _split_for(header: dict, n: int):
    train_cfg = header.get("train", {})
    fractions = tuple(train_cfg.get("fractions", (0.6, 0.2, 0.2)))
    return split_indices(n, fractions, seed_streams(int(train_cfg.get("seed", 0)))["split"])


def cmd_evaluate(args) -> int:
    cfg = _resolve(args)
    views, latents = _load_data(cfg)
    if latents is None:
        raise UsageError("evaluation needs latents.csv in the dataset directory")
    net, header = _load_checkpoint(args.checkpoint, views)
    out = _prepare_out(cfg, args.force, allow_existing=True)
    _, labeled, test = _split_for(header, views[0].shape[0])
    per = evaluate_probe(net, views, latents, labeled, test)
    result = {"mean_mse": float(per.mean()), "per_latent_mse": [float(v) for v in per], "checkpoint": str(args.checkpoint)}
    _write_json(out / "probe.json", result)
    print(json.dumps({"mean_mse": result["mean_mse"]}))
    return EXIT_OK


def cmd_attribute(args) -> int:
    cfg = _resolve(args)
    views, _ = _load_data(cfg)
    net, header = _load_checkpoint(args.checkpoint, views)
    out = _prepare_out(cfg, args.force, allow_existing=True)
    _, _, test = _split_for(header, views[0].shape[0])
    sample = take_rows(views, test[: args.samples])
    contrib = view_contribution_matrix(net, sample, steps=args.steps)
    _write_matrix(out / "view_contribution.csv", contrib, "latent_", "view_")
    _write_matrix(out / "mean_adjacency.csv", mean_adjacency(net, take_rows(views, test)), "view_", "view_")
    print(out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _resolve(args)
    # sweeps resume into an existing directory by design
    out = _prepare_out(cfg, args.force, allow_existing=True)
    n_cells = len(cfg.sweep.cells())
    print(f"sweep: {n_cells} cells -> {out / 'results.csv'}", file=sys.stderr)
    result = run_sweep(cfg.sweep, cfg.sim, cfg.train, out, workers=cfg.workers, config_dict=cfg.to_dict())
    if result.n_failed:
        print(f"sweep: {result.n_failed} of {n_cells} cells failed", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "attribute": cmd_attribute,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    configure_logging()
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        log.debug("unhandled failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
