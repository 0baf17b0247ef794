"""Command-line front end: ``ggnam train | discover | explain``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 training
divergence. Human-readable detail goes to ``error.log`` in the run
directory; partial runs also get a ``FAILED`` sentinel file.
"""

from __future__ import annotations

import dataclasses
import json
import os
import sys
import time
import traceback
from dataclasses import dataclass
from pathlib import Path

import click
import numpy as np

from . import additive, data, metrics, structure
from .additive import GgnamModel, Hyperparams, PartitionError, make_partition, preset_partition
from .nn import InvalidSpecError, TrainingDiverged
from .scheduler import default_workers

try:
    import tomllib
except ImportError:
    import tomli as tomllib

EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 2, 3, 4
MODEL_KINDS = ("lalr", "fcnn", "nam", "ggnam")


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    dataset: str | None = None
    task: str | None = None
    model: str = "ggnam"
    partition: str | None = None
    hidden_widths: list[int] | None = None
    activation: str | None = None
    l2_lambda: float | None = None
    learning_rate: float = 1e-3
    batch_size: int = 128
    max_epochs: int = 500
    patience: int = 25
    epsilon_select: float | None = None
    epsilon_group: float | None = None
    seed: int = 0
    workers: int | None = None
    output_root: str = "runs"

    def hyperparams(self, task):
        overrides = {
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "max_epochs": self.max_epochs,
            "patience": self.patience,
        }
        if self.hidden_widths is not None:
            overrides["hidden_widths"] = tuple(self.hidden_widths)
        if self.activation is not None:
            overrides["activation"] = self.activation
        if self.l2_lambda is not None:
            overrides["l2_lambda"] = self.l2_lambda
        return Hyperparams.for_task(task, **overrides)

    def to_dict(self):
        return dataclasses.asdict(self)


def resolve_config(config_file, cli_values) -> RunConfig:
    """Defaults < config file < environment < command-line flags."""
    values = {}
    if config_file:
        path = Path(config_file)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            values.update(tomllib.loads(path.read_text()))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    if os.environ.get("GGNAM_OUTPUT_ROOT"):
        values["output_root"] = os.environ["GGNAM_OUTPUT_ROOT"]
    values.update({k: v for k, v in cli_values.items() if v is not None})
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    if isinstance(values.get("hidden_widths"), str):
        values["hidden_widths"] = [int(w) for w in values["hidden_widths"].split(",") if w.strip()]
    cfg = RunConfig(**values)
    if not cfg.dataset:
        raise ConfigError("a dataset manifest is required (--dataset)")
    if cfg.model not in MODEL_KINDS and cfg.partition is None:
        raise ConfigError(f"--model must be one of {MODEL_KINDS}")
    if cfg.task is not None and cfg.task not in data.TASKS:
        raise ConfigError(f"task must be one of {data.TASKS}")
    if cfg.workers is None:
        cfg.workers = default_workers()
    else:
        cfg.workers = max(1, int(cfg.workers))
        if os.environ.get("GGNAM_WORKERS"):
            cfg.workers = min(cfg.workers, max(1, int(os.environ["GGNAM_WORKERS"])))
    return cfg


def make_run_dir(root, command, seed, out=None, force=False) -> Path:
    if out is not None:
        path = Path(out)
        if path.exists() and any(path.iterdir()) and not force:
            raise ConfigError(f"run directory {path} exists; pass --force to reuse it")
    else:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        path = Path(root) / f"{stamp}-{command}-seed{seed}"
        k = 1
        while path.exists() and not force:
            path = Path(root) / f"{stamp}-{command}-seed{seed}-{k}"
            k += 1
    path.mkdir(parents=True, exist_ok=True)
    return path


def _fail(run_dir, code, exc, sentinel=True):
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "error.log").write_text("".join(traceback.format_exception(exc)))
        if sentinel:
            (run_dir / "FAILED").write_text(f"{type(exc).__name__}: {exc}\n")
    click.echo(f"error: {exc}", err=True)
    sys.exit(code)


def _error_dir(root, command, seed, out):
    """Where to put error.log when no run directory could be created.

    An existing ``--out`` directory is never written into; its sibling
    ``<out>-error`` receives the log instead.
    """
    if out is not None:
        out = Path(out)
        return out.with_name(out.name + "-error") if out.exists() else out
    return Path(root) / f"{time.strftime('%Y%m%d-%H%M%S')}-{command}-seed{seed}-error"


def _run(command, config_file, out, force, cli_values, body):
    root = os.environ.get("GGNAM_OUTPUT_ROOT") or cli_values.get("output_root") or "runs"
    seed = cli_values.get("seed") or 0
    try:
        cfg = resolve_config(config_file, cli_values)
        manifest = data.load_manifest(cfg.dataset)
        run_dir = make_run_dir(cfg.output_root, command, cfg.seed, out, force)
    except (ConfigError, data.ManifestError, PartitionError, InvalidSpecError, TypeError, ValueError) as exc:
        _fail(_error_dir(root, command, seed, out), EXIT_CONFIG, exc, sentinel=False)
    (run_dir / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    try:
        body(cfg, manifest, run_dir)
    except (ConfigError, PartitionError, InvalidSpecError) as exc:
        _fail(run_dir, EXIT_CONFIG, exc)
    except data.DataError as exc:
        _fail(run_dir, EXIT_DATA, exc)
    except TrainingDiverged as exc:
        _fail(run_dir, EXIT_DIVERGED, exc)
    click.echo(str(run_dir))


def _prepare(cfg, manifest, run_dir):
    if cfg.task is not None and cfg.task != manifest.task:
        raise ConfigError(f"task {cfg.task!r} conflicts with manifest task {manifest.task!r}")
    prepared = data.prepare_from_manifest(manifest, cfg.seed)
    data.write_splits(prepared, run_dir / "splits")
    return prepared


def _write_metrics(run_dir, records):
    (run_dir / "metrics.json").write_text(json.dumps(records, indent=2) + "\n")


def _load_partition(path, p):
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read partition file {path}: {exc}") from exc
    return make_partition(raw.get("p", p), raw.get("linear", []), raw.get("groups", []))


def _train_body(cfg, manifest, run_dir):
    prepared = _prepare(cfg, manifest, run_dir)
    task = manifest.task
    hp = cfg.hyperparams(task)
    p = prepared.train.n_features
    if cfg.partition is None and cfg.model == "ggnam":
        _discover_body(cfg, manifest, run_dir, prepared)
        return
    part = _load_partition(cfg.partition, p) if cfg.partition else preset_partition(cfg.model, p)
    if part.p != p:
        raise data.DataError(f"partition covers {part.p} features but the dataset has {p}")
    res = structure.train_and_score(part, prepared.train, prepared.val, task, hp, cfg.seed)
    res.model.save(run_dir / "model.json")
    name = metrics.metric_name(task)
    records = []
    for split_name, ds in (("val", prepared.val), ("test", prepared.test)):
        value = metrics.score(task, res.model.predict_batch(ds.X), ds.y)
        records.append(metrics.metric_record(name, split_name, abs(value) if name == "rmse" else value, cfg.seed)
                       | {"model": cfg.model if cfg.partition is None else "custom"})
    _write_metrics(run_dir, records)
    (run_dir / "architecture.txt").write_text(structure.architecture_report(
        p, list(part.linear), [list(g) for g in part.groups], feature_names=prepared.feature_names))


def _discover_body(cfg, manifest, run_dir, prepared=None):
    prepared = prepared or _prepare(cfg, manifest, run_dir)
    task = manifest.task
    result = structure.fit_ggnam_pipeline(
        prepared, task, cfg.epsilon_select, cfg.epsilon_group, cfg.hyperparams(task),
        cfg.seed, cfg.workers, out_dir=run_dir,
    )
    _write_metrics(run_dir, result.metrics)


def _common_options(f):
    options = [
        click.option("--dataset", "dataset", type=str, help="Dataset manifest (TOML)."),
        click.option("--config", "config_file", type=click.Path(), help="Flat key-value run config (TOML)."),
        click.option("--seed", type=int),
        click.option("--hidden", "hidden_widths", type=str, help="Subnetwork widths, e.g. 16,8."),
        click.option("--activation", type=click.Choice(["logistic", "relu", "identity"])),
        click.option("--l2", "l2_lambda", type=float),
        click.option("--lr", "learning_rate", type=float),
        click.option("--batch-size", type=int),
        click.option("--max-epochs", type=int),
        click.option("--patience", type=int),
        click.option("--workers", type=int),
        click.option("--output-root", type=str),
        click.option("--out", type=click.Path(), help="Explicit run directory."),
        click.option("--force", is_flag=True, help="Reuse an existing run directory."),
    ]
    for opt in reversed(options):
        f = opt(f)
    return f


@click.group()
def main():
    """Additive neural models with automatic structure discovery."""


@main.command()
@_common_options
@click.option("--model", type=click.Choice(MODEL_KINDS))
@click.option("--partition", type=str, help="JSON partition file {p, linear, groups}.")
def train(config_file, out, force, **values):
    """Train one model (preset or custom partition) and report its metrics."""
    _run("train", config_file, out, force, values, _train_body)


@main.command()
@_common_options
@click.option("--eps-select", "epsilon_select", type=float)
@click.option("--eps-group", "epsilon_group", type=float)
def discover(config_file, out, force, **values):
    """Run the full structure search and train the resulting model."""
    _run("discover", config_file, out, force, values, _discover_body)


@main.command()
@click.option("--model", "model_path", required=True, type=click.Path())
@click.option("--dataset", required=True, type=str)
@click.option("--seed", type=int, default=0, show_default=True, help="Split seed used at training time.")
@click.option("--shapes", is_flag=True, help="Export shape functions of nonlinear terms.")
@click.option("--jmp", nargs=2, type=int, help="Joint marginal probability matrix for features I J.")
@click.option("--bins", type=int, default=10, show_default=True)
@click.option("--min-count", type=int, default=30, show_default=True)
@click.option("--equal-width", is_flag=True)
@click.option("--hessian", is_flag=True, help="Integrated Hessian of the model score.")
@click.option("--step", type=float, default=1e-3, show_default=True)
@click.option("--out", type=click.Path())
@click.option("--force", is_flag=True)
@click.option("--output-root", type=str)
def explain(model_path, dataset, seed, shapes, jmp, bins, min_count, equal_width, hessian, step, out, force,
            output_root):
    """Export shape functions, joint marginal probabilities and Hessian diagnostics."""
    root = os.environ.get("GGNAM_OUTPUT_ROOT") or output_root or "runs"
    try:
        manifest = data.load_manifest(dataset)
        if not Path(model_path).is_file():
            raise ConfigError(f"model file not found: {model_path}")
        model = GgnamModel.load(model_path)
        run_dir = make_run_dir(root, "explain", seed, out, force)
    except (ConfigError, data.ManifestError, ValueError, KeyError) as exc:
        _fail(_error_dir(root, "explain", seed, out), EXIT_CONFIG, exc, sentinel=False)
    try:
        prepared = data.prepare_from_manifest(manifest, seed)
        missing = [n for n in model.feature_names if n not in prepared.feature_names]
        if missing or len(model.feature_names) != prepared.train.n_features:
            raise data.DataError(
                f"model expects {model.p} features {model.feature_names[:5]}..., dataset provides "
                f"{prepared.train.n_features}; missing {missing}")
        rows = [d.select_features(model.feature_names) for d in (prepared.train, prepared.val, prepared.test)]
        X = np.vstack([d.X for d in rows])
        y = np.concatenate([d.y for d in rows])
        if shapes:
            additive.export_shapes_csv(model, run_dir / "shapes.csv")
        if jmp:
            i, j = jmp
            if not (1 <= i <= model.p and 1 <= j <= model.p):
                raise data.DataError(f"feature indices must be in 1..{model.p}")
            if manifest.task != "binary_classification":
                raise data.DataError("joint marginal probabilities need a classification dataset")
            try:
                mat = metrics.joint_marginal_matrix(
                    X, y, i, j, bins, min_count, equal_width,
                    names=(model.feature_names[i - 1], model.feature_names[j - 1]))
            except metrics.DegenerateBinsError as exc:
                raise data.DataError(str(exc)) from exc
            mat.to_csv(run_dir / f"jmp_x{i}_x{j}.csv")
        if hessian:
            Z = model.scaler.transform(X)
            H = metrics.integrated_hessian(model.score_standardized, Z, step, model.feature_names)
            H.to_csv(run_dir / "hessian.csv")
    except data.DataError as exc:
        _fail(run_dir, EXIT_DATA, exc)
    click.echo(str(run_dir))


if __name__ == "__main__":
    main()
