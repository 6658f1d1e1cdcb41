"""Experiment runner: data -> partition -> deployments -> tables, traces and bound reports.

    python -m src.cli --deployment all --skew level2 --model svm --out results/level2

Exit codes: 0 success, 2 configuration error, 3 runtime error. On failure an
``error.json`` is written into the output directory.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import networkx
import numpy as np
import pandas as pd
import scipy
import sklearn
from packaging import version

from src.bounds import BoundReport, bound_inputs_from, merge_reports, verify_bound
from src.data import (DEFAULT_SPLIT, ClientDataset, Dataset, SkewSpec, build_partition,
                      load_breast_cancer_dataset, load_csv_dataset, niid_level, partition_manifest,
                      split_dataset)
from src.engine import DeploymentConfig, DeploymentKind, RunResult, event_seed, run_deployment
from src.errors import ConfigError, DatasetNotFoundError, SimulationError
from src.metrics import (DEFAULT_FLAT_TOL, DEFAULT_WINDOW, NC, TrainingTrace, accuracy,
                         detect_convergence, f1_binary)
from src.models import (LOGISTIC_DEFAULTS, SVM_DEFAULTS, ModelSpec, ParamVector,
                        estimate_constants, loss, predict, train_local)

logger = logging.getLogger(__name__)

# --- CONFIGURATION ---
MODEL_DEFAULTS = {"svm": SVM_DEFAULTS, "logistic": LOGISTIC_DEFAULTS}
DEFAULT_TOTAL_EPOCHS = {"svm": 500, "logistic": 1000}
SKEW_CHOICES = ("iid", "uniform", "level1", "level2", "level3")
EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str | None = None
    label_col: str = "label"
    drop_columns: tuple[str, ...] = ()
    label_map: dict[str, int] | None = None
    model: str = "svm"
    learning_rate: float | None = None
    l2_strength: float | None = None
    batch_size: int | None = None
    deployment: str = "all"
    n_clients: int = 5
    total_epochs: int | None = None
    n_rounds: int | None = None
    skew: str = "iid"
    seed: int = 0
    out: str = "results"
    window: int = DEFAULT_WINDOW
    flat_tol: float = DEFAULT_FLAT_TOL
    split: tuple[float, float, float] = DEFAULT_SPLIT
    chain_normalization: str = "pairwise"
    workers: int = 1
    bounds: bool = True

    def __post_init__(self):
        object.__setattr__(self, "drop_columns", tuple(self.drop_columns))
        object.__setattr__(self, "split", tuple(self.split))
        if self.model not in MODEL_DEFAULTS:
            raise ConfigError(f"model must be one of {sorted(MODEL_DEFAULTS)}, got {self.model!r}")
        if self.deployment != "all":
            try:
                DeploymentKind(self.deployment)
            except ValueError as exc:
                raise ConfigError(f"unknown deployment {self.deployment!r}") from exc
        if self.skew not in SKEW_CHOICES and not self.skew.startswith("custom:"):
            raise ConfigError(f"skew must be one of {SKEW_CHOICES} or custom:<path>, got {self.skew!r}")
        if self.n_clients < 1:
            raise ConfigError(f"n_clients must be >= 1, got {self.n_clients}")
        if self.total_epochs is not None and self.total_epochs < 0:
            raise ConfigError(f"total_epochs must be >= 0, got {self.total_epochs}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        if self.window < 2:
            raise ConfigError(f"window must be >= 2, got {self.window}")
        if self.flat_tol <= 0:
            raise ConfigError(f"flat_tol must be > 0, got {self.flat_tol}")

    @property
    def epochs(self) -> int:
        return DEFAULT_TOTAL_EPOCHS[self.model] if self.total_epochs is None else self.total_epochs

    def model_spec(self) -> ModelSpec:
        base = MODEL_DEFAULTS[self.model]
        return ModelSpec(
            base.kind,
            base.l2_strength if self.l2_strength is None else self.l2_strength,
            base.learning_rate if self.learning_rate is None else self.learning_rate,
            base.batch_size if self.batch_size is None else self.batch_size,
        )

    def deployments(self) -> list[DeploymentKind]:
        if self.deployment == "all":
            return list(DeploymentKind)
        return [DeploymentKind(self.deployment)]

    def skew_spec(self) -> SkewSpec:
        if self.skew.startswith("custom:"):
            return SkewSpec.from_json(self.skew.split(":", 1)[1])
        return SkewSpec.from_level(self.skew, self.n_clients)

    def deployment_config(self, kind: DeploymentKind) -> DeploymentConfig:
        return DeploymentConfig(kind, self.n_clients, self.epochs, self.model_spec(),
                                n_rounds=self.n_rounds, seed=self.seed,
                                chain_normalization=self.chain_normalization, workers=self.workers)

    def to_dict(self) -> dict:
        payload = asdict(self)
        payload["drop_columns"] = list(self.drop_columns)
        payload["split"] = list(self.split)
        return payload

    @classmethod
    def from_dict(cls, payload: dict) -> "ExperimentConfig":
        if not isinstance(payload, dict):
            raise ConfigError(f"config must be a JSON object, got {type(payload).__name__}")
        known = {f.name for f in fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        try:
            return cls(**payload)
        except (TypeError, AttributeError) as exc:
            raise ConfigError(f"malformed config value: {exc}") from exc

    @classmethod
    def from_json(cls, path: str | Path) -> "ExperimentConfig":
        """Read a config file, or the ``config`` section of a run manifest."""
        path = Path(path)
        if not path.is_file():
            raise DatasetNotFoundError(f"config file {path} does not exist")
        try:
            payload = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if isinstance(payload, dict) and "config" in payload:
            _check_versions(payload.get("versions", {}))
            payload = payload["config"]
        return cls.from_dict(payload)

    def to_manifest(self) -> dict:
        return {"config": self.to_dict(), "seed": self.seed, "versions": library_versions()}


def library_versions() -> dict[str, str]:
    return {"numpy": np.__version__, "scipy": scipy.__version__, "pandas": pd.__version__,
            "scikit-learn": sklearn.__version__, "networkx": networkx.__version__}


def _check_versions(recorded: dict[str, str]) -> None:
    current = library_versions()
    for name, then in recorded.items():
        now = current.get(name)
        if now is not None and version.parse(now) != version.parse(then):
            logger.warning("replay: %s %s differs from recorded %s; outputs may not be bit-identical",
                           name, now, then)


@dataclass
class BaselineReport:
    convergence_epoch: int | None
    f1: float
    accuracy: float
    final_loss: float
    epochs: int
    params: ParamVector
    trace: TrainingTrace = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "convergence_epoch": NC if self.convergence_epoch is None else self.convergence_epoch,
            "f1": self.f1,
            "accuracy": self.accuracy,
            "final_loss": self.final_loss,
            "epochs": self.epochs,
            "params": self.params.to_dict(),
        }


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
        handle.write(text)
    os.replace(tmp, path)


def _write_json(path: Path, payload) -> None:
    _write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, frame: pd.DataFrame, index: bool = False) -> None:
    _write_text(path, frame.to_csv(index=index, lineterminator="\n"))


def load_dataset(config: ExperimentConfig) -> Dataset:
    if config.dataset is None:
        return load_breast_cancer_dataset()
    return load_csv_dataset(config.dataset, config.label_col, drop_columns=config.drop_columns,
                            label_map=config.label_map)


def prepare_data(config: ExperimentConfig) -> tuple[Dataset, Dataset, Dataset]:
    return split_dataset(load_dataset(config), config.split, config.seed)


def run_baseline(config: ExperimentConfig,
                 splits: tuple[Dataset, Dataset, Dataset] | None = None) -> BaselineReport:
    """Single-machine training on the full training split."""
    train, validation, test = prepare_data(config) if splits is None else splits
    spec = config.model_spec()
    client = ClientDataset(0, train, validation)
    params, trace = train_local(spec, ParamVector.zeros(train.n_features), client, config.epochs,
                                event_seed(config.seed, 0, 0))
    predictions = predict(params, test.features)
    report = BaselineReport(
        convergence_epoch=detect_convergence(trace, config.window, config.flat_tol),
        f1=f1_binary(predictions, test.labels),
        accuracy=accuracy(predictions, test.labels),
        final_loss=loss(spec, params, train),
        epochs=config.epochs,
        params=params,
        trace=trace,
    )
    logger.info("baseline: %s converged at %s, F1 %.3f, loss %.4f", config.model,
                NC if report.convergence_epoch is None else report.convergence_epoch,
                report.f1, report.final_loss)
    return report


def convergence_table(results: Sequence[RunResult]) -> pd.DataFrame:
    frame = pd.DataFrame([r.convergence_row() for r in results],
                         index=pd.Index([r.deployment for r in results], name="deployment"))
    return frame.astype(object)


def f1_summary(results: Sequence[RunResult], baseline: BaselineReport | None = None) -> pd.DataFrame:
    rows = []
    if baseline is not None:
        rows.append({"deployment": "baseline", "f1": baseline.f1, "accuracy": baseline.accuracy,
                     "converged_clients": int(baseline.convergence_epoch is not None), "nc_clients":
                     int(baseline.convergence_epoch is None)})
    for r in results:
        nc = sum(v is None for v in r.convergence.values())
        rows.append({"deployment": r.deployment,
                     "f1": r.metrics.f1 if r.metrics else float("nan"),
                     "accuracy": r.metrics.accuracy if r.metrics else float("nan"),
                     "converged_clients": len(r.convergence) - nc, "nc_clients": nc})
    return pd.DataFrame(rows, columns=["deployment", "f1", "accuracy", "converged_clients", "nc_clients"])


def _run(config: ExperimentConfig) -> None:
    out = Path(config.out)
    train, validation, test = prepare_data(config)
    skew = config.skew_spec()
    partition = build_partition(train, skew, config.seed, validation=validation)
    level = niid_level(partition, train)
    logger.info("experiment: %s skew over %d clients, non-IID level %.5f",
                skew.level_name, config.n_clients, level)
    _write_json(out / "partition.json", {"level_name": skew.level_name, "niid_level": level,
                                         "skew": skew.to_dict(),
                                         "clients": partition_manifest(partition)})

    baseline = run_baseline(config, (train, validation, test))
    _write_json(out / "baseline.json", baseline.to_dict())
    _write_csv(out / "traces" / "baseline.csv", baseline.trace.to_frame("baseline"))

    results = []
    for kind in config.deployments():
        deployment = config.deployment_config(kind)
        result = run_deployment(deployment, partition, test=test,
                                window=config.window, flat_tol=config.flat_tol)
        results.append(result)
        _write_csv(out / "traces" / f"{kind.value}.csv", result.trace_frame())
        _write_json(out / "runs" / f"{kind.value}.json",
                    {**result.to_dict(), "topology": deployment.topology().to_adjacency()})

    _write_csv(out / "convergence_table.csv", convergence_table(results), index=True)
    _write_csv(out / "f1_summary.csv", f1_summary(results, baseline))

    if config.bounds:
        stats = estimate_constants(config.model_spec(), partition, seed=config.seed)
        reports: list[BoundReport] = [verify_bound(r, stats, bound_inputs_from(stats, r)) for r in results]
        _write_json(out / "bounds.json", {"constants": stats.to_dict(),
                                          "checks": merge_reports(reports).to_json()})
    _write_json(out / "manifest.json", config.to_manifest())


def run_experiment(config: ExperimentConfig) -> int:
    """Run every requested deployment and write the artifacts; returns the exit status."""
    try:
        _run(config)
    except SimulationError as exc:
        code = EXIT_CONFIG if isinstance(exc, (ConfigError, DatasetNotFoundError)) else EXIT_RUNTIME
        logger.error("experiment: %s: %s", type(exc).__name__, exc)
        _write_json(Path(config.out) / "error.json",
                    {"error": type(exc).__name__, "message": str(exc), "exit_code": code})
        return code
    logger.info("experiment: artifacts written to %s", config.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="python -m src.cli",
                                     description="Simulate decentralized federated learning deployments.")
    parser.add_argument("--config", help="JSON config or run manifest; flags override its values")
    parser.add_argument("--dataset", help="CSV file with a header row (default: bundled WDBC)")
    parser.add_argument("--label-col", dest="label_col")
    parser.add_argument("--model", choices=sorted(MODEL_DEFAULTS))
    parser.add_argument("--deployment", choices=[k.value for k in DeploymentKind] + ["all"])
    parser.add_argument("--clients", dest="n_clients", type=int)
    parser.add_argument("--epochs", dest="total_epochs", type=int)
    parser.add_argument("--rounds", dest="n_rounds", type=int)
    parser.add_argument("--skew", help="iid, uniform, level1, level2, level3 or custom:<path>")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out")
    parser.add_argument("--window", type=int)
    parser.add_argument("--flat-tol", dest="flat_tol", type=float)
    parser.add_argument("--lr", dest="learning_rate", type=float)
    parser.add_argument("--l2", dest="l2_strength", type=float)
    parser.add_argument("--batch-size", dest="batch_size", type=int)
    parser.add_argument("--chain-normalization", dest="chain_normalization",
                        choices=["pairwise", "cumulative"])
    parser.add_argument("--workers", type=int)
    parser.add_argument("--no-bounds", dest="bounds", action="store_false", default=None)
    parser.add_argument("--baseline", action="store_true", help="only run single-machine training")
    parser.add_argument("--log-level", default="INFO")
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    config = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()
    overrides = {f.name: getattr(args, f.name) for f in fields(ExperimentConfig)
                 if getattr(args, f.name, None) is not None}
    return replace(config, **overrides)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format=LOG_FORMAT)
    try:
        config = config_from_args(args)
    except SimulationError as exc:
        logger.error("config: %s", exc)
        out = Path(args.out or "results")
        _write_json(out / "error.json", {"error": type(exc).__name__, "message": str(exc),
                                         "exit_code": EXIT_CONFIG})
        return EXIT_CONFIG

    if not args.baseline:
        return run_experiment(config)
    try:
        report = run_baseline(config)
    except SimulationError as exc:
        code = EXIT_CONFIG if isinstance(exc, (ConfigError, DatasetNotFoundError)) else EXIT_RUNTIME
        _write_json(Path(config.out) / "error.json",
                    {"error": type(exc).__name__, "message": str(exc), "exit_code": code})
        return code
    _write_json(Path(config.out) / "baseline.json", report.to_dict())
    _write_csv(Path(config.out) / "traces" / "baseline.csv", report.trace.to_frame("baseline"))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
