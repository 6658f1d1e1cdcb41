"""Dataset ingestion, splitting and label-skew partitioning across clients.

Rows keep the id they had in the source file (``row_ids``) through every
split and partition, so a partition can always be traced back to the rows it
was drawn from.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from scipy.special import rel_entr
from sklearn.datasets import load_breast_cancer
from sklearn.preprocessing import MinMaxScaler

from src.errors import (DataError, DatasetNotFoundError, DatasetParseError,
                        DemandExceedsSupplyError, DimensionMismatchError,
                        DistributionError, EmptyClientError, EmptyDatasetError,
                        FractionError)

logger = logging.getLogger(__name__)

# --- CONFIGURATION ---
DEFAULT_SPLIT = (0.8, 0.1, 0.1)
POSITIVE_LABEL = 1
# Fraction of each client's share of the positive label; negatives get 1 - p.
NAMED_LEVELS = {
    "level1": (0.5, 0.6, 0.7, 0.8, 0.9),
    "level2": (0.1, 0.3, 0.5, 0.7, 0.9),
    "level3": (1.0, 0.0, 0.7, 1.0, 0.0),
}
# Absorbs float noise in products like 0.7 * 10 before flooring.
_FLOOR_EPS = 1e-9


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    name: str = "dataset"
    row_ids: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels).astype(np.int64)
        if features.ndim != 2:
            features = features.reshape(len(labels), -1)
        if features.shape[0] != labels.shape[0]:
            raise DimensionMismatchError(
                f"{self.name}: {features.shape[0]} feature rows but {labels.shape[0]} labels"
            )
        if not np.all(np.isfinite(features)):
            raise DataError(f"{self.name}: features contain NaN or Inf")
        row_ids = (np.arange(len(labels)) if self.row_ids is None
                   else np.asarray(self.row_ids, dtype=np.int64))
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "row_ids", row_ids)

    @property
    def n_rows(self) -> int:
        return int(self.labels.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.features.shape[1])

    def subset(self, index: np.ndarray, name: str | None = None) -> "Dataset":
        index = np.asarray(index, dtype=np.int64)
        return Dataset(self.features[index], self.labels[index],
                       name=name or self.name, row_ids=self.row_ids[index])

    def label_histogram(self) -> dict[int, int]:
        values, counts = np.unique(self.labels, return_counts=True)
        return {int(v): int(c) for v, c in zip(values, counts)}


@dataclass(frozen=True)
class ClientDataset:
    """One device's data: its training rows and the validation reference."""
    client_id: int
    train: Dataset
    validation: Dataset
    sample_count: int = field(init=False)

    def __post_init__(self):
        if self.client_id < 0:
            raise DataError(f"client_id must be >= 0, got {self.client_id}")
        if self.train.n_rows == 0:
            raise EmptyClientError(f"client {self.client_id} holds no training samples")
        if self.validation.n_features != self.train.n_features:
            raise DimensionMismatchError(
                f"client {self.client_id}: validation has {self.validation.n_features} "
                f"features, train has {self.train.n_features}"
            )
        object.__setattr__(self, "sample_count", self.train.n_rows)


@dataclass(frozen=True)
class SkewSpec:
    """Label-skew definition.

    ``positive_fractions[k]`` is the share of the positive label pool that
    client ``k`` draws. ``per_label_fractions`` (clients x labels, columns in
    ``label_values`` order) overrides the binary form when given.
    """
    positive_fractions: tuple[float, ...]
    per_label_fractions: tuple[tuple[float, ...], ...] | None = None
    level_name: str = "custom"
    label_values: tuple[int, ...] = (0, 1)

    def __post_init__(self):
        object.__setattr__(self, "positive_fractions",
                           tuple(float(f) for f in self.positive_fractions))
        if self.per_label_fractions is not None:
            rows = tuple(tuple(float(f) for f in row) for row in self.per_label_fractions)
            if len(rows) != len(self.positive_fractions):
                raise FractionError(
                    f"{self.level_name}: {len(rows)} rows of per-label fractions for "
                    f"{len(self.positive_fractions)} clients"
                )
            if any(len(row) != len(self.label_values) for row in rows):
                raise FractionError(f"{self.level_name}: every row needs one fraction per label")
            object.__setattr__(self, "per_label_fractions", rows)
        matrix = self.fraction_matrix()
        if np.any(matrix < 0.0) or np.any(matrix > 1.0):
            raise FractionError(f"{self.level_name}: fractions must lie in [0, 1]")

    @property
    def n_clients(self) -> int:
        return len(self.positive_fractions)

    def fraction_matrix(self) -> np.ndarray:
        if self.per_label_fractions is not None:
            return np.asarray(self.per_label_fractions, dtype=np.float64)
        p = np.asarray(self.positive_fractions, dtype=np.float64)
        if self.label_values != (0, 1):
            raise FractionError("binary fractions need label_values == (0, 1)")
        return np.column_stack([1.0 - p, p])

    def level_kl(self) -> float:
        """KL divergence of the normalized positive profile from the uniform profile."""
        p = np.asarray(self.positive_fractions, dtype=np.float64)
        uniform = np.full(p.shape, 1.0 / p.size)
        return kl_divergence(p / p.sum(), uniform)

    @classmethod
    def from_level(cls, name: str, n_clients: int = 5) -> "SkewSpec":
        """Build one of the named distributions.

        ``iid`` marks the replicated protocol (every client holds the full
        split, see :func:`replicate_partition`); ``uniform`` splits each label
        pool evenly. Named levels whose per-label column sums exceed 1 are
        rescaled so the pool is shared in proportion to the listed fractions.
        """
        if name == "iid":
            return cls((1.0,) * n_clients, level_name="iid")
        if name == "uniform":
            share = 1.0 / n_clients
            return cls((share,) * n_clients, per_label_fractions=((share, share),) * n_clients,
                       level_name="uniform")
        if name not in NAMED_LEVELS:
            raise FractionError(f"unknown skew level {name!r}")
        positives = NAMED_LEVELS[name]
        if n_clients != len(positives):
            raise FractionError(f"{name} is defined for {len(positives)} clients, not {n_clients}")
        p = np.asarray(positives)
        matrix = np.column_stack([1.0 - p, p])
        sums = matrix.sum(axis=0)
        matrix = np.where(sums > 1.0, matrix / np.maximum(sums, 1.0), matrix)
        return cls(positives, per_label_fractions=tuple(map(tuple, matrix)), level_name=name)

    @classmethod
    def from_json(cls, path: str | Path) -> "SkewSpec":
        path = Path(path)
        if not path.exists():
            raise DatasetNotFoundError(f"skew spec file {path} does not exist")
        try:
            payload = json.loads(path.read_text(encoding="utf-8"))
            return cls(
                positive_fractions=tuple(payload["positive_fractions"]),
                per_label_fractions=payload.get("per_label_fractions"),
                level_name=payload.get("level_name", path.stem),
                label_values=tuple(payload.get("label_values", (0, 1))),
            )
        except FractionError:
            raise
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise FractionError(f"{path}: malformed skew spec ({type(exc).__name__}: {exc})") from exc

    def to_dict(self) -> dict:
        return {
            "positive_fractions": list(self.positive_fractions),
            "per_label_fractions": (None if self.per_label_fractions is None
                                    else [list(r) for r in self.per_label_fractions]),
            "level_name": self.level_name,
            "label_values": list(self.label_values),
        }


def _normalize(features: np.ndarray) -> np.ndarray:
    # Constant columns map to 0.
    return MinMaxScaler().fit_transform(features)


def load_csv_dataset(path: str | Path, label_column: str | int, *,
                     drop_columns: Sequence[str] = (),
                     label_map: Mapping[str, int] | None = None,
                     name: str | None = None) -> Dataset:
    """Read a headed, comma-separated UTF-8 file into a min-max normalized Dataset."""
    path = Path(path)
    if not path.is_file():
        raise DatasetNotFoundError(f"dataset file {path} does not exist")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError as exc:
        raise EmptyDatasetError(f"{path}: file is empty") from exc
    except (pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise DatasetParseError(f"{path}: {exc}") from exc
    if frame.empty:
        raise EmptyDatasetError(f"{path}: no data rows")

    if isinstance(label_column, int):
        if not 0 <= label_column < frame.shape[1]:
            raise DatasetParseError(f"{path}: label column index {label_column} out of range")
        label_column = frame.columns[label_column]
    if label_column not in frame.columns:
        raise DatasetParseError(f"{path}: no column named {label_column!r}", column=str(label_column))
    missing = [c for c in drop_columns if c not in frame.columns]
    if missing:
        raise DatasetParseError(f"{path}: cannot drop missing columns {missing}")

    raw_labels = frame[label_column].str.strip()
    features = frame.drop(columns=[label_column, *drop_columns])
    if features.shape[1] == 0:
        raise DatasetParseError(f"{path}: no feature columns")

    columns = []
    for column in features.columns:
        parsed = pd.to_numeric(features[column].str.strip(), errors="coerce")
        bad = parsed.isna() | ~np.isfinite(parsed.to_numpy(dtype=np.float64, na_value=np.nan))
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            raise DatasetParseError(
                f"{path}: row {row}, column {column!r}: cannot parse "
                f"{features[column].iloc[row]!r} as a real number",
                row=row, column=str(column),
            )
        columns.append(parsed.to_numpy(dtype=np.float64))

    if label_map is not None:
        mapped = raw_labels.map(label_map)
    else:
        mapped = pd.to_numeric(raw_labels, errors="coerce")
    bad = mapped.isna().to_numpy() | (mapped.to_numpy(dtype=np.float64, na_value=np.nan) % 1 != 0)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise DatasetParseError(
            f"{path}: row {row}, column {label_column!r}: label {raw_labels.iloc[row]!r} "
            "is not an integer",
            row=row, column=str(label_column),
        )

    matrix = np.column_stack(columns)
    dataset = Dataset(_normalize(matrix), mapped.to_numpy(dtype=np.float64).astype(np.int64),
                      name=name or path.stem)
    logger.info("load: %s has %d rows, %d features, labels %s",
                dataset.name, dataset.n_rows, dataset.n_features, dataset.label_histogram())
    return dataset


def load_breast_cancer_dataset() -> Dataset:
    """The Breast Cancer Wisconsin (Diagnostic) data bundled with scikit-learn.

    Relabelled so malignant is the positive class (1): 212 positive, 357 negative.
    """
    bunch = load_breast_cancer()
    labels = 1 - bunch.target
    return Dataset(_normalize(bunch.data), labels, name="wdbc")


def split_dataset(d: Dataset, fractions: Sequence[float] = DEFAULT_SPLIT,
                  seed: int = 0) -> tuple[Dataset, Dataset, Dataset]:
    """Shuffle and cut into (train, validation, test).

    Validation and test sizes are floored; the remainder goes to train.
    """
    if len(fractions) != 3:
        raise FractionError(f"expected (train, val, test) fractions, got {fractions}")
    if any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise FractionError(f"split fractions {tuple(fractions)} must be nonnegative and sum to 1")
    if d.n_rows == 0:
        raise EmptyDatasetError(f"{d.name}: cannot split an empty dataset")

    n = d.n_rows
    n_val = math.floor(fractions[1] * n + _FLOOR_EPS)
    n_test = math.floor(fractions[2] * n + _FLOOR_EPS)
    n_train = n - n_val - n_test
    order = np.random.default_rng(seed).permutation(n)
    train = d.subset(order[:n_train], f"{d.name}-train")
    validation = d.subset(order[n_train:n_train + n_val], f"{d.name}-val")
    test = d.subset(order[n_train + n_val:], f"{d.name}-test")
    logger.debug("split: %s -> %d/%d/%d", d.name, n_train, n_val, n_test)
    return train, validation, test


def partition_label_skew(d: Dataset, spec: SkewSpec, n_clients: int, seed: int = 0, *,
                         validation: Dataset | None = None) -> list[ClientDataset]:
    """Draw each client's rows label by label, without replacement.

    Client ``k`` receives floor(fraction[k, label] * count(label)) rows of each
    label; rows no client claims are discarded. ``validation`` is shared by all
    clients (``d`` itself when omitted).
    """
    if spec.n_clients != n_clients:
        raise FractionError(f"skew spec {spec.level_name!r} covers {spec.n_clients} clients, "
                            f"expected {n_clients}")
    matrix = spec.fraction_matrix()
    rng = np.random.default_rng(seed)
    picked: list[list[np.ndarray]] = [[] for _ in range(n_clients)]

    for column, label in enumerate(spec.label_values):
        pool = np.flatnonzero(d.labels == label)
        count = pool.size
        takes = [math.floor(matrix[k, column] * count + _FLOOR_EPS) for k in range(n_clients)]
        if sum(takes) > count:
            raise DemandExceedsSupplyError(label, sum(takes), count)
        shuffled = rng.permutation(pool)
        cursor = 0
        for k, take in enumerate(takes):
            picked[k].append(shuffled[cursor:cursor + take])
            cursor += take

    validation = d if validation is None else validation
    partition = []
    for k in range(n_clients):
        index = np.sort(np.concatenate(picked[k]))
        if index.size == 0:
            raise EmptyClientError(f"{spec.level_name}: client {k} receives no samples")
        train = d.subset(index, f"{d.name}-client{k}")
        partition.append(ClientDataset(k, train, validation))
        logger.debug("partition: client %d holds %s", k, train.label_histogram())
    return partition


def replicate_partition(d: Dataset, n_clients: int, *,
                        validation: Dataset | None = None) -> list[ClientDataset]:
    """Every client holds the complete dataset (the IID protocol)."""
    validation = d if validation is None else validation
    return [ClientDataset(k, d.subset(np.arange(d.n_rows), f"{d.name}-client{k}"), validation)
            for k in range(n_clients)]


def build_partition(train: Dataset, spec: SkewSpec, seed: int = 0, *,
                    validation: Dataset | None = None) -> list[ClientDataset]:
    if spec.level_name == "iid":
        return replicate_partition(train, spec.n_clients, validation=validation)
    return partition_label_skew(train, spec, spec.n_clients, seed, validation=validation)


def kl_divergence(p: Sequence[float], q: Sequence[float]) -> float:
    """Natural-log KL divergence D(p || q) with 0 * ln(0 / q) = 0."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise DistributionError(f"dimension mismatch: {p.shape} vs {q.shape}")
    if np.any(p < 0) or np.any(q < 0):
        raise DistributionError("probabilities must be nonnegative")
    if abs(p.sum() - 1.0) > 1e-9 or abs(q.sum() - 1.0) > 1e-9:
        raise DistributionError(f"vectors must sum to 1 (got {p.sum()}, {q.sum()})")
    if np.any((q == 0) & (p > 0)):
        raise DistributionError("support violation: p > 0 where q == 0")
    return max(0.0, float(rel_entr(p, q).sum()))


def niid_level(partition: Sequence[ClientDataset], reference: Dataset,
               positive_label: int = POSITIVE_LABEL) -> float:
    """KL divergence of the per-client positive share profile from the uniform profile."""
    if not partition:
        raise EmptyClientError("partition is empty")
    reference_labels = set(reference.label_histogram())
    shares = []
    for client in partition:
        if client.train.n_rows == 0:
            raise EmptyClientError(f"client {client.client_id} holds no samples")
        unknown = set(client.train.label_histogram()) - reference_labels
        if unknown:
            raise DataError(f"client {client.client_id} has labels {sorted(unknown)} "
                            "absent from the reference")
        shares.append(np.count_nonzero(client.train.labels == positive_label))
    total_positive = np.count_nonzero(reference.labels == positive_label)
    if total_positive == 0:
        raise DistributionError(f"reference has no rows with label {positive_label}")
    profile = np.asarray(shares, dtype=np.float64) / total_positive
    if profile.sum() == 0:
        raise DistributionError("no client holds the positive label")
    uniform = np.full(profile.shape, 1.0 / profile.size)
    return kl_divergence(profile / profile.sum(), uniform)


def partition_manifest(partition: Sequence[ClientDataset]) -> list[dict]:
    return [
        {
            "client_id": client.client_id,
            "row_ids": client.train.row_ids.tolist(),
            "label_histogram": {str(k): v for k, v in client.train.label_histogram().items()},
        }
        for client in partition
    ]
