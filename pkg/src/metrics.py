"""Loss traces, convergence detection and classification metrics."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np
import pandas as pd
from sklearn.metrics import accuracy_score, f1_score, precision_recall_fscore_support

from src.errors import ConfigError, MetricError

# --- CONFIGURATION ---
DEFAULT_WINDOW = 50
DEFAULT_FLAT_TOL = 0.04
NC = "NC"

TRACE_COLUMNS = ["deployment", "round", "client", "epoch", "train_loss", "val_loss"]


class TraceEntry(NamedTuple):
    global_epoch: int
    train_loss: float
    val_loss: float
    client: int
    round: int


@dataclass(frozen=True)
class TrainingTrace:
    """Per-epoch losses. ``global_epoch`` counts a client's epochs across rounds."""
    entries: tuple[TraceEntry, ...] = ()

    def __post_init__(self):
        entries = tuple(TraceEntry(*e) for e in self.entries)
        last_epoch: dict[int, int] = {}
        for e in entries:
            if not (np.isfinite(e.train_loss) and np.isfinite(e.val_loss)) \
                    or e.train_loss < 0 or e.val_loss < 0:
                raise MetricError(f"client {e.client} epoch {e.global_epoch}: "
                                  f"losses must be finite and nonnegative")
            if e.client in last_epoch and e.global_epoch <= last_epoch[e.client]:
                raise MetricError(f"client {e.client}: epoch {e.global_epoch} does not "
                                  f"follow {last_epoch[e.client]}")
            last_epoch[e.client] = e.global_epoch
        object.__setattr__(self, "entries", entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __add__(self, other: "TrainingTrace") -> "TrainingTrace":
        return TrainingTrace(self.entries + other.entries)

    @classmethod
    def concat(cls, traces: Iterable["TrainingTrace"]) -> "TrainingTrace":
        return cls(tuple(e for t in traces for e in t.entries))

    @property
    def epochs(self) -> np.ndarray:
        return np.array([e.global_epoch for e in self.entries], dtype=np.int64)

    @property
    def train_losses(self) -> np.ndarray:
        return np.array([e.train_loss for e in self.entries], dtype=np.float64)

    @property
    def val_losses(self) -> np.ndarray:
        return np.array([e.val_loss for e in self.entries], dtype=np.float64)

    def to_frame(self, deployment: str) -> pd.DataFrame:
        return pd.DataFrame(
            [(deployment, e.round, e.client, e.global_epoch, e.train_loss, e.val_loss)
             for e in self.entries],
            columns=TRACE_COLUMNS,
        )


def detect_convergence(trace: TrainingTrace, window: int = DEFAULT_WINDOW,
                       flat_tol: float = DEFAULT_FLAT_TOL) -> int | None:
    """First epoch at which the loss curves count as converged, or None ("NC").

    Converged at entry ``i`` when the last ``window`` validation losses span at
    most ``flat_tol``, or when train - val changes sign (or hits exactly zero)
    at ``i``. Both rules only look at entries whose trailing window lies inside
    one training segment (same client and round).
    """
    if window < 2:
        raise ConfigError(f"window must be >= 2, got {window}")
    if flat_tol <= 0:
        raise ConfigError(f"flat_tol must be > 0, got {flat_tol}")
    if len(trace) < window:
        return None

    epochs = trace.epochs
    val = trace.val_losses
    gap = trace.train_losses - val
    start = 0
    for i, entry in enumerate(trace):
        if i > 0 and (entry.client, entry.round) != (trace.entries[i - 1].client,
                                                     trace.entries[i - 1].round):
            start = i
        if i - start < window - 1:
            continue
        if gap[i] == 0.0 or gap[i - 1] * gap[i] < 0.0:
            return int(epochs[i])
        recent = val[i - window + 1:i + 1]
        if recent.max() - recent.min() <= flat_tol:
            return int(epochs[i])
    return None


def _check_labels(predictions: Sequence[int], truth: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    predictions = np.asarray(predictions)
    truth = np.asarray(truth)
    if predictions.shape != truth.shape:
        raise MetricError(f"length mismatch: {predictions.shape} predictions, {truth.shape} truth")
    if predictions.size == 0:
        raise MetricError("cannot score empty label lists")
    return predictions.astype(np.int64), truth.astype(np.int64)


def f1_binary(predictions: Sequence[int], truth: Sequence[int]) -> float:
    """F1 of the positive class (1); 0 when precision + recall is 0."""
    predictions, truth = _check_labels(predictions, truth)
    if not np.all(np.isin(predictions, (0, 1))) or not np.all(np.isin(truth, (0, 1))):
        raise MetricError("binary F1 needs labels in {0, 1}")
    return float(f1_score(truth, predictions, pos_label=1, average="binary", zero_division=0))


def f1_macro(predictions: Sequence[int], truth: Sequence[int], n_classes: int) -> float:
    """Unweighted mean of one-vs-rest F1.

    Classes absent from both predictions and truth are skipped; a class that is
    predicted but never true scores 0.
    """
    predictions, truth = _check_labels(predictions, truth)
    for name, values in (("prediction", predictions), ("truth", truth)):
        if values.min() < 0 or values.max() >= n_classes:
            raise MetricError(f"{name} label outside [0, {n_classes})")
    labels = list(range(n_classes))
    _, _, f1, support = precision_recall_fscore_support(
        truth, predictions, labels=labels, average=None, zero_division=0)
    predicted = np.bincount(predictions, minlength=n_classes)
    present = (support > 0) | (predicted > 0)
    return float(np.mean(f1[present]))


def accuracy(predictions: Sequence[int], truth: Sequence[int]) -> float:
    predictions, truth = _check_labels(predictions, truth)
    return float(accuracy_score(truth, predictions))
