"""Deployment engine: the six training strategies as deterministic event schedules.

A schedule is a totally ordered list of :class:`ScheduleEvent`. Executing it
moves parameter vectors between clients exactly as the events say:

    continuous_linear   train(0) -> forward(1) -> train(1) -> ... -> train(n-1)
    continuous_ring     the linear chain repeated, last client forwarding to 0
    aggregate_linear    from client 2 on, the two most recent parameter sets are
                        combined (sample-weighted) before training
    aggregate_ring      aggregate_linear repeated with wraparound
    aggregate_star      broadcast -> everyone trains -> center FedAvg, per round
    aggregate_mesh      everyone trains -> everyone broadcasts -> everyone FedAvg
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence, Union

import numpy as np
import pandas as pd

from src.data import ClientDataset, Dataset
from src.errors import ConfigError, DimensionMismatchError, InfeasibleBudgetError
from src.metrics import (DEFAULT_FLAT_TOL, DEFAULT_WINDOW, NC, TrainingTrace, accuracy,
                         detect_convergence, f1_binary)
from src.models import ModelSpec, ParamVector, predict, train_local
from src.topology import Strategy, TopologyGraph, TopologyKind, build_topology

logger = logging.getLogger(__name__)

# --- CONFIGURATION ---
DEFAULT_ROUNDS = {"linear": 1, "ring": 2, "star": 5, "mesh": 5}
CHAIN_NORMALIZATIONS = ("pairwise", "cumulative")


class DeploymentKind(str, Enum):
    CONTINUOUS_LINEAR = "continuous_linear"
    CONTINUOUS_RING = "continuous_ring"
    AGGREGATE_LINEAR = "aggregate_linear"
    AGGREGATE_RING = "aggregate_ring"
    AGGREGATE_STAR = "aggregate_star"
    AGGREGATE_MESH = "aggregate_mesh"

    @property
    def strategy(self) -> Strategy:
        return Strategy(self.value.split("_")[0])

    @property
    def topology(self) -> TopologyKind:
        return TopologyKind(self.value.split("_")[1])

    @property
    def is_sequential(self) -> bool:
        return self.topology in (TopologyKind.LINEAR, TopologyKind.RING)


@dataclass(frozen=True)
class DeploymentConfig:
    kind: DeploymentKind
    n_clients: int
    total_epochs: int
    model: ModelSpec
    n_rounds: int | None = None
    seed: int = 0
    center: int = 0
    chain_normalization: str = "pairwise"
    workers: int = 1

    def __post_init__(self):
        kind = DeploymentKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if self.n_clients < 1:
            raise ConfigError(f"n_clients must be >= 1, got {self.n_clients}")
        if self.total_epochs < 1:
            raise ConfigError(f"total_epochs must be >= 1, got {self.total_epochs}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        if self.chain_normalization not in CHAIN_NORMALIZATIONS:
            raise ConfigError(f"chain_normalization must be one of {CHAIN_NORMALIZATIONS}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if kind.topology is TopologyKind.LINEAR:
            rounds = 1
        elif self.n_rounds is None:
            rounds = DEFAULT_ROUNDS[kind.topology.value]
        else:
            rounds = self.n_rounds
        if rounds < 1:
            raise ConfigError(f"n_rounds must be >= 1, got {rounds}")
        object.__setattr__(self, "n_rounds", rounds)

    @property
    def epochs_per_event(self) -> int:
        return epoch_budget(self.kind, self.total_epochs, self.n_clients, self.n_rounds)

    def topology(self) -> TopologyGraph:
        return build_topology(self.kind.topology, self.n_clients,
                              center=self.center if self.kind.topology is TopologyKind.STAR else None,
                              strategy=self.kind.strategy)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "n_clients": self.n_clients,
            "total_epochs": self.total_epochs,
            "n_rounds": self.n_rounds,
            "model": self.model.to_dict(),
            "seed": self.seed,
            "center": self.center,
            "chain_normalization": self.chain_normalization,
        }


# --- Schedule events ---

@dataclass(frozen=True)
class Train:
    epochs: int


@dataclass(frozen=True)
class Aggregate:
    sources: tuple[int, ...]
    weights: tuple[float, ...]
    rule: str  # "chain" or "fedavg"
    cumulative: int = 0


@dataclass(frozen=True)
class Broadcast:
    targets: tuple[int, ...]


@dataclass(frozen=True)
class Forward:
    target: int
    # Parameter sets received earlier and passed on with the actor's own.
    relay: tuple[int, ...] = ()


Action = Union[Train, Aggregate, Broadcast, Forward]


@dataclass(frozen=True)
class ScheduleEvent:
    step: int
    actor: int
    round: int
    action: Action


def epoch_budget(kind: DeploymentKind | str, total: int, n_clients: int, n_rounds: int) -> int:
    """Epochs per train event so that every client gets the same share of ``total``."""
    kind = DeploymentKind(kind)
    if min(total, n_clients, n_rounds) < 1:
        raise ConfigError("epoch budget inputs must all be >= 1")
    if kind.topology is TopologyKind.LINEAR:
        epochs = total // n_clients
    elif kind.topology is TopologyKind.RING:
        epochs = total // (n_clients * n_rounds)
    else:
        epochs = total // n_rounds
    if epochs == 0:
        raise InfeasibleBudgetError(
            f"{kind.value}: {total} epochs over {n_clients} clients and {n_rounds} rounds "
            "leaves 0 epochs per client"
        )
    return epochs


def event_seed(seed: int, round_index: int, client: int) -> int:
    """Per-event training seed; independent of execution order."""
    return int(np.random.SeedSequence([seed, round_index, client]).generate_state(1)[0])


class _Steps:
    def __init__(self):
        self.events: list[ScheduleEvent] = []

    def add(self, actor: int, round_index: int, action: Action) -> None:
        self.events.append(ScheduleEvent(len(self.events), actor, round_index, action))


def _chain_schedule(config: DeploymentConfig, counts: Sequence[int], epochs: int) -> list[ScheduleEvent]:
    n = config.n_clients
    aggregate = config.kind.strategy is Strategy.AGGREGATE
    graph = config.topology()
    steps = _Steps()
    history: list[int] = []  # clients in training order
    cumulative = 0
    for r in range(config.n_rounds):
        for k in range(n):
            if aggregate and len(history) >= 2:
                prev, curr = history[-2], history[-1]
                if config.chain_normalization == "pairwise":
                    denominator = counts[prev] + counts[curr]
                else:
                    denominator = cumulative
                steps.add(k, r, Aggregate((prev, curr),
                                          (counts[prev] / denominator, counts[curr] / denominator),
                                          "chain", cumulative))
            steps.add(k, r, Train(epochs))
            history.append(k)
            cumulative += counts[k]
            target = graph.successor(k)
            last = r == config.n_rounds - 1 and k == n - 1
            if not last and target is not None and n > 1:
                relay = (history[-2],) if aggregate and len(history) >= 2 else ()
                steps.add(k, r, Forward(target, relay))
    return steps.events


def _concurrent_schedule(config: DeploymentConfig, counts: Sequence[int], epochs: int) -> list[ScheduleEvent]:
    n = config.n_clients
    everyone = tuple(range(n))
    total = sum(counts)
    weights = tuple(c / total for c in counts)
    steps = _Steps()
    for r in range(config.n_rounds):
        if config.kind.topology is TopologyKind.STAR:
            center = config.center
            steps.add(center, r, Broadcast(tuple(k for k in everyone if k != center)))
            for k in everyone:
                steps.add(k, r, Train(epochs))
            for k in everyone:
                if k != center:
                    steps.add(k, r, Forward(center))
            steps.add(center, r, Aggregate(everyone, weights, "fedavg"))
        else:
            for k in everyone:
                steps.add(k, r, Train(epochs))
            for k in everyone:
                steps.add(k, r, Broadcast(tuple(j for j in everyone if j != k)))
            for k in everyone:
                steps.add(k, r, Aggregate(everyone, weights, "fedavg"))
    return steps.events


def build_schedule(config: DeploymentConfig,
                   sample_counts: Sequence[int] | None = None) -> list[ScheduleEvent]:
    """The full event list; aggregation weights use ``sample_counts`` (equal when omitted)."""
    counts = [1] * config.n_clients if sample_counts is None else list(sample_counts)
    if len(counts) != config.n_clients or min(counts) < 1:
        raise ConfigError(f"need {config.n_clients} positive sample counts, got {counts}")
    config.topology()  # validates n and center for the kind
    epochs = config.epochs_per_event
    if config.kind.is_sequential:
        events = _chain_schedule(config, counts, epochs)
    else:
        events = _concurrent_schedule(config, counts, epochs)
    logger.debug("schedule: %s has %d events, %d epochs per train",
                 config.kind.value, len(events), epochs)
    return events


def chain_aggregate(w_prev: ParamVector, w_curr: ParamVector, s_prev: int, s_curr: int,
                    cumulative: int, normalization: str = "pairwise") -> ParamVector:
    """Sample-weighted combination of two consecutive parameter sets.

    ``pairwise`` divides by s_prev + s_curr; ``cumulative`` divides by the
    running sample total, so its weights sum to less than 1 once more than two
    clients have trained.
    """
    if w_prev.dim != w_curr.dim:
        raise DimensionMismatchError(f"cannot combine dimensions {w_prev.dim} and {w_curr.dim}")
    if s_prev < 1 or s_curr < 1:
        raise ConfigError(f"sample counts must be >= 1, got {s_prev}, {s_curr}")
    if cumulative < s_prev + s_curr:
        raise ConfigError(f"cumulative count {cumulative} below {s_prev} + {s_curr}")
    denominator = s_prev + s_curr if normalization == "pairwise" else cumulative
    theta = (s_prev * w_prev.as_array() + s_curr * w_curr.as_array()) / denominator
    return ParamVector.from_array(theta)


def fedavg_aggregate(params: Sequence[ParamVector], counts: Sequence[int]) -> ParamVector:
    """sum_k (n_k / sum_j n_j) * w_k, accumulated in list order."""
    if not params:
        raise ConfigError("cannot aggregate an empty parameter list")
    if len(params) != len(counts):
        raise DimensionMismatchError(f"{len(params)} parameter sets but {len(counts)} counts")
    dims = {p.dim for p in params}
    if len(dims) != 1:
        raise DimensionMismatchError(f"parameter dimensions disagree: {sorted(dims)}")
    if min(counts) < 1:
        raise ConfigError(f"sample counts must be positive, got {list(counts)}")
    total = float(sum(counts))
    acc = np.zeros(params[0].dim + 1)
    for p, c in zip(params, counts):
        acc += (c / total) * p.as_array()
    return ParamVector.from_array(acc)


@dataclass
class MetricsSnapshot:
    client_f1: dict[int, float]
    client_accuracy: dict[int, float]
    round_f1: list[float]
    round_accuracy: list[float]
    f1: float
    accuracy: float

    def to_dict(self) -> dict:
        return {
            "client_f1": {str(k): v for k, v in self.client_f1.items()},
            "client_accuracy": {str(k): v for k, v in self.client_accuracy.items()},
            "round_f1": self.round_f1,
            "round_accuracy": self.round_accuracy,
            "f1": self.f1,
            "accuracy": self.accuracy,
        }


@dataclass
class RunResult:
    config: DeploymentConfig
    traces: dict[int, TrainingTrace]
    final_params: dict[int, ParamVector]
    global_params: ParamVector | None
    round_params: list[ParamVector]
    # FedAvg results keyed by (round, aggregating client).
    aggregates: dict[tuple[int, int], ParamVector]
    convergence: dict[int, int | None]
    metrics: MetricsSnapshot | None
    events: list[ScheduleEvent] = field(repr=False, default_factory=list)

    @property
    def deployment(self) -> str:
        return self.config.kind.value

    @property
    def trained_epochs(self) -> int:
        return sum(e.action.epochs for e in self.events if isinstance(e.action, Train))

    def trace_frame(self) -> pd.DataFrame:
        trace = TrainingTrace.concat(self.traces[k] for k in sorted(self.traces))
        return trace.to_frame(self.deployment)

    def convergence_row(self) -> dict[str, int | str]:
        return {f"client_{k}": (NC if self.convergence[k] is None else self.convergence[k])
                for k in sorted(self.convergence)}

    def to_dict(self) -> dict:
        return {
            "deployment": self.deployment,
            "config": self.config.to_dict(),
            "final_params": {str(k): p.to_dict() for k, p in sorted(self.final_params.items())},
            "global_params": None if self.global_params is None else self.global_params.to_dict(),
            "round_params": [p.to_dict() for p in self.round_params],
            "convergence": {str(k): (NC if v is None else v) for k, v in sorted(self.convergence.items())},
            "metrics": None if self.metrics is None else self.metrics.to_dict(),
            "trained_epochs": self.trained_epochs,
        }


class _Executor:
    """Walks a schedule, holding each client's parameters and inbox."""

    def __init__(self, config: DeploymentConfig, partition: Sequence[ClientDataset]):
        self.config = config
        self.partition = partition
        dim = partition[0].train.n_features
        self.held: dict[int, ParamVector | None] = {k: None for k in range(config.n_clients)}
        if config.kind.is_sequential:
            self.held[0] = ParamVector.zeros(dim)
        else:
            for k in self.held:
                self.held[k] = ParamVector.zeros(dim)
        self.latest: dict[int, ParamVector] = {}
        self.inbox: dict[int, dict[int, ParamVector]] = {k: {} for k in range(config.n_clients)}
        self.epochs_done = {k: 0 for k in range(config.n_clients)}
        self.traces: dict[int, list[TrainingTrace]] = {k: [] for k in range(config.n_clients)}
        self.round_params: list[ParamVector] = []
        self.aggregates: dict[tuple[int, int], ParamVector] = {}

    def _train_one(self, event: ScheduleEvent) -> tuple[ParamVector, TrainingTrace]:
        k = event.actor
        start = self.held[k]
        if start is None:
            raise ConfigError(f"client {k} was scheduled to train before receiving parameters")
        return train_local(self.config.model, start, self.partition[k], event.action.epochs,
                           event_seed(self.config.seed, event.round, k),
                           round_index=event.round, epoch_offset=self.epochs_done[k])

    def _record(self, event: ScheduleEvent, result: tuple[ParamVector, TrainingTrace]) -> None:
        k = event.actor
        params, trace = result
        self.latest[k] = params
        self.held[k] = params
        self.traces[k].append(trace)
        self.epochs_done[k] += event.action.epochs
        logger.debug("engine: step %d client %d trained %d epochs (round %d)",
                     event.step, k, event.action.epochs, event.round)

    def _train_batch(self, batch: list[ScheduleEvent]) -> None:
        if self.config.workers > 1 and len(batch) > 1:
            with ThreadPoolExecutor(max_workers=self.config.workers) as pool:
                results = list(pool.map(self._train_one, batch))
        else:
            results = [self._train_one(e) for e in batch]
        for event, result in zip(batch, results):
            self._record(event, result)

    def _source(self, actor: int, source: int) -> ParamVector:
        if source == actor:
            return self.latest[actor]
        return self.inbox[actor][source]

    def _apply(self, event: ScheduleEvent) -> None:
        action, k = event.action, event.actor
        if isinstance(action, Forward):
            self.inbox[action.target][k] = self.latest[k]
            for r in action.relay:
                self.inbox[action.target][r] = self._source(k, r)
            if self.config.kind.is_sequential:
                self.held[action.target] = self.latest[k]
        elif isinstance(action, Broadcast):
            payload = self.held[k] if self.config.kind.topology is TopologyKind.STAR else self.latest[k]
            for target in action.targets:
                if self.config.kind.topology is TopologyKind.STAR:
                    self.held[target] = payload
                else:
                    self.inbox[target][k] = payload
        elif isinstance(action, Aggregate):
            counts = [self.partition[s].sample_count for s in action.sources]
            params = [self._source(k, s) for s in action.sources]
            if action.rule == "chain":
                merged = chain_aggregate(params[0], params[1], counts[0], counts[1],
                                         action.cumulative, self.config.chain_normalization)
            else:
                merged = fedavg_aggregate(params, counts)
                self.aggregates[(event.round, k)] = merged
                if self.config.kind.topology is TopologyKind.STAR or k == 0:
                    self.round_params.append(merged)
            self.held[k] = merged
            logger.debug("engine: step %d client %d aggregated %s", event.step, k, action.sources)

    def run(self, events: Sequence[ScheduleEvent]) -> None:
        pending: list[ScheduleEvent] = []
        for event in events:
            if isinstance(event.action, Train):
                pending.append(event)
                continue
            if pending:
                self._train_batch(pending)
                pending = []
            self._apply(event)
        if pending:
            self._train_batch(pending)


def _score(params: ParamVector, test: Dataset) -> tuple[float, float]:
    predictions = predict(params, test.features)
    return f1_binary(predictions, test.labels), accuracy(predictions, test.labels)


def _snapshot(kind: DeploymentKind, final_params: dict[int, ParamVector],
              round_params: list[ParamVector], test: Dataset) -> MetricsSnapshot:
    client_scores = {k: _score(p, test) for k, p in sorted(final_params.items())}
    round_scores = [_score(p, test) for p in round_params]
    if kind.is_sequential:
        f1 = float(np.mean([s[0] for s in client_scores.values()]))
        acc = float(np.mean([s[1] for s in client_scores.values()]))
    else:
        f1 = float(np.mean([s[0] for s in round_scores]))
        acc = float(np.mean([s[1] for s in round_scores]))
    return MetricsSnapshot(
        client_f1={k: s[0] for k, s in client_scores.items()},
        client_accuracy={k: s[1] for k, s in client_scores.items()},
        round_f1=[s[0] for s in round_scores],
        round_accuracy=[s[1] for s in round_scores],
        f1=f1,
        accuracy=acc,
    )


def run_deployment(config: DeploymentConfig, partition: Sequence[ClientDataset], *,
                   test: Dataset | None = None, window: int = DEFAULT_WINDOW,
                   flat_tol: float = DEFAULT_FLAT_TOL) -> RunResult:
    """Execute the deployment's schedule over ``partition``.

    Linear/ring deployments score the mean test F1 of the clients' final
    parameters; star/mesh score the mean over rounds of the aggregate's F1.
    """
    if len(partition) != config.n_clients:
        raise ConfigError(f"{config.kind.value}: partition has {len(partition)} clients, "
                          f"config expects {config.n_clients}")
    dims = {c.train.n_features for c in partition}
    if len(dims) != 1:
        raise DimensionMismatchError(f"clients disagree on feature count: {sorted(dims)}")
    for index, client in enumerate(partition):
        if client.client_id != index:
            raise ConfigError(f"partition position {index} holds client {client.client_id}")

    events = build_schedule(config, [c.sample_count for c in partition])
    logger.info("engine: running %s over %d clients, %d rounds, %d epochs per train",
                config.kind.value, config.n_clients, config.n_rounds, config.epochs_per_event)
    executor = _Executor(config, partition)
    executor.run(events)

    traces = {k: TrainingTrace.concat(parts) for k, parts in executor.traces.items()}
    convergence = {k: detect_convergence(trace, window, flat_tol) for k, trace in traces.items()}
    global_params = executor.round_params[-1] if executor.round_params else None
    metrics = None
    if test is not None:
        metrics = _snapshot(config.kind, executor.latest, executor.round_params, test)
    n_nc = sum(v is None for v in convergence.values())
    logger.info("engine: %s finished, %d/%d clients converged%s", config.kind.value,
                config.n_clients - n_nc, config.n_clients,
                "" if metrics is None else f", F1 {metrics.f1:.3f}")
    return RunResult(config, traces, dict(executor.latest), global_params,
                     list(executor.round_params), dict(executor.aggregates), convergence, metrics,
                     events)
