import numpy as np
import pytest

from src.engine import (Aggregate, Broadcast, DeploymentConfig, DeploymentKind, Forward, Train,
                        build_schedule, chain_aggregate, epoch_budget, event_seed, fedavg_aggregate,
                        run_deployment)
from src.errors import ConfigError, DimensionMismatchError, InfeasibleBudgetError, TopologyError
from src.models import ModelKind, ModelSpec, ParamVector, train_local
from tests.conftest import make_dataset, make_partition

SPEC = ModelSpec(ModelKind.LOGISTIC, l2_strength=0.01, learning_rate=0.1)


def _config(kind, n=3, total=6, rounds=None, **kwargs):
    return DeploymentConfig(kind, n, total, SPEC, n_rounds=rounds, **kwargs)


def _scalar(value):
    return ParamVector(np.array([value]), value)


# --- epoch budget ---

@pytest.mark.parametrize("kind, total, n, rounds, expected", [
    ("continuous_linear", 500, 5, 1, 100),
    ("continuous_ring", 500, 5, 2, 50),
    ("aggregate_star", 500, 5, 5, 100),
    ("aggregate_mesh", 1000, 5, 5, 200),
    ("aggregate_ring", 7, 3, 2, 1),
])
def test_epoch_budget(kind, total, n, rounds, expected):
    assert epoch_budget(kind, total, n, rounds) == expected


def test_infeasible_budget():
    with pytest.raises(InfeasibleBudgetError):
        epoch_budget("continuous_linear", 4, 5, 1)


def test_linear_always_runs_one_round():
    assert _config("aggregate_linear", rounds=4).n_rounds == 1


def test_default_rounds():
    assert _config("continuous_ring", total=60).n_rounds == 2
    assert _config("aggregate_star", total=60).n_rounds == 5


@pytest.mark.parametrize("field, value", [("n_clients", 0), ("total_epochs", 0), ("seed", -1),
                                          ("chain_normalization", "other"), ("workers", 0)])
def test_invalid_config(field, value):
    kwargs = {"kind": "aggregate_mesh", "n_clients": 3, "total_epochs": 6, "model": SPEC, field: value}
    with pytest.raises(ConfigError):
        DeploymentConfig(**kwargs)


# --- schedules ---

def test_star_schedule_counts():
    events = build_schedule(_config("aggregate_star", n=5, total=500, rounds=5))
    kinds = [type(e.action) for e in events]
    assert kinds.count(Broadcast) == 5
    assert kinds.count(Train) == 25
    assert kinds.count(Aggregate) == 5
    assert all(e.actor == 0 for e in events if isinstance(e.action, (Broadcast, Aggregate)))


def test_aggregate_linear_first_aggregation():
    events = build_schedule(_config("aggregate_linear", n=5, total=500))
    first = next(i for i, e in enumerate(events) if isinstance(e.action, Aggregate))
    assert events[first].actor == 2
    assert events[first].action.sources == (0, 1)
    assert isinstance(events[first + 1].action, Train) and events[first + 1].actor == 2


def test_continuous_linear_schedule_order():
    events = build_schedule(_config("continuous_linear", n=3, total=3))
    described = [(e.actor, type(e.action).__name__) for e in events]
    assert described == [(0, "Train"), (0, "Forward"), (1, "Train"), (1, "Forward"), (2, "Train")]


def test_ring_wraps_around():
    events = build_schedule(_config("continuous_ring", n=3, total=6, rounds=2))
    forwards = [(e.actor, e.action.target) for e in events if isinstance(e.action, Forward)]
    assert forwards == [(0, 1), (1, 2), (2, 0), (0, 1), (1, 2)]


def test_mesh_schedule_aggregates_everywhere():
    events = build_schedule(_config("aggregate_mesh", n=4, total=4, rounds=2))
    aggregates = [e for e in events if isinstance(e.action, Aggregate)]
    assert len(aggregates) == 8
    assert all(a.action.sources == (0, 1, 2, 3) for a in aggregates)


def test_schedule_steps_are_ordered():
    events = build_schedule(_config("aggregate_ring", n=4, total=8, rounds=2))
    assert [e.step for e in events] == list(range(len(events)))


def test_schedule_rejects_bad_topology():
    with pytest.raises(TopologyError):
        build_schedule(_config("continuous_ring", n=2, total=4))


def test_event_seed_depends_only_on_the_event():
    assert event_seed(3, 1, 2) == event_seed(3, 1, 2)
    assert len({event_seed(3, r, k) for r in range(3) for k in range(3)}) == 9


# --- aggregation rules ---

def test_chain_aggregate_examples():
    v = ParamVector(np.array([0.3, -0.2]), 0.1)
    assert chain_aggregate(v, v, 5, 5, 10) == v
    merged = chain_aggregate(_scalar(1.0), _scalar(2.0), 100, 300, 400)
    assert merged.weights[0] == pytest.approx(1.75) and merged.bias == pytest.approx(1.75)
    e1, e2 = ParamVector(np.array([1.0, 0.0]), 0.0), ParamVector(np.array([0.0, 1.0]), 0.0)
    np.testing.assert_allclose(chain_aggregate(e1, e2, 1, 1, 2).weights, [0.5, 0.5])


def test_chain_aggregate_cumulative_divides_by_running_total():
    merged = chain_aggregate(_scalar(1.0), _scalar(2.0), 1, 1, 4, normalization="cumulative")
    assert merged.weights[0] == pytest.approx(0.75)


def test_chain_aggregate_rejects_mismatch():
    with pytest.raises(DimensionMismatchError):
        chain_aggregate(ParamVector.zeros(2), ParamVector.zeros(3), 1, 1, 2)


def test_fedavg_examples():
    v = ParamVector(np.array([0.3, -0.2]), 0.1)
    assert fedavg_aggregate([v, v, v], [1, 2, 3]) == v
    assert fedavg_aggregate([_scalar(0.0), _scalar(4.0)], [1, 3]).weights[0] == pytest.approx(3.0)


def test_fedavg_permutation_and_contraction():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(2, 6))
        params = [ParamVector(rng.normal(size=3), float(rng.normal())) for _ in range(n)]
        counts = [int(c) for c in rng.integers(1, 100, size=n)]
        merged = fedavg_aggregate(params, counts).as_array()
        order = rng.permutation(n)
        permuted = fedavg_aggregate([params[i] for i in order], [counts[i] for i in order]).as_array()
        np.testing.assert_allclose(merged, permuted, rtol=0, atol=1e-15 * max(1.0, np.abs(merged).max()) * n)
        stacked = np.stack([p.as_array() for p in params])
        assert np.all(merged >= stacked.min(axis=0) - 1e-12)
        assert np.all(merged <= stacked.max(axis=0) + 1e-12)


def test_fedavg_rejects_bad_input():
    with pytest.raises(ConfigError):
        fedavg_aggregate([], [])
    with pytest.raises(DimensionMismatchError):
        fedavg_aggregate([ParamVector.zeros(2)], [1, 2])


# --- execution ---

def test_single_client_run_is_plain_local_training():
    partition = make_partition(1)
    result = run_deployment(_config("continuous_linear", n=1, total=8, seed=4), partition)
    params, trace = train_local(SPEC, ParamVector.zeros(3), partition[0], 8, event_seed(4, 0, 0))
    assert result.final_params[0] == params
    assert result.traces[0] == trace


def test_continuous_linear_hands_parameters_downstream():
    partition = make_partition(3)
    result = run_deployment(_config("continuous_linear", n=3, total=6, seed=1), partition)
    expected, _ = train_local(SPEC, result.final_params[0], partition[1], 2, event_seed(1, 0, 1))
    assert result.final_params[1] == expected


@pytest.mark.parametrize("normalization", ["pairwise", "cumulative"])
def test_aggregate_linear_starts_from_the_chain_combination(normalization):
    partition = make_partition(4)
    config = _config("aggregate_linear", n=4, total=8, seed=2, chain_normalization=normalization)
    result = run_deployment(config, partition)
    counts = [c.sample_count for c in partition]
    start = chain_aggregate(result.final_params[1], result.final_params[2], counts[1], counts[2],
                            sum(counts[:3]), normalization)
    expected, _ = train_local(SPEC, start, partition[3], 2, event_seed(2, 0, 3))
    assert result.final_params[3] == expected


def test_linear_deployments_agree_until_the_first_aggregation():
    rng = np.random.default_rng(12)
    for _ in range(20):
        n = int(rng.integers(2, 6))
        epochs = int(rng.integers(1, 4))
        seed = int(rng.integers(0, 1000))
        spec = ModelSpec(ModelKind(rng.choice([k.value for k in ModelKind])), 0.01, 0.05)
        partition = make_partition(n, seed=int(rng.integers(0, 1000)))
        runs = [run_deployment(DeploymentConfig(kind, n, n * epochs, spec, seed=seed), partition)
                for kind in ("continuous_linear", "aggregate_linear")]
        for k in (0, 1):
            assert runs[0].final_params[k] == runs[1].final_params[k]
            assert runs[0].traces[k] == runs[1].traces[k]


def test_ring_epochs_continue_across_rounds():
    result = run_deployment(_config("continuous_ring", n=3, total=12, rounds=2), make_partition(3))
    assert result.traces[0].epochs.tolist() == [0, 1, 2, 3]
    assert result.traces[0].entries[2].round == 1


@pytest.mark.parametrize("kind, per_client", [
    ("continuous_linear", 4), ("aggregate_linear", 4),
    ("continuous_ring", 4), ("aggregate_ring", 4),
    ("aggregate_star", 12), ("aggregate_mesh", 12),
])
def test_every_client_trains_the_same_budget(kind, per_client):
    result = run_deployment(_config(kind, n=3, total=12, rounds=2), make_partition(3))
    assert {k: len(t) for k, t in result.traces.items()} == {0: per_client, 1: per_client, 2: per_client}
    assert result.trained_epochs == 3 * per_client


@pytest.mark.parametrize("kind", list(DeploymentKind))
def test_runs_are_deterministic(kind):
    config = _config(kind, n=3, total=6, rounds=2, seed=9)
    first = run_deployment(config, make_partition(3))
    second = run_deployment(config, make_partition(3))
    assert first.final_params == second.final_params
    assert first.traces == second.traces
    assert first.round_params == second.round_params


def test_worker_pool_does_not_change_results():
    partition = make_partition(4)
    serial = run_deployment(_config("aggregate_mesh", n=4, total=6, rounds=2), partition)
    pooled = run_deployment(_config("aggregate_mesh", n=4, total=6, rounds=2, workers=4), partition)
    assert serial.final_params == pooled.final_params
    assert serial.aggregates == pooled.aggregates


def test_star_and_mesh_agree_bitwise():
    rng = np.random.default_rng(123)
    for _ in range(20):
        n = int(rng.integers(2, 6))
        rounds = int(rng.integers(1, 4))
        per_round = int(rng.integers(1, 4))
        seed = int(rng.integers(0, 1000))
        partition = make_partition(n, n_rows=int(rng.integers(6, 20)), seed=seed)
        star = run_deployment(_config("aggregate_star", n=n, total=rounds * per_round, rounds=rounds,
                                      seed=seed), partition)
        mesh = run_deployment(_config("aggregate_mesh", n=n, total=rounds * per_round, rounds=rounds,
                                      seed=seed), partition)
        assert len(star.round_params) == rounds
        for r, global_params in enumerate(star.round_params):
            for k in range(n):
                assert mesh.aggregates[(r, k)] == global_params


def test_fewer_rounds_are_a_prefix():
    partition = make_partition(3)
    long = run_deployment(_config("aggregate_star", total=9, rounds=3), partition)
    short = run_deployment(_config("aggregate_star", total=6, rounds=2), partition)
    assert long.round_params[:2] == short.round_params


def test_metrics_follow_the_deployment_family():
    partition = make_partition(3)
    test = make_dataset(20, 3, seed=77)
    star = run_deployment(_config("aggregate_star", total=6, rounds=3), partition, test=test)
    assert len(star.metrics.round_f1) == 3
    assert star.metrics.f1 == pytest.approx(np.mean(star.metrics.round_f1))
    line = run_deployment(_config("continuous_linear", total=6), partition, test=test)
    assert line.metrics.round_f1 == []
    assert line.metrics.f1 == pytest.approx(np.mean(list(line.metrics.client_f1.values())))
    assert 0.0 <= line.metrics.accuracy <= 1.0


def test_result_serializes():
    result = run_deployment(_config("aggregate_ring", total=6, rounds=2), make_partition(3))
    payload = result.to_dict()
    assert payload["deployment"] == "aggregate_ring"
    assert set(payload["final_params"]) == {"0", "1", "2"}
    assert list(result.convergence_row()) == ["client_0", "client_1", "client_2"]
    frame = result.trace_frame()
    assert set(frame["deployment"]) == {"aggregate_ring"}
    assert len(frame) == result.trained_epochs


def test_partition_size_must_match():
    with pytest.raises(ConfigError):
        run_deployment(_config("aggregate_mesh", n=4, total=4), make_partition(3))
