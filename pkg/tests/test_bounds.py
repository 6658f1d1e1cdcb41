import json
from dataclasses import replace

import numpy as np
import pytest

from src.bounds import (BoundInputs, bound_aggregate_chain, bound_continuous, bound_for,
                        bound_inputs_from, bound_star_mesh, merge_reports, star_mesh_b, verify_bound)
from src.engine import DeploymentConfig, DeploymentKind, run_deployment
from src.errors import ConfigError, MissingOptimumError
from src.models import ModelKind, ModelSpec, estimate_constants
from tests.conftest import make_partition


def test_continuous_without_step_is_half_l_times_distance():
    inputs = BoundInputs(smooth_L=3.0, mu=1.0, eta=0.0, sigma=2.0, init_dist_sq=0.7)
    assert bound_continuous(inputs) == pytest.approx(1.5 * 0.7)


def test_continuous_example():
    inputs = BoundInputs(smooth_L=2.0, mu=1.0, eta=0.1, init_dist_sq=1.0)
    assert bound_continuous(inputs) == pytest.approx(1.14)


def test_continuous_grows_with_z():
    base = dict(smooth_L=2.0, mu=1.0, eta=0.1, sigma=0.5, init_dist_sq=1.0)
    values = [bound_continuous(BoundInputs(z=z, **base)) for z in (0.0, 0.1, 0.5, 2.0)]
    assert all(a < b for a, b in zip(values, values[1:]))


def test_chain_example():
    inputs = BoundInputs(smooth_L=2.0, mu=1.0, eta=0.1, sigma=1.0, z=0.5, v_dist_sq=1.0)
    assert bound_aggregate_chain(inputs) == pytest.approx(1.25)


def test_chain_without_noise_or_gap():
    inputs = BoundInputs(smooth_L=2.0, mu=0.5, eta=0.2, v_dist_sq=3.0)
    assert bound_aggregate_chain(inputs) == pytest.approx(1.0 * (1 + 0.1 + 0.16) * 3.0)


def test_chain_and_continuous_agree_as_the_step_vanishes():
    inputs = BoundInputs(smooth_L=2.0, mu=1.0, eta=0.0, sigma=1.0, z=0.3,
                         init_dist_sq=1.5, v_dist_sq=1.5)
    assert bound_aggregate_chain(inputs) == pytest.approx(bound_continuous(inputs))


def test_star_example_with_explicit_kappa():
    # B = p^2 sigma^2 = 1
    inputs = BoundInputs(smooth_L=1.0, mu=1.0, eta=0.1, sigma=1.0, init_dist_sq=1.0,
                         rounds_T=9, kappa=2.0, gamma=1.0)
    assert star_mesh_b(inputs) == pytest.approx(1.0)
    assert bound_star_mesh(inputs) == pytest.approx(1.2)


def test_star_without_noise():
    inputs = BoundInputs(smooth_L=4.0, mu=1.0, eta=0.1, init_dist_sq=0.5, rounds_T=3)
    assert inputs.gamma == 32.0
    assert bound_star_mesh(inputs) == pytest.approx(2 * 4.0 / (32.0 + 3) * 2 * 4.0 * 0.5)


def test_star_decreases_with_rounds():
    base = dict(smooth_L=2.0, mu=0.5, eta=0.1, sigma=1.0, z=0.2, init_dist_sq=1.0,
                grad_bound_G=0.3, local_epochs_E=4, weights_p=(0.25, 0.75), gamma=16.0)
    values = [bound_star_mesh(BoundInputs(rounds_T=t, **base)) for t in (1, 2, 4, 8, 16)]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_per_client_noise_enters_b():
    inputs = BoundInputs(smooth_L=1.0, mu=1.0, eta=0.1, weights_p=(0.5, 0.5), sigma_k=(1.0, 3.0))
    assert star_mesh_b(inputs) == pytest.approx(0.25 * 1.0 + 0.25 * 9.0)


@pytest.mark.parametrize("bound", [bound_continuous, bound_aggregate_chain, bound_star_mesh])
def test_bounds_grow_with_sigma(bound):
    base = dict(smooth_L=2.0, mu=0.5, eta=0.1, z=0.2, init_dist_sq=1.0, v_dist_sq=1.0, rounds_T=3)
    values = [bound(BoundInputs(sigma=s, **base)) for s in (0.0, 0.5, 1.0, 3.0)]
    assert all(a < b for a, b in zip(values, values[1:]))


@pytest.mark.parametrize("bound", [bound_aggregate_chain, bound_star_mesh])
def test_aggregating_bounds_grow_with_z(bound):
    base = dict(smooth_L=2.0, mu=0.5, eta=0.1, sigma=1.0, init_dist_sq=1.0, v_dist_sq=1.0, rounds_T=3)
    values = [bound(BoundInputs(z=z, **base)) for z in (0.0, 0.1, 0.5, 2.0)]
    assert all(a < b for a, b in zip(values, values[1:]))


def test_bound_for_dispatches():
    inputs = BoundInputs(smooth_L=2.0, mu=1.0, eta=0.1, sigma=1.0, z=0.5, init_dist_sq=1.0, v_dist_sq=1.0)
    assert bound_for("continuous_ring", inputs) == bound_continuous(inputs)
    assert bound_for(DeploymentKind.AGGREGATE_LINEAR, inputs) == bound_aggregate_chain(inputs)
    assert bound_for("aggregate_mesh", inputs) == bound_star_mesh(inputs)


@pytest.mark.parametrize("kwargs", [
    dict(smooth_L=0.0, mu=1.0, eta=0.1),
    dict(smooth_L=1.0, mu=2.0, eta=0.1),
    dict(smooth_L=1.0, mu=1.0, eta=-0.1),
    dict(smooth_L=1.0, mu=1.0, eta=0.1, z=-1.0),
    dict(smooth_L=1.0, mu=1.0, eta=0.1, weights_p=(0.5, 0.4)),
    dict(smooth_L=1.0, mu=1.0, eta=0.1, rounds_T=0),
])
def test_invalid_inputs(kwargs):
    with pytest.raises(ConfigError):
        BoundInputs(**kwargs)


def test_regime_flag():
    assert BoundInputs(smooth_L=2.0, mu=1.0, eta=0.5).regime_ok
    assert not BoundInputs(smooth_L=2.0, mu=1.0, eta=0.6).regime_ok
    assert not BoundInputs(smooth_L=2.0, mu=1.0, eta=0.0).regime_ok


# --- numeric verification ---

SPEC = ModelSpec(ModelKind.LOGISTIC, l2_strength=0.05, learning_rate=0.1)


def _run(kind, partition, seed=0, rounds=None, total=6):
    return run_deployment(DeploymentConfig(kind, len(partition), total, SPEC, n_rounds=rounds, seed=seed),
                          partition)


@pytest.fixture(scope="module")
def iid_setup():
    partition = make_partition(3, n_rows=24, identical=True)
    return partition, estimate_constants(SPEC, partition, seed=0)


@pytest.mark.parametrize("kind", list(DeploymentKind))
def test_iid_runs_respect_the_bound(kind, iid_setup):
    partition, stats = iid_setup
    run = _run(kind, partition, rounds=2)
    inputs = bound_inputs_from(stats, run)
    assert inputs.regime_ok
    report = verify_bound(run, stats, inputs)
    assert report.all_hold
    assert all(c.measured_gap >= -1e-9 for c in report.checks)
    expected = 4 if run.global_params is not None else 3
    assert len(report.checks) == expected


def test_bound_holds_across_seeds(iid_setup):
    partition, stats = iid_setup
    held = 0
    trials = 50
    for seed in range(trials):
        run = _run("continuous_linear", partition, seed=seed, total=3)
        held += verify_bound(run, stats, bound_inputs_from(stats, run)).all_hold
    assert held >= 0.99 * trials


def test_inflated_z_still_holds(iid_setup):
    partition, stats = iid_setup
    run = _run("aggregate_linear", partition)
    honest = verify_bound(run, stats, bound_inputs_from(stats, run))
    inflated = verify_bound(run, stats, bound_inputs_from(stats, run, z=stats.z_scalar + 1.0))
    assert inflated.checks[0].bound > honest.checks[0].bound
    assert inflated.all_hold


def test_unstable_step_is_flagged_not_asserted(iid_setup):
    partition, stats = iid_setup
    run = _run("continuous_linear", partition)
    inputs = BoundInputs(smooth_L=stats.smooth_L, mu=stats.mu, eta=5.0 / stats.smooth_L,
                         init_dist_sq=0.0)
    report = verify_bound(run, stats, inputs)
    assert not any(c.regime_ok for c in report.checks)
    assert report.all_hold


def test_missing_optimum(iid_setup):
    partition, stats = iid_setup
    run = _run("continuous_linear", partition)
    stripped = replace(stats, pooled_data=None)
    with pytest.raises(MissingOptimumError):
        verify_bound(run, stripped, bound_inputs_from(stats, run))


def test_report_is_json_ready(iid_setup):
    partition, stats = iid_setup
    runs = [_run(kind, partition, rounds=2) for kind in ("continuous_ring", "aggregate_star")]
    merged = merge_reports([verify_bound(r, stats, bound_inputs_from(stats, r)) for r in runs])
    payload = json.loads(json.dumps(merged.to_json()))
    assert {c["deployment"] for c in payload} == {"continuous_ring", "aggregate_star"}
    assert any(c["client"] == "global" for c in payload)
    assert np.all([isinstance(c["holds"], bool) for c in payload])


@pytest.fixture(scope="module")
def skewed_setup():
    partition = make_partition(3, n_rows=24, seed=5)
    return partition, estimate_constants(SPEC, partition, seed=0)


def test_bounds_hold_in_repeated_trials(iid_setup, skewed_setup):
    held = trials = 0
    for partition, stats in (iid_setup, skewed_setup):
        for kind in ("continuous_linear", "aggregate_linear", "aggregate_star"):
            for seed in range(34):
                run = _run(kind, partition, seed=seed, rounds=2)
                held += verify_bound(run, stats, bound_inputs_from(stats, run)).all_hold
                trials += 1
    assert trials >= 200
    assert held >= 0.99 * trials
