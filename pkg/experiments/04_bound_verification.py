import sys
import os

# Add src to path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.bounds import bound_inputs_from, verify_bound
from src.cli import ExperimentConfig, prepare_data
from src.data import SkewSpec, build_partition
from src.engine import DeploymentKind, run_deployment
from src.models import estimate_constants

# --- CONFIGURATION ---
MODEL = "logistic"
LEVELS = ["iid", "level2"]
N_CLIENTS = 5
TOTAL_EPOCHS = 100
SEED = 0


def verify_levels():
    print(f"Running Experiment 04: Convergence Bounds ({MODEL}, {TOTAL_EPOCHS} epochs)...")
    for level in LEVELS:
        config = ExperimentConfig(model=MODEL, skew=level, n_clients=N_CLIENTS,
                                  total_epochs=TOTAL_EPOCHS, seed=SEED)
        train, validation, _ = prepare_data(config)
        partition = build_partition(train, SkewSpec.from_level(level, N_CLIENTS), SEED,
                                    validation=validation)
        stats = estimate_constants(config.model_spec(), partition, seed=SEED)

        print(f"\n{'='*40}")
        print(f"Level: {level}")
        print(f"{'='*40}")
        print(f"mu={stats.mu:.3g}  L={stats.smooth_L:.3g}  Z={stats.z_scalar:.3g}  "
              f"G={stats.grad_bound_G:.3g}  sigma_max={max(stats.sigma_k):.3g}")
        if not all(stats.optimum_converged):
            print("WARNING: a local-optimum search hit its iteration cap.")

        for kind in DeploymentKind:
            run = run_deployment(config.deployment_config(kind), partition)
            inputs = bound_inputs_from(stats, run)
            report = verify_bound(run, stats, inputs)
            worst = max(report.checks, key=lambda c: c.measured_gap)
            status = "HOLDS" if report.all_hold else "VIOLATED"
            if not inputs.regime_ok:
                status = "OUTSIDE REGIME"
            print(f"{kind.value:<18} max gap {worst.measured_gap:10.4g}  bound {worst.bound:10.4g}  {status}")


if __name__ == "__main__":
    verify_levels()
