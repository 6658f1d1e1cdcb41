import sys
import os

# Add src to path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import pandas as pd

from src.cli import ExperimentConfig, run_experiment

# --- CONFIGURATION ---
MODELS = ["svm", "logistic"]
N_CLIENTS = 5
SEED = 0
OUTPUT_ROOT = "results/iid"


def run_all():
    print("Running Experiment 02: Six Deployments on IID Data...")
    for model in MODELS:
        out = os.path.join(OUTPUT_ROOT, model)
        config = ExperimentConfig(model=model, deployment="all", skew="iid", n_clients=N_CLIENTS,
                                  seed=SEED, out=out, bounds=False)
        code = run_experiment(config)

        print(f"\n{'='*40}")
        print(f"Model: {model}  (exit code {code})")
        print(f"{'='*40}")
        if code != 0:
            print(f"Run failed, see {out}/error.json")
            continue

        table = pd.read_csv(os.path.join(out, "convergence_table.csv"), index_col="deployment")
        summary = pd.read_csv(os.path.join(out, "f1_summary.csv"))
        print(table.to_string())
        print()
        print(summary.to_string(index=False))

        n_nc = int((table == "NC").to_numpy().sum())
        baseline = float(summary.loc[summary["deployment"] == "baseline", "f1"].iloc[0])
        worst = float((summary["f1"] - baseline).abs().max())
        if n_nc == 0 and worst <= 0.03:
            print("VERDICT: ALL CLIENTS CONVERGED, F1 WITHIN 0.03 OF THE BASELINE.")
        else:
            print(f"VERDICT: {n_nc} NC CELLS, LARGEST F1 GAP TO BASELINE {worst:.3f}.")


if __name__ == "__main__":
    run_all()
