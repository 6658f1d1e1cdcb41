import sys
import os

# Add src to path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import pandas as pd

from src.cli import ExperimentConfig, run_experiment
from src.data import SkewSpec
from src.visualizer import plot_f1_by_level

# --- CONFIGURATION ---
MODEL = "svm"
LEVELS = ["iid", "level1", "level2", "level3"]
N_CLIENTS = 5
SEED = 0
OUTPUT_ROOT = f"results/levels_{MODEL}"
# Level-2 SVM F1 range and the row reported for continuous linear training
LEVEL2_F1_RANGE = (0.75, 0.87)
LEVEL2_LINEAR_ROW = ["NC", "NC", 260, 301, "NC"]


def run_levels():
    print(f"Running Experiment 03: Non-IID Levels ({MODEL})...")
    rows = []
    for level in LEVELS:
        out = os.path.join(OUTPUT_ROOT, level)
        config = ExperimentConfig(model=MODEL, skew=level, n_clients=N_CLIENTS, seed=SEED, out=out,
                                  bounds=False)
        code = run_experiment(config)
        if code != 0:
            print(f"{level}: run failed with exit code {code}, see {out}/error.json")
            continue

        kl = 0.0 if level == "iid" else SkewSpec.from_level(level, N_CLIENTS).level_kl()
        table = pd.read_csv(os.path.join(out, "convergence_table.csv"), index_col="deployment")
        summary = pd.read_csv(os.path.join(out, "f1_summary.csv"))
        summary = summary[summary["deployment"] != "baseline"].assign(level=level)
        rows.append(summary)

        print(f"\n{'='*40}")
        print(f"Level: {level}  (KL {kl:.5f})")
        print(f"{'='*40}")
        print(table.to_string())
        print(f"Mean F1: {summary['f1'].mean():.3f}")
        if level == "level2":
            print(f"continuous_linear row: {table.loc['continuous_linear'].tolist()} "
                  f"(reference {LEVEL2_LINEAR_ROW})")

    if not rows:
        return
    results = pd.concat(rows, ignore_index=True)
    means = results.groupby("level", sort=False)["f1"].mean()
    print("\n--- MEAN F1 BY LEVEL ---")
    print(means.to_string())

    if means.is_monotonic_decreasing and means.is_unique:
        print("VERDICT: F1 DEGRADES STRICTLY WITH THE NON-IID LEVEL.")
    else:
        print("VERDICT: F1 ORDERING ACROSS LEVELS IS NOT STRICT.")
    if "level2" in means.index:
        low, high = LEVEL2_F1_RANGE
        inside = low <= means["level2"] <= high
        print(f"Level-2 mean F1 {means['level2']:.3f} {'inside' if inside else 'outside'} [{low}, {high}]")

    path = os.path.join(OUTPUT_ROOT, "f1_by_level.png")
    plot_f1_by_level(results, title=f"Test F1 by Non-IID Level ({MODEL})", path=path)
    print(f"Saved plot to '{path}'")


if __name__ == "__main__":
    run_levels()
