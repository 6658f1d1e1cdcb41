import sys
import os

# Add src to path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import pandas as pd

from src.visualizer import plot_loss_curves

# --- CONFIGURATION ---
# Output directory of a CLI run (python -m src.cli --out ...)
RESULTS_DIR = "results/levels_svm/level2"
DEPLOYMENTS = ["continuous_linear", "continuous_ring", "aggregate_linear",
               "aggregate_ring", "aggregate_star", "aggregate_mesh"]


def plot_run():
    print(f"Running Experiment 05: Loss Curves from '{RESULTS_DIR}'...")
    table_path = os.path.join(RESULTS_DIR, "convergence_table.csv")
    table = pd.read_csv(table_path, index_col="deployment") if os.path.exists(table_path) else None

    for deployment in DEPLOYMENTS:
        trace_path = os.path.join(RESULTS_DIR, "traces", f"{deployment}.csv")
        if not os.path.exists(trace_path):
            print(f"Skipping {deployment}: no trace at {trace_path}")
            continue
        frame = pd.read_csv(trace_path)
        convergence = None
        if table is not None and deployment in table.index:
            convergence = {int(col.split("_")[1]): (None if value == "NC" else int(value))
                           for col, value in table.loc[deployment].items()}
        path = os.path.join(RESULTS_DIR, f"loss_{deployment}.png")
        plot_loss_curves(frame, title=f"Loss Curves: {deployment}", path=path, convergence=convergence)
        print(f"Saved plot to '{path}'")


if __name__ == "__main__":
    plot_run()
