import sys
import os
import json

import pandas as pd

# Add src to path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.metrics import NC

# --- CONFIGURATION ---
# CLI output directories to summarize (python -m src.cli --out ...)
RESULT_DIRS = sys.argv[1:] or ["results"]


def latex_row(label, cells):
    """One table row in the 'a & b & c \\\\' layout."""
    return " & ".join([label, *[str(c) for c in cells]]) + r" \\"


def summarize(result_dir):
    print(f"\n{'='*40}")
    print(f"Results: {result_dir}")
    print(f"{'='*40}")

    error_path = os.path.join(result_dir, "error.json")
    if os.path.exists(error_path):
        with open(error_path, encoding="utf-8") as handle:
            error = json.load(handle)
        print(f"Run failed ({error['error']}, exit {error['exit_code']}): {error['message']}")
        return

    try:
        table = pd.read_csv(os.path.join(result_dir, "convergence_table.csv"), index_col="deployment")
        summary = pd.read_csv(os.path.join(result_dir, "f1_summary.csv"))
    except FileNotFoundError as e:
        print(f"Missing artifact: {e.filename}")
        return

    print("\n--- CONVERGENCE EPOCH PER CLIENT ---")
    for deployment, row in table.iterrows():
        print(latex_row(deployment.replace("_", " "), row.tolist()))

    print("\n--- TEST F1 ---")
    print(latex_row("Deployment", summary["deployment"].str.replace("_", " ").tolist()))
    print(latex_row("F1", [f"{f:.3f}" for f in summary["f1"]]))

    n_nc = int((table.astype(str) == NC).to_numpy().sum())
    print(f"\nNC cells: {n_nc} of {table.size}")

    bounds_path = os.path.join(result_dir, "bounds.json")
    if os.path.exists(bounds_path):
        with open(bounds_path, encoding="utf-8") as handle:
            checks = pd.DataFrame(json.load(handle)["checks"])
        in_regime = checks[checks["regime_ok"]]
        print(f"Bound checks: {int(in_regime['holds'].sum())}/{len(in_regime)} hold inside the stability regime"
              f" ({len(checks) - len(in_regime)} outside)")


if __name__ == "__main__":
    for result_dir in RESULT_DIRS:
        summarize(result_dir)
