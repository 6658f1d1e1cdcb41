import sys
import os

# Add src to path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.cli import library_versions
from src.data import load_breast_cancer_dataset, split_dataset

# --- CONFIGURATION ---
EXPECTED_ROWS = 569
EXPECTED_FEATURES = 30
EXPECTED_LABELS = {0: 357, 1: 212}

print("1. Checking installed libraries...")
for name, ver in library_versions().items():
    print(f"   {name:<14} {ver}")

print("2. Loading the bundled WDBC dataset...")
try:
    wdbc = load_breast_cancer_dataset()
except Exception as e:
    print("\nSetup failed! Error details:")
    print(e)
    sys.exit(1)

print(f"   {wdbc.n_rows} rows, {wdbc.n_features} features, labels {wdbc.label_histogram()}")
if (wdbc.n_rows, wdbc.n_features) != (EXPECTED_ROWS, EXPECTED_FEATURES) or wdbc.label_histogram() != EXPECTED_LABELS:
    print("ERROR: the dataset does not match the expected 569 x 30 shape with 212 malignant rows.")
    sys.exit(1)

train, val, test = split_dataset(wdbc, seed=0)
print(f"3. Default split: train {train.n_rows} / validation {val.n_rows} / test {test.n_rows}")
print("You are ready to run the experiment scripts.")
