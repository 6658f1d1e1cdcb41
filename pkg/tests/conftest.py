import matplotlib

matplotlib.use("Agg")

import numpy as np
import pytest

from src.data import ClientDataset, Dataset, load_breast_cancer_dataset, replicate_partition
from src.models import ModelKind, ModelSpec


def make_dataset(n_rows=40, n_features=3, seed=0, separation=1.0, name="synthetic"):
    """Two noisy clusters in [0, 1]^d, half of the rows labelled 1."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n_rows) % 2
    centers = np.where(labels[:, None] == 1, 0.5 + 0.25 * separation, 0.5 - 0.25 * separation)
    features = np.clip(centers + rng.normal(0.0, 0.15, size=(n_rows, n_features)), 0.0, 1.0)
    return Dataset(features, labels, name=name)


def make_partition(n_clients=3, n_rows=30, n_features=3, seed=0, identical=False):
    """Clients with their own synthetic rows (or copies of one dataset) and a shared validation set."""
    validation = make_dataset(20, n_features, seed=seed + 1000, name="validation")
    if identical:
        return replicate_partition(make_dataset(n_rows, n_features, seed), n_clients, validation=validation)
    return [ClientDataset(k, make_dataset(n_rows + 2 * k, n_features, seed + k, name=f"client{k}"), validation)
            for k in range(n_clients)]


@pytest.fixture
def dataset():
    return make_dataset()


@pytest.fixture
def partition():
    return make_partition()


@pytest.fixture
def logistic_spec():
    return ModelSpec(ModelKind.LOGISTIC, l2_strength=0.05, learning_rate=0.1)


@pytest.fixture
def svm_spec():
    return ModelSpec(ModelKind.SVM_HINGE, l2_strength=0.01, learning_rate=0.05)


@pytest.fixture(scope="session")
def wdbc():
    return load_breast_cancer_dataset()


@pytest.fixture
def out_dir(tmp_path):
    return tmp_path / "results"
