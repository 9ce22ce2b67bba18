import numpy as np
import pytest

from fedecado.objectives import Dataset, LogisticObjective, QuadraticObjective, make_blobs


@pytest.fixture
def toy_2class():
    """Four linearly separable samples in two classes."""
    feats = np.array([[1.0, 0.0], [2.0, 0.5], [-1.0, 0.2], [-2.0, -0.3]])
    labels = np.array([0, 0, 1, 1])
    return Dataset(feats, labels, 2)


@pytest.fixture
def toy_logistic(toy_2class):
    return LogisticObjective(toy_2class)


@pytest.fixture
def blob_data():
    return make_blobs(60, 4, 3, seed=42)


@pytest.fixture
def simple_quadratic():
    return QuadraticObjective(np.diag([2.0, 4.0]), np.array([1.0, 1.0]))
