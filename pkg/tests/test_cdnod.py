import json

import numpy as np
import pytest

from latentcausal import fixtures as F
from latentcausal.cdnod import augment_with_time, cdnod_skeleton, hybrid_ci
from latentcausal.simulate import Dataset


def test_surrogate_examples():
    d = augment_with_time(Dataset(["a"], np.zeros((3, 1))))
    assert d.col("T").tolist() == [0.0, 0.5, 1.0]
    d = augment_with_time(Dataset(["a"], np.zeros((5, 1)), np.arange(2019, 2024)))
    assert d.col("T").tolist() == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert augment_with_time(Dataset(["a"], np.zeros((1, 1)))).col("T").tolist() == [0.0]


def test_surrogate_required():
    with pytest.raises(ValueError):
        cdnod_skeleton(Dataset(["a", "b"], np.zeros((10, 2))))
    with pytest.raises(ValueError):
        augment_with_time(Dataset(["T"], np.zeros((3, 1))))


def test_hybrid_routes_tests():
    d = augment_with_time(F.drift_dataset(300, seed=0))
    test = hybrid_ci(d, "T", 0.01, 300, 0)
    assert test("X1", "X2", ["X3"]).dof_or_perm == 1  # Fisher-z records |S|
    assert test("T", "X2", ["X1"]).p_value < 0.01


@pytest.mark.slow
def test_drift_fixture_flags_x2():
    res = cdnod_skeleton(augment_with_time(F.drift_dataset(2000, seed=0)), rolling_window=500)
    assert res.changing_modules == {"X2"}
    assert not res.skeleton.adjacent("X1", "X3")
    doc = res.to_dict()
    assert doc["surrogate_edges"] == [["T", "X2"]]
    assert list(json.loads(res.to_json()))[0] == "changing_modules"
    assert len(res.rolling["X2"]) == 7


@pytest.mark.slow
def test_stationary_control_quiet():
    res = cdnod_skeleton(augment_with_time(F.drift_dataset(2000, seed=1, stationary=True)))
    assert res.changing_modules == set()


def test_deterministic_given_seed():
    d = augment_with_time(F.drift_dataset(600, seed=2))
    a = cdnod_skeleton(d, kci_cap=300, seed=5).to_json()
    b = cdnod_skeleton(d, kci_cap=300, seed=5).to_json()
    assert a == b
