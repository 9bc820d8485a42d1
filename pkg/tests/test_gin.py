import numpy as np
import pytest

from latentcausal import fixtures as F
from latentcausal.gin import RankDegenerateError, gin_holds, gin_surrogate, orient_all, report_json
from latentcausal.graph import Cover, CoverGraph, Orientation
from latentcausal.simulate import Dataset, sample_scm


def two_cover_structure(reverse=False):
    a, b = Cover(["L1"]), Cover(["L2"])
    g = CoverGraph()
    g.add_edge(*((b, a) if reverse else (a, b)), Orientation.UNDIRECTED)
    for i in range(1, 5):
        g.add_edge(a, Cover([f"X{i}"]))
        g.add_edge(b, Cover([f"X{i + 4}"]))
    return g


@pytest.fixture(scope="module")
def uniform_data():
    scm = F.two_cover_scm(np.random.default_rng(0), noise="uniform")
    return sample_scm(scm, 100_000, seed=0)


def test_empty_z_convention():
    d = sample_scm(F.one_factor_scm(), 200, seed=0)
    q = gin_surrogate(d, [], ["X1", "X2"])
    assert q.omega.tolist() == [1.0, 0.0]


def test_one_factor_omega_closed_form():
    d = sample_scm(F.one_factor_scm(), 200_000, seed=1)
    q = gin_surrogate(d, ["X1"], ["X2", "X3"])
    target = np.array([0.6, -0.8])
    assert abs(q.omega @ target) == pytest.approx(1.0, abs=1e-3)
    assert q.omega[np.argmax(np.abs(q.omega))] > 0


def test_duplicate_columns_degenerate():
    d = sample_scm(F.one_factor_scm(), 500, seed=0)
    dup = Dataset(d.columns + ["X1b"], np.column_stack([d.samples, d.col("X1")]))
    with pytest.raises(RankDegenerateError):
        gin_surrogate(dup, ["X2"], ["X1", "X1b"])


def test_preconditions():
    d = sample_scm(F.one_factor_scm(), 50, seed=0)
    with pytest.raises(ValueError):
        gin_surrogate(d, ["X1"], ["X2", "X3"])
    d = sample_scm(F.one_factor_scm(), 500, seed=0)
    with pytest.raises(ValueError):
        gin_surrogate(d, ["X1", "X2"], ["X3", "X4"])


@pytest.mark.slow
def test_direction_holds_forward_only(uniform_data):
    assert gin_holds(uniform_data, ["X1"], ["X2", "X5"])
    assert not gin_holds(uniform_data, ["X5"], ["X6", "X1"])


def test_independent_columns_hold():
    d = Dataset(list("abc"), np.random.default_rng(0).uniform(size=(500, 3)))
    assert gin_holds(d, ["a"], ["b", "c"])


def test_positive_rescaling_invariance():
    d = sample_scm(F.two_cover_scm(np.random.default_rng(2), noise="uniform"), 3000, seed=2)
    scaled = Dataset(d.columns, d.samples * np.array([1, 3.0, 1, 1, 0.2, 1, 1, 1]))
    a, b = gin_surrogate(d, ["X1"], ["X2", "X5"]), gin_surrogate(scaled, ["X1"], ["X2", "X5"])
    corr = np.corrcoef(a.surrogate, b.surrogate)[0, 1]
    assert abs(corr) == pytest.approx(1.0, abs=1e-9)
    assert gin_holds(d, ["X1"], ["X2", "X5"]) == gin_holds(scaled, ["X1"], ["X2", "X5"])


@pytest.mark.slow
@pytest.mark.parametrize("reverse", [False, True])
def test_orient_two_cover_chain(uniform_data, reverse):
    g, rep = orient_all(two_cover_structure(reverse), uniform_data)
    e = g.edge_between(Cover(["L1"]), Cover(["L2"]))
    assert e.orientation is Orientation.DIRECTED
    assert e.parent == Cover(["L1"])
    assert not g._directed_cycle()
    assert rep[0].decision == ("backward" if reverse else "forward")


@pytest.mark.slow
def test_gaussian_left_undirected():
    d = sample_scm(F.two_cover_scm(np.random.default_rng(3), noise="gaussian"), 100_000, seed=3)
    g, rep = orient_all(two_cover_structure(), d)
    assert g.edge_between(Cover(["L1"]), Cover(["L2"])).orientation is Orientation.UNDIRECTED
    assert rep[0].decision == "ambiguous-both"


def test_single_cover_unchanged():
    g = CoverGraph()
    for i in range(1, 5):
        g.add_edge(Cover(["L1"]), Cover([f"X{i}"]))
    d = sample_scm(F.one_factor_scm(), 500, seed=0)
    out, rep = orient_all(g, d)
    assert out.to_dict() == g.to_dict() and rep == []


def test_insufficient_children_skipped():
    a, b = Cover(["L1"]), Cover(["L2"])
    g = CoverGraph()
    g.add_edge(a, b, Orientation.UNDIRECTED)
    g.add_edge(a, Cover(["X1"]))
    for i in range(5, 9):
        g.add_edge(b, Cover([f"X{i}"]))
    d = sample_scm(F.two_cover_scm(np.random.default_rng(0)), 500, seed=0)
    out, rep = orient_all(g, d)
    assert rep[0].decision == "skipped-insufficient-children"
    assert '"decision": "skipped-insufficient-children"' in report_json(rep)
