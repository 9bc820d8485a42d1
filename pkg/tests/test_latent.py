import numpy as np
import pytest

from latentcausal import fixtures as F
from latentcausal.graph import Cover, DirectedGraph, is_atomic_cover, same_structure
from latentcausal.latent import (BudgetExceededError, CovarianceRank, RankDeficiencyQuery, TrekRank,
                                 check_rank_deficiency, find_atomic_covers, refine_clusters)
from latentcausal.simulate import Dataset, random_scm, sample_scm
from latentcausal.skeleton import dsep_oracle, pc_skeleton
from latentcausal.stats import Moments

FIG3 = F.nested_latent_graph()


def oracle_skeleton(g):
    return pc_skeleton(None, dsep_oracle(g), vertices=[v.name for v in g.observed])


def discover_oracle(g, rank):
    return refine_clusters(rank, find_atomic_covers(rank, oracle_skeleton(g)))


def matches(g, st):
    lat = set(st.latent_names)
    loose = [(p, c) for p, c in st.edges if p in lat and c in lat]
    return same_structure(g, st.to_directed_graph(), undirected_pairs=loose)


def C(*names):
    return tuple(Cover([n]) for n in names)


def test_nested_latent_query_examples():
    from latentcausal.latent import DiscoveryState
    st = DiscoveryState.initial(oracle_skeleton(FIG3))
    rank = TrekRank(FIG3)
    assert check_rank_deficiency(rank, st, RankDeficiencyQuery(C("X8"), C("X3"), 1))
    assert check_rank_deficiency(rank, st, RankDeficiencyQuery(C("X4", "X5"), C("X2"), 2))


def test_independent_variables_never_deficient():
    from latentcausal.latent import DiscoveryState
    d = Dataset([f"X{i}" for i in range(1, 7)], np.random.default_rng(0).standard_normal((20_000, 6)))
    st = DiscoveryState.initial(pc_skeleton(d))
    q = RankDeficiencyQuery(C("X2", "X3"), C("X1"), 2)
    assert not check_rank_deficiency(d, st, q)
    with pytest.raises(ValueError):
        check_rank_deficiency(d, st, RankDeficiencyQuery(C("X2"), C("X1"), 2))


def test_nested_latent_sequence_oracle():
    st = discover_oracle(FIG3, TrekRank(FIG3))
    kinds = [s["kind"] for s in st.trace]
    assert kinds == ["observed", "collider", "latent", "latent"]
    assert st.trace[0]["X"] == [["X3"]] and st.trace[0]["C"] == [["X8"]]
    assert st.trace[1]["C"] == [["X7"]]
    assert matches(FIG3, st)


def test_one_factor_data():
    d = sample_scm(F.one_factor_scm(), 100_000, seed=0)
    st = refine_clusters(d, find_atomic_covers(d, pc_skeleton(d)))
    assert st.latent_names == ["L1"]
    g = st.to_directed_graph()
    assert {v.name for v in g.children("L1")} == {"X1", "X2", "X3", "X4"}


def test_chain_no_latents():
    g = F.chain_scm(4).graph
    st = discover_oracle(g, TrekRank(g))
    assert st.latent_names == []
    assert {frozenset(e) for e in st.edges} <= {frozenset(e) for e in oracle_skeleton(g).edges()}


def test_refine_idempotent_on_correct_state():
    rank = TrekRank(FIG3)
    st = discover_oracle(FIG3, rank)
    before = st.to_dict()
    assert refine_clusters(rank, st).to_dict() == before
    g = F.one_factor_scm().graph
    st2 = discover_oracle(g, TrekRank(g))
    assert refine_clusters(TrekRank(g), st2).to_dict()["clusters"] == st2.to_dict()["clusters"]


def test_refine_splits_overmerged_cover():
    # two independent latents wrongly recorded as one 2-cover over all eight children
    from latentcausal.latent import DiscoveryState, RecordedCluster
    g = F.regime_scm(False).graph
    rank = TrekRank(g)
    st = DiscoveryState.initial(oracle_skeleton(g))
    V = Cover([st.new_latent(), st.new_latent()])
    kids = tuple(Cover([x]) for x in F.REGIME_OBSERVED)
    for c in kids:
        st.current_graph.add_edge(V, c)
        st.edges |= {(p, m) for p in V.members for m in c.members}
        st.active.remove(c)
    st.active.append(V)
    st.recorded_clusters.append(RecordedCluster(kids, V, 2, "latent"))
    refine_clusters(rank, st)
    covers = sorted(len(cl.cover) for cl in st.recorded_clusters if cl.kind == "latent")
    assert covers == [1, 1]
    assert matches(g, st)


def measurement_model(rng):
    m = int(rng.integers(1, 4))
    kids = [int(rng.integers(3, 5)) for _ in range(m)]
    lat = [f"L{i + 1}" for i in range(m)]
    edges = [(lat[int(rng.integers(0, i))], lat[i]) for i in range(1, m)]
    obs = []
    for i, c in enumerate(kids):
        for _ in range(c):
            obs.append(f"X{len(obs) + 1}")
            edges.append((lat[i], obs[-1]))
    return DirectedGraph.from_names(obs, lat, edges)


def identifiable(g):
    return len(g) <= 10 and all(is_atomic_cover(g, [v.name]) for v in g.latent)


def oracle_fixtures(count=24):
    rng = np.random.default_rng(7)
    out = [F.one_factor_scm().graph, FIG3, F.regime_scm(True).graph, F.regime_scm(False).graph]
    while len(out) < count:
        g = measurement_model(rng)
        if identifiable(g):
            out.append(g)
    return out


@pytest.mark.parametrize("g", oracle_fixtures(), ids=lambda g: f"{len(g.latent)}L{len(g.observed)}X")
def test_oracle_recovery(g):
    assert identifiable(g) or g is FIG3
    assert matches(g, discover_oracle(g, TrekRank(g)))
    assert matches(g, discover_oracle(g, CovarianceRank(random_scm(g, np.random.default_rng(1)))))


def test_latent_count_stable_under_column_permutation():
    d = sample_scm(F.nested_latent_scm(), 100_000, seed=3)
    cols = list(reversed(d.columns))
    counts = []
    for data in (d, d.select(cols)):
        m = Moments.from_dataset(data)
        counts.append(len(find_atomic_covers(m, pc_skeleton(m)).latent_names))
    assert counts[0] == counts[1] == 2


def test_budget_guard():
    with pytest.raises(BudgetExceededError):
        find_atomic_covers(TrekRank(FIG3), oracle_skeleton(FIG3), budget=5)


def test_state_serialises():
    st = discover_oracle(FIG3, TrekRank(FIG3))
    d = st.to_dict()
    assert d["latents"] == ["L1", "L2"]
    assert len(d["clusters"]) == 4
