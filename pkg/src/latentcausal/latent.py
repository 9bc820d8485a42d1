"""Rank-deficiency search for atomic covers and cluster refinement.

A query pairs a set ``X`` of active covers acting as parents with a set
``C`` of active covers acting as children. Rows are ``X`` plus one observed
representative per child cover, columns are ``X`` plus every observed
variable in the same skeleton component that is neither a member nor a
recorded measured descendant of ``C``. The query is deficient when that
cross-covariance has rank exactly ``k`` (``k + 1`` rows) and the child rows
alone still carry ``min(|C|, k)`` dimensions of signal.

Accepted groups within one sweep are applied in a batch (fewest new latents
first); the search then restarts at ``k = 1``.
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field
from typing import Protocol, Sequence, Union

import numpy as np

from .graph import Cover, CoverGraph, DirectedGraph, Orientation, min_tsep_cut
from .simulate import Dataset, LatentLinearSCM, model_covariance
from .skeleton import Skeleton
from .stats import DEFAULT_ALPHA, Moments, estimate_rank

log = logging.getLogger(__name__)

DEFAULT_K_MAX = 4
DEFAULT_BUDGET = 10**6


class BudgetExceededError(RuntimeError):
    pass


class InsufficientColumnsError(ValueError):
    pass


# --------------------------------------------------------------------------
# rank back-ends


class RankOracle(Protocol):
    def rank(self, rows: Sequence[str], cols: Sequence[str]) -> int: ...


class StatisticalRank:
    """Rank estimated with the canonical-correlation test."""

    def __init__(self, data: Union[Dataset, Moments], alpha: float = DEFAULT_ALPHA):
        self.moments = data if isinstance(data, Moments) else Moments.from_dataset(data)
        self.alpha = alpha
        self._cache: dict = {}

    def rank(self, rows, cols) -> int:
        key = (tuple(rows), tuple(cols))
        if key not in self._cache:
            self._cache[key] = estimate_rank(self.moments, list(rows), list(cols), self.alpha)
        return self._cache[key]


class CovarianceRank:
    """Numeric rank of the model-implied cross-covariance."""

    def __init__(self, scm: LatentLinearSCM, tol: float = 1e-8):
        self.scm = scm
        self.cov = model_covariance(scm)
        self.tol = tol

    def rank(self, rows, cols) -> int:
        g = self.scm.graph
        M = self.cov[np.ix_([g.index(r) for r in rows], [g.index(c) for c in cols])]
        return numeric_rank(M, self.tol)


class TrekRank:
    """Minimum t-separation size in a known graph."""

    def __init__(self, graph: DirectedGraph):
        self.graph = graph
        self._cache: dict = {}

    def rank(self, rows, cols) -> int:
        key = (frozenset(rows), frozenset(cols))
        if key not in self._cache:
            self._cache[key] = min_tsep_cut(self.graph, rows, cols, max_vertices=64)[2]
        return self._cache[key]


def numeric_rank(M: np.ndarray, tol: float = 1e-8) -> int:
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] <= 1e-12:
        return 0
    return int(np.sum(s > tol * s[0]))


def _oracle(source, alpha: float) -> RankOracle:
    if hasattr(source, "rank"):
        return source
    return StatisticalRank(source, alpha)


# --------------------------------------------------------------------------
# state


@dataclass(frozen=True)
class RankDeficiencyQuery:
    C_set: tuple[Cover, ...]
    X_set: tuple[Cover, ...]
    k: int

    def __post_init__(self):
        if set(self.C_set) & set(self.X_set):
            raise ValueError("C and X must be disjoint")
        if not self.C_set:
            raise ValueError("C must be non-empty")


@dataclass
class RecordedCluster:
    children: tuple[Cover, ...]
    cover: Cover
    k: int
    kind: str


@dataclass
class DiscoveryState:
    observed: list[str]
    components: list[frozenset]
    current_graph: CoverGraph = field(default_factory=CoverGraph)
    recorded_clusters: list[RecordedCluster] = field(default_factory=list)
    active: list[Cover] = field(default_factory=list)
    introduced_latents: int = 0
    edges: set = field(default_factory=set)  # member-level (parent, child)
    trace: list[dict] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)

    @classmethod
    def initial(cls, skeleton: Skeleton) -> "DiscoveryState":
        obs = sorted(skeleton.vertices)
        comps = [frozenset(c) for c in skeleton.components()]
        st = cls(obs, comps)
        st.active = [Cover([v]) for v in obs]
        for c in st.active:
            st.current_graph.add_cover(c)
        return st

    # -- helpers ---------------------------------------------------------

    @property
    def latent_names(self) -> list[str]:
        return [f"L{i + 1}" for i in range(self.introduced_latents)]

    def is_observed(self, m: str) -> bool:
        return m in self._obs_set

    @property
    def _obs_set(self) -> frozenset:
        return frozenset(self.observed)

    def kind(self, c: Cover) -> str:
        obs = [m for m in c.members if m in self._obs_set]
        if len(c) == 1 and obs:
            return "observed"
        if not obs:
            return "latent"
        return "mixed"

    def children_of(self, v: Cover) -> list[Cover]:
        out = []
        for cl in self.recorded_clusters:
            if cl.cover == v:
                out += [c for c in cl.children if c not in out]
        return out

    def pure_observed_children(self, v: Cover) -> list[str]:
        ch = []
        for c in self.children_of(v):
            if self.kind(c) == "observed":
                ch += list(c.members)
        return sorted(ch)

    def representative(self, c: Cover) -> str | None:
        obs = sorted(m for m in c.members if m in self._obs_set)
        if obs:
            return obs[0]
        ch = self.pure_observed_children(c)
        if ch:
            return ch[0]
        for sub in self.children_of(c):
            r = self.representative(sub)
            if r is not None:
                return r
        return None

    def measured_descendants(self, covers) -> set[str]:
        frontier = [m for c in covers for m in c.members]
        seen = set(frontier)
        succ: dict[str, list[str]] = {}
        for p, ch in self.edges:
            succ.setdefault(p, []).append(ch)
        while frontier:
            v = frontier.pop()
            for w in succ.get(v, []):
                if w not in seen:
                    seen.add(w)
                    frontier.append(w)
        return {v for v in seen if v in self._obs_set}

    def component_of(self, c: Cover) -> frozenset | None:
        r = self.representative(c)
        for comp in self.components:
            if r in comp:
                return comp
        return None

    def new_latent(self) -> str:
        self.introduced_latents += 1
        return f"L{self.introduced_latents}"

    def to_directed_graph(self) -> DirectedGraph:
        return DirectedGraph.from_names(self.observed, self.latent_names, sorted(self.edges))

    def to_dict(self) -> dict:
        return {
            "observed": self.observed,
            "latents": self.latent_names,
            "graph": self.current_graph.to_dict(),
            "clusters": [
                {
                    "cover": sorted(cl.cover.members),
                    "children": [sorted(c.members) for c in cl.children],
                    "k": cl.k,
                    "kind": cl.kind,
                }
                for cl in self.recorded_clusters
            ],
            "trace": self.trace,
            "flags": self.flags,
        }

    def trace_json(self) -> str:
        return json.dumps(self.trace, indent=2, sort_keys=True)


# --------------------------------------------------------------------------
# queries


def _x_eligible(state: DiscoveryState, c: Cover) -> bool:
    kind = state.kind(c)
    if kind == "observed":
        return True
    return kind == "latent" and len(c) == 1 and len(state.pure_observed_children(c)) >= 2


def query_sets(state: DiscoveryState, q: RankDeficiencyQuery,
               universe: Sequence[str] | None = None) -> tuple[list[str], list[str]]:
    """Row and column variable lists for a query."""
    rows: list[str] = []
    keep: list[str] = []
    drop: set[str] = set()
    for x in q.X_set:
        if state.kind(x) == "observed":
            (m,) = x.members
            rows.append(m)
            keep.append(m)
        else:
            ch = state.pure_observed_children(x)
            rows.append(ch[0])
            drop.add(ch[0])
            keep += ch[1:]
    for c in q.C_set:
        r = state.representative(c)
        if r is None:
            raise ValueError(f"cover {c} has no observed representative")
        rows.append(r)
    excluded = state.measured_descendants(q.C_set) | {m for c in q.C_set for m in c.members}
    if universe is None:
        universe = state.observed
    cols = list(keep)
    for v in sorted(universe):
        if v not in excluded and v not in drop and v not in cols:
            cols.append(v)
    return rows, cols


def _deficient(oracle: RankOracle, rows, cols, n_x: int, n_c: int, k: int) -> bool:
    if oracle.rank(rows, cols) != k:
        return False
    # the child rows must not be explained away entirely
    return oracle.rank(rows[n_x:], cols) == min(n_c, k)


def check_rank_deficiency(data, state: DiscoveryState, q: RankDeficiencyQuery,
                          alpha: float = DEFAULT_ALPHA) -> bool:
    """Whether ``q`` exhibits rank exactly ``k``; ``data`` may be a rank oracle."""
    if effective_rows(q) != q.k + 1:
        raise ValueError("query must have k + 1 rows")
    rows, cols = query_sets(state, q)
    if len(cols) < q.k:
        raise InsufficientColumnsError(f"only {len(cols)} columns for k={q.k}")
    return _deficient(_oracle(data, alpha), rows, cols, len(q.X_set), len(q.C_set), q.k)


def effective_rows(q: RankDeficiencyQuery) -> int:
    """Row count: one per X cover and one representative per C cover."""
    return len(q.X_set) + len(q.C_set)


# --------------------------------------------------------------------------
# Atomic cover search


@dataclass
class _Group:
    X: tuple[Cover, ...]
    C: tuple[Cover, ...]
    k: int
    t: int
    queries: list[RankDeficiencyQuery]


class _Budget:
    def __init__(self, cap: int):
        self.cap = cap
        self.used = 0

    def tick(self) -> None:
        self.used += 1
        if self.used > self.cap:
            raise BudgetExceededError(f"more than {self.cap} candidate combinations")


def _sweep(state: DiscoveryState, oracle: RankOracle, k: int, budget: _Budget) -> list[_Group]:
    groups: list[_Group] = []
    for comp in state.components:
        act = sorted(c for c in state.active if state.component_of(c) == comp)
        xs = [c for c in act if _x_eligible(state, c)]
        for nx in range(k, -1, -1):
            nc = k + 1 - nx
            t = k - nx
            for X in itertools.combinations(xs, nx):
                latent_x = any(state.kind(x) == "latent" for x in X)
                if latent_x and (t > 0 or nx > 1):
                    continue
                rest = [c for c in act if c not in X]
                found: list[tuple[Cover, ...]] = []
                for C in itertools.combinations(rest, nc):
                    budget.tick()
                    if t > 0 and any(state.kind(c) == "latent" and len(c) > 1 for c in C):
                        continue
                    q = RankDeficiencyQuery(C, X, k)
                    rows, cols = query_sets(state, q, comp)
                    if len(cols) <= k or len(set(rows)) != len(rows):
                        continue
                    if _deficient(oracle, rows, cols, nx, nc, k):
                        found.append(C)
                if found:
                    groups += _group(X, found, k, t)
    groups.sort(key=lambda g: g.t)  # stable: keeps enumeration order within t
    return groups


def _group(X, found, k, t) -> list[_Group]:
    if t == 0:
        cs = []
        for C in found:
            cs += [c for c in C if c not in cs]
        return [_Group(X, tuple(cs), k, t, [RankDeficiencyQuery(C, X, k) for C in found])]
    # union-find on overlapping child sets
    parent = list(range(len(found)))

    def root(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in itertools.combinations(range(len(found)), 2):
        if set(found[i]) & set(found[j]):
            parent[root(i)] = root(j)
    buckets: dict[int, list[int]] = {}
    for i in range(len(found)):
        buckets.setdefault(root(i), []).append(i)
    out = []
    for idx in sorted(buckets.values()):
        cs: list[Cover] = []
        for i in idx:
            cs += [c for c in found[i] if c not in cs]
        out.append(_Group(X, tuple(cs), k, t, [RankDeficiencyQuery(found[i], X, k) for i in idx]))
    return out


def _side_condition(state: DiscoveryState, g: _Group) -> bool:
    members = {m for c in g.C for m in c.members}
    for cl in state.recorded_clusters:
        prev = {m for c in cl.children for m in c.members}
        if len(members & prev) > len(cl.cover):
            return False
    return True


def _apply(state: DiscoveryState, g: _Group) -> None:
    for q in g.queries:
        assert len(q.X_set) + len(q.C_set) == q.k + 1
    if g.t == 0:
        latent_x = state.kind(g.X[0]) == "latent"
        orient = Orientation.UNDIRECTED if latent_x else Orientation.DIRECTED
        for c in g.C:
            for x in g.X:
                state.current_graph.add_edge(x, c, orient)
                state.edges |= {(p, m) for p in x.members for m in c.members}
            state.active.remove(c)
        V = Cover([m for x in g.X for m in x.members])
        kind = "latent-edge" if latent_x else ("observed" if len(g.X) == 1 else "collider")
        new: list[str] = []
    else:
        new = [state.new_latent() for _ in range(g.t)]
        V = Cover(new + [m for x in g.X for m in x.members])
        for x in g.X:
            state.active.remove(x)
        for c in g.C:
            state.current_graph.add_edge(V, c)
            state.edges |= {(p, m) for p in V.members for m in c.members}
            state.active.remove(c)
        state.active.append(V)
        kind = "latent"
    state.recorded_clusters.append(RecordedCluster(tuple(g.C), V, g.k, kind))
    state.trace.append({
        "step": len(state.trace) + 1,
        "k": g.k,
        "kind": kind,
        "X": [sorted(x.members) for x in g.X],
        "C": [sorted(c.members) for c in g.C],
        "new_latents": new,
        "cover": sorted(V.members),
    })
    log.info("accepted %s cover %s -> %s (k=%d)", kind, sorted(V.members), [sorted(c.members) for c in g.C], g.k)


def _accept_batch(state: DiscoveryState, groups: list[_Group]) -> int:
    consumed: set[Cover] = set()
    as_x: set[Cover] = set()
    absorbed: set[Cover] = set()
    n = 0
    for g in groups:
        if any(c in consumed or c in as_x or c in absorbed for c in g.C):
            continue
        if any(x in consumed or x in absorbed for x in g.X):
            continue
        if not _side_condition(state, g):
            state.flags.append(f"side condition rejected cover over {[sorted(c.members) for c in g.C]}")
            continue
        _apply(state, g)
        n += 1
        consumed |= set(g.C)
        if g.t > 0:
            absorbed |= set(g.X)
        else:
            as_x |= set(g.X)
    return n


def find_atomic_covers(data, seed_skeleton: Skeleton, alpha: float = DEFAULT_ALPHA,
                       k_max: int = DEFAULT_K_MAX, budget: int = DEFAULT_BUDGET) -> DiscoveryState:
    """Search for atomic covers. ``data`` is a Dataset, Moments or a rank oracle."""
    oracle = _oracle(data, alpha)
    state = DiscoveryState.initial(seed_skeleton)
    counter = _Budget(budget)
    k = 1
    while k <= k_max:
        groups = _sweep(state, oracle, k, counter)
        if groups and _accept_batch(state, groups):
            k = 1
        else:
            k += 1
    return state


# --------------------------------------------------------------------------
# Cluster refinement


def refine_clusters(data, state: DiscoveryState, alpha: float = DEFAULT_ALPHA,
                    max_rounds: int = 10) -> DiscoveryState:
    """Split multi-latent covers whose children separate into lower-rank halves."""
    oracle = _oracle(data, alpha)
    for _ in range(max_rounds):
        if not _refine_once(oracle, state):
            return state
    state.flags.append("refinement did not stabilise")
    return state


def _refine_once(oracle: RankOracle, state: DiscoveryState) -> bool:
    for cl in list(state.recorded_clusters):
        V = cl.cover
        if state.kind(V) != "latent" or len(V) < 2:
            continue
        children = list(cl.children)
        lat = sorted(V.members)
        k = len(lat)
        for k1 in range(1, k):
            k2 = k - k1
            for r in range(k1 + 1, len(children) - k2):
                for H1 in itertools.combinations(children, r):
                    H2 = tuple(c for c in children if c not in H1)
                    if len(H2) <= k2:
                        continue
                    if _half_ok(oracle, state, H1, k1) and _half_ok(oracle, state, H2, k2):
                        _split(oracle, state, cl, [(lat[:k1], H1), (lat[k1:], H2)])
                        return True
    return False


def _half_ok(oracle: RankOracle, state: DiscoveryState, H, ki: int) -> bool:
    """``ki`` latents explain ``H``: every ``ki + 1`` rows of it are rank deficient
    against the rest of the half plus everything outside."""
    rows = [state.representative(c) for c in H]
    excl = state.measured_descendants(H) | {m for c in H for m in c.members}
    cols = [v for v in state.observed if v not in excl]
    if len(rows) + len(cols) <= 2 * ki + 1:
        return False
    if cols and oracle.rank(rows, cols) > ki:
        return False
    for sub in itertools.combinations(rows, ki + 1):
        rest = [r for r in rows if r not in sub] + cols
        if oracle.rank(list(sub), rest) > ki:
            return False
    return True


def _split(oracle: RankOracle, state: DiscoveryState, cl: RecordedCluster, halves) -> None:
    V = cl.cover
    new_covers = []
    state.recorded_clusters.remove(cl)
    state.edges = {(p, c) for p, c in state.edges if p not in V.members}
    g = state.current_graph
    parents = [e for e in g.edges if e.child == V]
    g.edges = [e for e in g.edges if e.parent != V and e.child != V]
    g.covers = [c for c in g.covers if c != V]
    for lats, H in halves:
        W = Cover(lats)
        new_covers.append(W)
        for c in H:
            g.add_edge(W, c)
            state.edges |= {(p, m) for p in W.members for m in c.members}
        for e in parents:
            g.add_edge(e.parent, W, e.orientation)
        state.recorded_clusters.append(RecordedCluster(tuple(H), W, len(lats), "latent"))
    if V in state.active:
        state.active.remove(V)
        state.active += new_covers
    (l1, h1), (l2, h2) = halves
    r1 = [state.representative(c) for c in h1]
    r2 = [state.representative(c) for c in h2]
    if oracle.rank(r1, r2) > 0:
        g.add_edge(new_covers[0], new_covers[1], Orientation.UNDIRECTED)
        state.edges |= {(a, b) for a in l1 for b in l2}
    state.trace.append({
        "step": len(state.trace) + 1,
        "kind": "split",
        "cover": sorted(V.members),
        "into": [sorted(l1), sorted(l2)],
    })
