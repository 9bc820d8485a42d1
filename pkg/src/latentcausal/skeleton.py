"""Stable PC skeleton search and latent-candidate partitioning."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence, Union

from .graph import DirectedGraph, d_separated
from .simulate import Dataset
from .stats import DEFAULT_ALPHA, Moments, TestResult, kci_test, partial_corr_ci

CITest = Callable[[str, str, Sequence[str]], TestResult]
Pair = frozenset


def _pair(a: str, b: str) -> Pair:
    return frozenset((a, b))


@dataclass
class Skeleton:
    vertices: list[str]
    adjacency: set[Pair] = field(default_factory=set)
    sepsets: dict[Pair, tuple[str, ...]] = field(default_factory=dict)

    def adjacent(self, a: str, b: str) -> bool:
        return _pair(a, b) in self.adjacency

    def neighbours(self, v: str) -> list[str]:
        return sorted(u for e in self.adjacency if v in e for u in e if u != v)

    def sepset(self, a: str, b: str) -> tuple[str, ...] | None:
        return self.sepsets.get(_pair(a, b))

    def edges(self) -> list[tuple[str, str]]:
        return sorted(tuple(sorted(e)) for e in self.adjacency)

    def components(self) -> list[list[str]]:
        seen: set[str] = set()
        out = []
        for v in sorted(self.vertices):
            if v in seen:
                continue
            comp, stack = [], [v]
            seen.add(v)
            while stack:
                u = stack.pop()
                comp.append(u)
                for w in self.neighbours(u):
                    if w not in seen:
                        seen.add(w)
                        stack.append(w)
            out.append(sorted(comp))
        return out

    def to_dict(self) -> dict:
        return {
            "vertices": sorted(self.vertices),
            "edges": [list(e) for e in self.edges()],
            "sepsets": [
                {"pair": sorted(p), "sepset": list(s)}
                for p, s in sorted(self.sepsets.items(), key=lambda kv: sorted(kv[0]))
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def fisherz_selector(data: Union[Dataset, Moments], alpha: float) -> CITest:
    m = data if isinstance(data, Moments) else Moments.from_dataset(data)
    return lambda x, y, S: partial_corr_ci(m, x, y, S, alpha)


def kci_selector(data: Dataset, alpha: float, cap: int = 2000, seed: int = 0) -> CITest:
    return lambda x, y, S: kci_test(data, x, y, S, alpha, cap=cap, subsample=True, seed=seed)


def dsep_oracle(g: DirectedGraph) -> CITest:
    """CI 'test' that answers from d-separation in a known graph."""

    def test(x, y, S):
        ind = d_separated(g, x, y, S)
        return TestResult(0.0, 1.0 if ind else 0.0, not ind, len(S))

    return test


def pc_skeleton(data: Union[Dataset, Moments, None], ci: Union[str, CITest] = "fisherz",
                alpha: float = DEFAULT_ALPHA, max_cond: int = 3,
                vertices: Sequence[str] | None = None) -> Skeleton:
    """Order-independent (stable) PC adjacency search.

    Conditioning sets at level ``l`` are drawn from the adjacency snapshot
    taken at the start of the level, and removals are applied when the level
    ends, so the result does not depend on column order.
    """
    if vertices is None:
        if data is None:
            raise ValueError("need data or an explicit vertex list")
        vertices = list(data.columns)
    if isinstance(ci, str):
        if ci == "fisherz":
            test = fisherz_selector(data, alpha)
        elif ci == "kci":
            test = kci_selector(data, alpha)
        else:
            raise ValueError(f"unknown CI test {ci!r}")
    else:
        test = ci
    vs = sorted(vertices)
    adj = {_pair(a, b) for a, b in itertools.combinations(vs, 2)}
    sepsets: dict[Pair, tuple[str, ...]] = {}
    for level in range(max_cond + 1):
        snap = {v: sorted(u for e in adj if v in e for u in e if u != v) for v in vs}
        if all(len(snap[v]) - 1 < level for v in vs):
            break
        removed: dict[Pair, tuple[str, ...]] = {}
        for x, y in itertools.combinations(vs, 2):
            p = _pair(x, y)
            if p not in adj:
                continue
            found = None
            for a, b in ((x, y), (y, x)):
                cands = [u for u in snap[a] if u != b]
                for S in itertools.combinations(cands, level):
                    if not test(a, b, list(S)).reject:
                        found = tuple(S)
                        break
                if found is not None:
                    break
            if found is not None:
                removed[p] = found
        adj -= set(removed)
        sepsets.update(removed)
    return Skeleton(list(vertices), adj, sepsets)


def _density(s: Skeleton, vs: Sequence[str]) -> float:
    m = len(vs)
    if m < 2:
        return 0.0
    e = sum(1 for a, b in itertools.combinations(vs, 2) if s.adjacent(a, b))
    return e / (m * (m - 1) / 2)


def _peel(s: Skeleton, vs: list[str], min_density: float, out: list[frozenset]) -> list[str]:
    """Greedy densest-core extraction; returns vertices left unassigned."""
    core = sorted(vs)
    while len(core) >= 3 and _density(s, core) < min_density:
        deg = {v: sum(1 for u in core if u != v and s.adjacent(u, v)) for v in core}
        drop = min(core, key=lambda v: (deg[v], v))
        core.remove(drop)
    if len(core) >= 3 and _density(s, core) >= min_density:
        out.append(frozenset(core))
        rest = [v for v in vs if v not in core]
        leftovers = []
        for comp in Skeleton(rest, {e for e in s.adjacency if e <= set(rest)}).components():
            leftovers += _peel(s, comp, min_density, out)
        return leftovers
    return list(vs)


def partition_latent_candidates(s: Skeleton, min_density: float = 0.8) -> list[frozenset]:
    """Dense vertex sets that may hide a latent confounder.

    Every vertex lies in at most one returned set; the remainder is the
    no-latent residual (see :func:`residual_vertices`).
    """
    out: list[frozenset] = []
    for comp in s.components():
        _peel(s, comp, min_density, out)
    return sorted(out, key=lambda c: sorted(c))


def residual_vertices(s: Skeleton, candidates: Iterable[frozenset]) -> frozenset:
    used = set().union(*candidates) if candidates else set()
    return frozenset(v for v in s.vertices if v not in used)


def orient_colliders(s: Skeleton) -> tuple[set[tuple[str, str]], set[Pair]]:
    """Orient unshielded colliders x -> z <- y when z is outside sepset(x, y).

    Returns (directed edges, remaining undirected pairs). Conflicting
    orientations leave the edge undirected.
    """
    arrows: set[tuple[str, str]] = set()
    for z in sorted(s.vertices):
        nb = s.neighbours(z)
        for x, y in itertools.combinations(nb, 2):
            if s.adjacent(x, y):
                continue
            sep = s.sepset(x, y)
            if sep is not None and z not in sep:
                arrows.add((x, z))
                arrows.add((y, z))
    conflicts = {(a, b) for a, b in arrows if (b, a) in arrows}
    arrows -= conflicts
    directed = {_pair(a, b) for a, b in arrows}
    undirected = {e for e in s.adjacency if e not in directed}
    return arrows, undirected
