"""Graphs over observed and latent variables, and brute-force graphical oracles.

The oracles here (treks, t-separation, d-separation, pure children, atomic
covers) are exhaustive and meant for small graphs in tests and simulations.
Anything above ``MAX_ORACLE_VERTICES`` raises :class:`GraphTooLargeError`
unless the caller raises the bound explicitly.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator, Mapping, Sequence, Union

MAX_ORACLE_VERTICES = 12


class GraphError(ValueError):
    pass


class CycleError(GraphError):
    pass


class UnknownVariableError(GraphError, KeyError):
    pass


class GraphTooLargeError(GraphError):
    pass


class Kind(str, Enum):
    OBSERVED = "observed"
    LATENT = "latent"


@dataclass(frozen=True, order=True)
class VariableId:
    id: int
    kind: Kind = field(compare=False)
    name: str = field(compare=False)

    @property
    def observed(self) -> bool:
        return self.kind is Kind.OBSERVED

    def __repr__(self) -> str:
        return self.name


VarKey = Union[VariableId, str, int]


class DirectedGraph:
    """Immutable DAG over :class:`VariableId` vertices.

    Vertices can be referred to by ``VariableId``, by name or by integer id
    in every method. Acyclicity is checked on construction.
    """

    def __init__(self, vertices: Iterable[VariableId], edges: Iterable[tuple[VariableId, VariableId]] = ()):
        vs = sorted(set(vertices))
        ids = [v.id for v in vs]
        names = [v.name for v in vs]
        if len(set(ids)) != len(ids):
            raise GraphError("duplicate vertex ids")
        if len(set(names)) != len(names):
            raise GraphError("duplicate vertex names")
        self._vertices: tuple[VariableId, ...] = tuple(vs)
        self._by_name = {v.name: v for v in vs}
        self._by_id = {v.id: v for v in vs}
        parents: dict[VariableId, set[VariableId]] = {v: set() for v in vs}
        children: dict[VariableId, set[VariableId]] = {v: set() for v in vs}
        edge_set = set()
        for p, c in edges:
            p, c = self.vertex(p), self.vertex(c)
            if p == c:
                raise GraphError(f"self-loop on {p.name}")
            edge_set.add((p, c))
            parents[c].add(p)
            children[p].add(c)
        self._edges = tuple(sorted(edge_set))
        self._parents = {v: frozenset(s) for v, s in parents.items()}
        self._children = {v: frozenset(s) for v, s in children.items()}
        self._topo = self._toposort()

    @classmethod
    def from_names(
        cls,
        observed: Sequence[str],
        latent: Sequence[str] = (),
        edges: Iterable[tuple[str, str]] = (),
    ) -> "DirectedGraph":
        """Build a graph from names; ids follow the order observed, then latent."""
        vs = [VariableId(i, Kind.OBSERVED, n) for i, n in enumerate(observed)]
        vs += [VariableId(len(observed) + i, Kind.LATENT, n) for i, n in enumerate(latent)]
        g = cls(vs)
        return cls(vs, [(g.vertex(a), g.vertex(b)) for a, b in edges])

    def _toposort(self) -> tuple[VariableId, ...]:
        indeg = {v: len(self._parents[v]) for v in self._vertices}
        ready = sorted(v for v, d in indeg.items() if d == 0)
        order = []
        while ready:
            v = ready.pop(0)
            order.append(v)
            for c in sorted(self._children[v]):
                indeg[c] -= 1
                if indeg[c] == 0:
                    ready.append(c)
            ready.sort()
        if len(order) != len(self._vertices):
            raise CycleError("graph contains a directed cycle")
        return tuple(order)

    # -- lookup ---------------------------------------------------------
    def vertex(self, key: VarKey) -> VariableId:
        if isinstance(key, VariableId):
            if self._by_id.get(key.id) != key or self._by_id[key.id].name != key.name:
                raise UnknownVariableError(key.name)
            return self._by_id[key.id]
        if isinstance(key, str):
            try:
                return self._by_name[key]
            except KeyError:
                raise UnknownVariableError(key) from None
        try:
            return self._by_id[int(key)]
        except (KeyError, ValueError, TypeError):
            raise UnknownVariableError(str(key)) from None

    def __contains__(self, key) -> bool:
        try:
            self.vertex(key)
        except UnknownVariableError:
            return False
        return True

    def __len__(self) -> int:
        return len(self._vertices)

    @property
    def vertices(self) -> tuple[VariableId, ...]:
        return self._vertices

    @property
    def edges(self) -> tuple[tuple[VariableId, VariableId], ...]:
        return self._edges

    @property
    def observed(self) -> tuple[VariableId, ...]:
        return tuple(v for v in self._vertices if v.observed)

    @property
    def latent(self) -> tuple[VariableId, ...]:
        return tuple(v for v in self._vertices if not v.observed)

    @property
    def topological_order(self) -> tuple[VariableId, ...]:
        return self._topo

    def names(self, vs: Iterable[VarKey]) -> list[str]:
        return [self.vertex(v).name for v in vs]

    def parents(self, v: VarKey) -> frozenset[VariableId]:
        return self._parents[self.vertex(v)]

    def children(self, v: VarKey) -> frozenset[VariableId]:
        return self._children[self.vertex(v)]

    def neighbours(self, v: VarKey) -> frozenset[VariableId]:
        v = self.vertex(v)
        return self._parents[v] | self._children[v]

    def has_edge(self, p: VarKey, c: VarKey) -> bool:
        return self.vertex(p) in self._parents[self.vertex(c)]

    def descendants(self, v: VarKey) -> frozenset[VariableId]:
        """Vertices reachable from ``v`` by a directed path, ``v`` included."""
        start = self.vertex(v)
        seen = {start}
        stack = [start]
        while stack:
            for c in self._children[stack.pop()]:
                if c not in seen:
                    seen.add(c)
                    stack.append(c)
        return frozenset(seen)

    def ancestors(self, v: VarKey) -> frozenset[VariableId]:
        """Vertices with a directed path into ``v``, ``v`` included."""
        start = self.vertex(v)
        seen = {start}
        stack = [start]
        while stack:
            for p in self._parents[stack.pop()]:
                if p not in seen:
                    seen.add(p)
                    stack.append(p)
        return frozenset(seen)

    def index(self, v: VarKey) -> int:
        """Position of ``v`` in :attr:`vertices` (used for matrix layouts)."""
        return self._vertices.index(self.vertex(v))

    # -- serialization --------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "vertices": [{"id": v.id, "kind": v.kind.value, "name": v.name} for v in self._vertices],
            "edges": [[p.id, c.id] for p, c in self._edges],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "DirectedGraph":
        vs = [VariableId(int(v["id"]), Kind(v["kind"]), str(v["name"])) for v in d["vertices"]]
        by_id = {v.id: v for v in vs}
        try:
            edges = [(by_id[int(p)], by_id[int(c)]) for p, c in d.get("edges", [])]
        except KeyError as e:
            raise UnknownVariableError(str(e)) from None
        return cls(vs, edges)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, s: str) -> "DirectedGraph":
        return cls.from_dict(json.loads(s))

    def to_dot(self, name: str = "G", labels: Mapping[tuple[str, str], str] | None = None) -> str:
        lines = [f"digraph {name} {{"]
        for v in self._vertices:
            style = ' style="dashed"' if not v.observed else ""
            lines.append(f'  "{v.name}"[shape={"ellipse" if v.observed else "circle"}{style}];')
        for p, c in self._edges:
            lab = ""
            if labels and (p.name, c.name) in labels:
                lab = f' [label="{labels[(p.name, c.name)]}"]'
            lines.append(f'  "{p.name}" -> "{c.name}"{lab};')
        lines.append("}")
        return "\n".join(lines) + "\n"

    def __eq__(self, other) -> bool:
        if not isinstance(other, DirectedGraph):
            return NotImplemented
        return self._vertices == other._vertices and self._edges == other._edges

    def __hash__(self) -> int:
        return hash((self._vertices, self._edges))

    def __repr__(self) -> str:
        es = ", ".join(f"{p.name}->{c.name}" for p, c in self._edges)
        return f"DirectedGraph([{es}])"


@dataclass(frozen=True)
class Cover:
    """Non-empty set of variables, compared by member set."""

    members: frozenset

    def __init__(self, members: Iterable):
        ms = frozenset(members)
        if not ms:
            raise GraphError("a cover must be non-empty")
        object.__setattr__(self, "members", ms)

    def __iter__(self) -> Iterator:
        return iter(sorted(self.members, key=_sort_key))

    def __len__(self) -> int:
        return len(self.members)

    def __contains__(self, item) -> bool:
        return item in self.members

    def __lt__(self, other: "Cover") -> bool:
        return _cover_key(self) < _cover_key(other)

    def __repr__(self) -> str:
        return "{" + ",".join(_name(m) for m in self) + "}"


def _name(m) -> str:
    return m.name if isinstance(m, VariableId) else str(m)


def _sort_key(m):
    if isinstance(m, VariableId):
        return (0, m.id, m.name)
    return (1, 0, str(m))


def _cover_key(c: Cover):
    return tuple(_sort_key(m) for m in c)


def effective_cardinality(covers: Iterable[Cover]) -> int:
    """``||covers||``: size of the union of member sets."""
    u: set = set()
    for c in covers:
        u |= c.members
    return len(u)


def sep(xs: Iterable) -> frozenset[Cover]:
    """Expand a set of observed variables into singleton covers."""
    return frozenset(Cover([x]) for x in xs)


@dataclass(frozen=True)
class Trek:
    source: VariableId
    left_path: tuple[VariableId, ...]
    right_path: tuple[VariableId, ...]

    @property
    def sinks(self) -> tuple[VariableId, VariableId]:
        return self.left_path[-1], self.right_path[-1]

    def mirrored(self) -> "Trek":
        return Trek(self.source, self.right_path, self.left_path)


# --------------------------------------------------------------------------
# Oracles


def _check_size(g: DirectedGraph, max_vertices: int | None) -> None:
    bound = MAX_ORACLE_VERTICES if max_vertices is None else max_vertices
    if len(g) > bound:
        raise GraphTooLargeError(f"{len(g)} vertices exceeds the oracle bound of {bound}")


def _paths_from(g: DirectedGraph, src: VariableId, dst: VariableId) -> list[tuple[VariableId, ...]]:
    if dst not in g.descendants(src):
        return []
    out: list[tuple[VariableId, ...]] = []

    def walk(v, path):
        if v == dst:
            out.append(tuple(path))
            return
        for c in sorted(g.children(v)):
            if dst in g.descendants(c):
                path.append(c)
                walk(c, path)
                path.pop()

    walk(src, [src])
    return out


def enumerate_treks(g: DirectedGraph, x: VarKey, y: VarKey) -> list[Trek]:
    """All treks from ``x`` to ``y`` in deterministic (id-lexicographic) order."""
    x, y = g.vertex(x), g.vertex(y)
    out = []
    for s in sorted(g.ancestors(x) & g.ancestors(y)):
        for lp in _paths_from(g, s, x):
            for rp in _paths_from(g, s, y):
                out.append(Trek(s, lp, rp))
    out.sort(key=lambda t: ([v.id for v in t.left_path], [v.id for v in t.right_path]))
    return out


def _mask(g: DirectedGraph, vs: Iterable[VariableId]) -> int:
    m = 0
    for v in vs:
        m |= 1 << g.index(v)
    return m


def trek_masks(g: DirectedGraph, A: Iterable[VarKey], B: Iterable[VarKey]) -> list[tuple[int, int]]:
    """Minimal (left, right) vertex bitmasks of all treks from A to B."""
    masks = set()
    for a in {g.vertex(v) for v in A}:
        for b in {g.vertex(v) for v in B}:
            for t in enumerate_treks(g, a, b):
                masks.add((_mask(g, t.left_path), _mask(g, t.right_path)))
    # a trek whose vertex sets contain another's is blocked whenever the other is
    ms = sorted(masks, key=lambda m: (bin(m[0]).count("1") + bin(m[1]).count("1"), m))
    minimal: list[tuple[int, int]] = []
    for lm, rm in ms:
        if not any((l2 & lm) == l2 and (r2 & rm) == r2 for l2, r2 in minimal):
            minimal.append((lm, rm))
    return minimal


def t_separates(g: DirectedGraph, A, B, CA, CB) -> bool:
    """Whether (CA, CB) t-separates A from B, by explicit trek enumeration."""
    ca, cb = _mask(g, map(g.vertex, CA)), _mask(g, map(g.vertex, CB))
    return all((lm & ca) or (rm & cb) for lm, rm in trek_masks(g, A, B))


def t_separates_reach(g: DirectedGraph, A, B, CA, CB) -> bool:
    """Reachability form of :func:`t_separates`.

    An unblocked trek exists iff some vertex reaches A avoiding CA and reaches
    B avoiding CB. Used as an independent cross-check of the trek oracle.
    """
    CA = {g.vertex(v) for v in CA}
    CB = {g.vertex(v) for v in CB}

    def reach(targets, cut):
        seen = {t for t in targets if t not in cut}
        stack = list(seen)
        while stack:
            for p in g.parents(stack.pop()):
                if p not in cut and p not in seen:
                    seen.add(p)
                    stack.append(p)
        return seen

    return not (reach({g.vertex(a) for a in A}, CA) & reach({g.vertex(b) for b in B}, CB))


def min_tsep_cut(
    g: DirectedGraph,
    A: Iterable[VarKey],
    B: Iterable[VarKey],
    max_vertices: int | None = None,
) -> tuple[frozenset[VariableId], frozenset[VariableId], int]:
    """Minimum-size (C_A, C_B) t-separating A from B.

    Exhaustive over subset pairs by total size, then by ``|C_A|`` descending
    (left cuts first), then lexicographically on vertex ids.
    """
    _check_size(g, max_vertices)
    A = [g.vertex(v) for v in A]
    B = [g.vertex(v) for v in B]
    masks = trek_masks(g, A, B)
    vs = g.vertices
    n = len(vs)
    for size in range(0, n + 1):
        for na in range(size, -1, -1):
            nb = size - na
            for ca in itertools.combinations(range(n), na):
                cam = sum(1 << i for i in ca)
                rest = [(lm, rm) for lm, rm in masks if not lm & cam]
                if nb == 0:
                    if not rest:
                        return frozenset(vs[i] for i in ca), frozenset(), size
                    continue
                for cb in itertools.combinations(range(n), nb):
                    cbm = sum(1 << i for i in cb)
                    if all(rm & cbm for _, rm in rest):
                        return frozenset(vs[i] for i in ca), frozenset(vs[i] for i in cb), size
    raise AssertionError("unreachable: the full vertex set always separates")


def d_separated(g: DirectedGraph, x: VarKey, y: VarKey, Z: Iterable[VarKey] = ()) -> bool:
    """Standard d-separation via the moralized ancestral graph."""
    x, y = g.vertex(x), g.vertex(y)
    Z = {g.vertex(z) for z in Z}
    if x == y:
        raise GraphError("x and y must differ")
    if x in Z or y in Z:
        raise GraphError("x and y must not be in the conditioning set")
    anc: set[VariableId] = set()
    for v in {x, y} | Z:
        anc |= g.ancestors(v)
    adj: dict[VariableId, set[VariableId]] = {v: set() for v in anc}
    for v in anc:
        ps = [p for p in g.parents(v) if p in anc]
        for p in ps:
            adj[v].add(p)
            adj[p].add(v)
        for a, b in itertools.combinations(ps, 2):
            adj[a].add(b)
            adj[b].add(a)
    seen = {x}
    stack = [x]
    while stack:
        for w in adj[stack.pop()]:
            if w in Z or w in seen:
                continue
            if w == y:
                return False
            seen.add(w)
            stack.append(w)
    return True


def _members(g: DirectedGraph, V) -> frozenset[VariableId]:
    if isinstance(V, Cover):
        V = V.members
    return frozenset(g.vertex(v) for v in V)


def pure_children(g: DirectedGraph, V) -> frozenset[VariableId]:
    """All Y outside V whose parent set is exactly V."""
    vs = _members(g, V)
    return frozenset(y for y in g.vertices if y not in vs and g.parents(y) == vs)


def measured_descendants(g: DirectedGraph, S: Iterable) -> frozenset[VariableId]:
    """Observed variables reachable from any member of any cover in S (members included)."""
    out: set[VariableId] = set()
    for c in S:
        for v in _members(g, c):
            out |= {d for d in g.descendants(v) if d.observed}
    return frozenset(out)


def is_atomic_cover(g: DirectedGraph, V, max_vertices: int | None = None) -> bool:
    """Check the atomic-cover conditions by exhaustive enumeration."""
    _check_size(g, max_vertices)
    memo: dict[frozenset, bool] = {}
    return _atomic(g, _members(g, V), memo)


def _atomic(g: DirectedGraph, vs: frozenset, memo: dict) -> bool:
    if vs in memo:
        return memo[vs]
    memo[vs] = False  # guards recursion on the same set
    k = len(vs)
    t = sum(1 for v in vs if v.observed)
    if k == 1 and t == 1:
        memo[vs] = True
        return True
    need = k + 1 - t
    pch = sorted(pure_children(g, vs))
    nbrs = set()
    for v in vs:
        nbrs |= g.neighbours(v)
    nbrs -= vs
    # candidate atomic covers inside the pure children
    cands = []
    for r in range(1, len(pch) + 1):
        for sub in itertools.combinations(pch, r):
            s = frozenset(sub)
            if _atomic(g, s, memo):
                cands.append(s)
    ok = False
    for r in range(1, len(cands) + 1):
        for pack in itertools.combinations(cands, r):
            union: set = set()
            disjoint = True
            for s in pack:
                if union & s:
                    disjoint = False
                    break
                union |= s
            if not disjoint or len(union) < need:
                continue
            if len(nbrs - union) >= need:
                ok = True
                break
        if ok:
            break
    if ok and k > 1:
        members = sorted(vs)
        for r in range(1, k // 2 + 1):
            for part in itertools.combinations(members, r):
                v1 = frozenset(part)
                v2 = vs - v1
                if _atomic(g, v1, memo) and _atomic(g, v2, memo):
                    ok = False
                    break
            if not ok:
                break
    memo[vs] = ok
    return ok


def same_structure(truth: DirectedGraph, found: DirectedGraph, directed: bool = True,
                   undirected_pairs: Iterable[tuple[str, str]] = ()) -> bool:
    """Equal edge sets after some renaming of ``found``'s latents onto ``truth``'s.

    With ``directed=False`` edges compare as unordered pairs. Pairs listed in
    ``undirected_pairs`` (names from ``found``) compare unordered either way.
    """
    lt = sorted(v.name for v in truth.latent)
    lf = sorted(v.name for v in found.latent)
    if len(lt) != len(lf):
        return False
    loose = {frozenset(p) for p in undirected_pairs}

    def key(p, c, loose_pair):
        return frozenset((p, c)) if (not directed or loose_pair) else (p, c)

    et = [(p.name, c.name) for p, c in truth.edges]
    ef = [(p.name, c.name) for p, c in found.edges]
    for perm in itertools.permutations(lt):
        m = dict(zip(lf, perm))
        mapped = [(m.get(p, p), m.get(c, c), frozenset((p, c)) in loose) for p, c in ef]
        loose_mapped = {frozenset((a, b)) for a, b, lp in mapped if lp}
        A = {key(p, c, frozenset((p, c)) in loose_mapped) for p, c in et}
        B = {key(a, b, lp) for a, b, lp in mapped}
        if A == B:
            return True
    return False


# --------------------------------------------------------------------------
# Cover graphs


class Orientation(str, Enum):
    DIRECTED = "directed"
    UNDIRECTED = "undirected"


@dataclass(frozen=True)
class CoverEdge:
    parent: Cover
    child: Cover
    orientation: Orientation = Orientation.DIRECTED


class CoverGraph:
    """Discovery output: covers and (possibly undirected) edges between them.

    An undirected edge keeps the parent/child order it was found in, so the
    graph can still be expanded to a DAG for fitting.
    """

    def __init__(self, covers: Iterable[Cover] = (), edges: Iterable[CoverEdge] = ()):
        self.covers: list[Cover] = []
        self.edges: list[CoverEdge] = []
        for c in covers:
            self.add_cover(c)
        for e in edges:
            self.add_edge(e.parent, e.child, e.orientation)

    def add_cover(self, c: Cover) -> Cover:
        if c not in self.covers:
            self.covers.append(c)
        return c

    def add_edge(self, parent: Cover, child: Cover, orientation: Orientation = Orientation.DIRECTED) -> None:
        self.add_cover(parent)
        self.add_cover(child)
        self.edges = [e for e in self.edges if {e.parent, e.child} != {parent, child}]
        self.edges.append(CoverEdge(parent, child, orientation))
        if self._directed_cycle():
            self.edges.pop()
            raise CycleError(f"edge {parent}->{child} closes a directed cycle")

    def set_orientation(self, a: Cover, b: Cover, orientation: Orientation) -> None:
        """Orient the a/b edge as a->b (or mark it undirected, keeping a->b order)."""
        for i, e in enumerate(self.edges):
            if {e.parent, e.child} == {a, b}:
                old = self.edges[i]
                self.edges[i] = CoverEdge(a, b, orientation)
                if self._directed_cycle():
                    self.edges[i] = old
                    raise CycleError(f"orienting {a}->{b} closes a directed cycle")
                return
        raise GraphError(f"no edge between {a} and {b}")

    def edge_between(self, a: Cover, b: Cover) -> CoverEdge | None:
        for e in self.edges:
            if {e.parent, e.child} == {a, b}:
                return e
        return None

    def _directed_cycle(self) -> bool:
        succ: dict[Cover, list[Cover]] = {}
        for e in self.edges:
            succ.setdefault(e.parent, []).append(e.child)
        state: dict[Cover, int] = {}

        def visit(c) -> bool:
            state[c] = 1
            for d in succ.get(c, []):
                s = state.get(d, 0)
                if s == 1 or (s == 0 and visit(d)):
                    return True
            state[c] = 2
            return False

        return any(state.get(c, 0) == 0 and visit(c) for c in list(succ))

    def variable_edges(self) -> list[tuple]:
        """Member-level edges (each parent member -> each child member), deduplicated."""
        out = []
        for e in self.edges:
            for p in e.parent:
                for c in e.child:
                    if p != c and (p, c) not in out:
                        out.append((p, c))
        return out

    def expand(self, observed: Sequence[str], latent: Sequence[str]) -> DirectedGraph:
        """Variable-level DAG using names; undirected edges keep their recorded order."""
        edges = [(_name(p), _name(c)) for p, c in self.variable_edges()]
        return DirectedGraph.from_names(observed, latent, edges)

    def to_dict(self) -> dict:
        return {
            "covers": [sorted(_name(m) for m in c.members) for c in sorted(self.covers)],
            "edges": [
                {
                    "parent": sorted(_name(m) for m in e.parent.members),
                    "child": sorted(_name(m) for m in e.child.members),
                    "orientation": e.orientation.value,
                }
                for e in sorted(self.edges, key=lambda e: (_cover_key(e.parent), _cover_key(e.child)))
            ],
        }

    def to_dot(self, latent_names: Iterable[str] = (), name: str = "G",
               coefficients: Mapping[tuple[str, str], float] | None = None) -> str:
        latent_names = set(latent_names)
        names = sorted({_name(m) for c in self.covers for m in c.members})
        lines = [f"digraph {name} {{"]
        for n in names:
            if n in latent_names:
                lines.append(f'  "{n}"[shape=circle style="dashed"];')
            else:
                lines.append(f'  "{n}"[shape=ellipse];')
        for e in sorted(self.edges, key=lambda e: (_cover_key(e.parent), _cover_key(e.child))):
            for p in e.parent:
                for c in e.child:
                    pn, cn = _name(p), _name(c)
                    attrs = []
                    if e.orientation is Orientation.UNDIRECTED:
                        attrs.append("dir=none")
                    if coefficients and (pn, cn) in coefficients:
                        attrs.append(f'label="{coefficients[(pn, cn)]:.3f}"')
                    a = f" [{' '.join(attrs)}]" if attrs else ""
                    lines.append(f'  "{pn}" -> "{cn}"{a};')
        lines.append("}")
        return "\n".join(lines) + "\n"
