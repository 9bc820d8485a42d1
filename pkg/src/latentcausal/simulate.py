"""Ground-truth generators: latent linear SCMs, VAR(1) processes, aggregation.

Also holds :class:`Dataset`, the labelled sample matrix passed around the
whole package, with its CSV round-trip.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import kernels
from .graph import DirectedGraph, GraphError, Kind, VariableId


class NoiseFamily(str, Enum):
    GAUSSIAN = "gaussian"
    UNIFORM = "uniform"
    LAPLACE = "laplace"


def draw_noise(family: NoiseFamily, size, rng: np.random.Generator) -> np.ndarray:
    """Unit-variance, zero-mean draws from ``family``."""
    family = NoiseFamily(family)
    if family is NoiseFamily.GAUSSIAN:
        return rng.standard_normal(size)
    if family is NoiseFamily.UNIFORM:
        return rng.uniform(-np.sqrt(3.0), np.sqrt(3.0), size)
    return rng.laplace(0.0, 1.0 / np.sqrt(2.0), size)


class StationarityError(ValueError):
    pass


class SingularityError(ArithmeticError):
    pass


# --------------------------------------------------------------------------
# Dataset


@dataclass
class Dataset:
    columns: list[str]
    samples: np.ndarray
    time_index: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.columns = [str(c) for c in self.columns]
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim == 1:
            self.samples = self.samples[:, None]
        if self.samples.ndim != 2 or self.samples.shape[1] != len(self.columns):
            raise ValueError(f"samples shape {self.samples.shape} does not match {len(self.columns)} columns")
        if len(set(self.columns)) != len(self.columns):
            raise ValueError("duplicate column names")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples contain non-finite entries")
        if self.time_index is not None:
            self.time_index = np.asarray(self.time_index)
            if self.time_index.shape != (self.samples.shape[0],):
                raise ValueError("time_index length does not match the number of rows")
            if self.time_index.size > 1 and not np.all(np.diff(self.time_index.astype(float)) > 0):
                raise ValueError("time_index must be strictly increasing")

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def d(self) -> int:
        return self.samples.shape[1]

    def col(self, name: str) -> np.ndarray:
        return self.samples[:, self.columns.index(name)]

    def indices(self, names: Iterable[str]) -> list[int]:
        try:
            return [self.columns.index(c) for c in names]
        except ValueError as e:
            raise KeyError(str(e)) from None

    def select(self, names: Sequence[str]) -> "Dataset":
        return Dataset(list(names), self.samples[:, self.indices(names)], self.time_index, dict(self.meta))

    def rows(self, start: int, stop: int) -> "Dataset":
        ti = None if self.time_index is None else self.time_index[start:stop]
        return Dataset(list(self.columns), self.samples[start:stop], ti, dict(self.meta))

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        with_t = self.time_index is not None
        w.writerow((["t"] if with_t else []) + self.columns)
        for i in range(self.n):
            row = [repr(float(v)) for v in self.samples[i]]
            if with_t:
                row.insert(0, str(self.time_index[i]))
            w.writerow(row)
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path_or_text, text: bool = False) -> "Dataset":
        src = path_or_text if text else Path(path_or_text).read_text()
        rows = list(csv.reader(io.StringIO(src)))
        if not rows:
            raise ValueError("empty CSV")
        header, body = rows[0], [r for r in rows[1:] if r]
        t = None
        if header and header[0] == "t":
            t = np.array([int(r[0]) if r[0].lstrip("-").isdigit() else float(r[0]) for r in body])
            header = header[1:]
            body = [r[1:] for r in body]
        data = np.array([[float(v) for v in r] for r in body], dtype=float).reshape(len(body), len(header))
        return cls(header, data, t)


# --------------------------------------------------------------------------
# Latent linear SCM


class LatentLinearSCM:
    """Linear SCM ``V = A V + eps`` over a DAG with observed and latent vertices.

    ``A[i, j]`` is the coefficient of edge ``j -> i`` where indices follow
    ``graph.vertices``.
    """

    def __init__(self, graph: DirectedGraph, A: np.ndarray, psi: np.ndarray,
                 noise: Sequence[NoiseFamily] | NoiseFamily = NoiseFamily.GAUSSIAN):
        p = len(graph)
        A = np.asarray(A, dtype=float)
        psi = np.asarray(psi, dtype=float)
        if A.shape != (p, p) or psi.shape != (p,):
            raise GraphError("A must be |V|x|V| and psi length |V|")
        support = np.zeros((p, p), dtype=bool)
        for par, ch in graph.edges:
            support[graph.index(ch), graph.index(par)] = True
        if not np.array_equal(A != 0, support):
            raise GraphError("nonzero pattern of A does not match the graph edges")
        if np.any(psi <= 0):
            raise GraphError("noise variances must be positive")
        if isinstance(noise, (str, NoiseFamily)):
            noise = [NoiseFamily(noise)] * p
        noise = tuple(NoiseFamily(f) for f in noise)
        if len(noise) != p:
            raise GraphError("need one noise family per variable")
        self.graph = graph
        self.A = A
        self.psi = psi
        self.noise = noise

    @classmethod
    def from_edges(cls, observed: Sequence[str], latent: Sequence[str],
                   coefs: Mapping[tuple[str, str], float],
                   psi: Mapping[str, float] | float = 1.0,
                   noise: Mapping[str, str] | str = NoiseFamily.GAUSSIAN) -> "LatentLinearSCM":
        g = DirectedGraph.from_names(observed, latent, list(coefs))
        p = len(g)
        A = np.zeros((p, p))
        for (a, b), w in coefs.items():
            A[g.index(b), g.index(a)] = w
        if isinstance(psi, Mapping):
            ps = np.array([float(psi.get(v.name, 1.0)) for v in g.vertices])
        else:
            ps = np.full(p, float(psi))
        if isinstance(noise, Mapping):
            nz = [NoiseFamily(noise.get(v.name, NoiseFamily.GAUSSIAN)) for v in g.vertices]
        else:
            nz = [NoiseFamily(noise)] * p
        return cls(g, A, ps, nz)

    @property
    def observed_names(self) -> list[str]:
        return [v.name for v in self.graph.observed]

    @property
    def latent_names(self) -> list[str]:
        return [v.name for v in self.graph.latent]

    def coef(self, parent: str, child: str) -> float:
        return float(self.A[self.graph.index(child), self.graph.index(parent)])

    def to_dict(self) -> dict:
        g = self.graph
        return {
            "vertices": [{"id": v.id, "kind": v.kind.value, "name": v.name} for v in g.vertices],
            "edges": [{"from": p.name, "to": c.name, "coef": self.coef(p.name, c.name)} for p, c in g.edges],
            "psi": {v.name: float(self.psi[i]) for i, v in enumerate(g.vertices)},
            "noise": {v.name: self.noise[i].value for i, v in enumerate(g.vertices)},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "LatentLinearSCM":
        vs = [VariableId(int(v["id"]), Kind(v["kind"]), v["name"]) for v in d["vertices"]]
        by_name = {v.name: v for v in vs}
        edges = d.get("edges", [])
        g = DirectedGraph(vs, [(by_name[e["from"]], by_name[e["to"]]) for e in edges])
        p = len(g)
        A = np.zeros((p, p))
        for e in edges:
            A[g.index(e["to"]), g.index(e["from"])] = float(e["coef"])
        psi, noise = d.get("psi", 1.0), d.get("noise", NoiseFamily.GAUSSIAN)
        if isinstance(psi, Mapping):
            psi = np.array([float(psi.get(v.name, 1.0)) for v in g.vertices])
        else:
            psi = np.full(p, float(psi))
        if isinstance(noise, Mapping):
            noise = [NoiseFamily(noise.get(v.name, NoiseFamily.GAUSSIAN)) for v in g.vertices]
        return cls(g, A, psi, noise)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, s: str) -> "LatentLinearSCM":
        return cls.from_dict(json.loads(s))


def _mixing(scm: LatentLinearSCM) -> np.ndarray:
    p = len(scm.graph)
    M = np.eye(p) - scm.A
    if abs(np.linalg.det(M)) < 1e-300:
        raise SingularityError("I - A is singular")
    return np.linalg.inv(M)


def model_covariance(scm: LatentLinearSCM) -> np.ndarray:
    """Implied covariance ``(I-A)^{-1} Psi (I-A)^{-T}`` over ``graph.vertices``."""
    B = _mixing(scm)
    S = B @ np.diag(scm.psi) @ B.T
    return 0.5 * (S + S.T)


def covariance_block(scm: LatentLinearSCM, rows: Sequence[str], cols: Sequence[str],
                     cov: np.ndarray | None = None) -> np.ndarray:
    S = model_covariance(scm) if cov is None else cov
    g = scm.graph
    return S[np.ix_([g.index(r) for r in rows], [g.index(c) for c in cols])]


def sample_scm(scm: LatentLinearSCM, n: int, seed: int | None = None,
               include_latent: bool = False) -> Dataset:
    """Draw ``n`` i.i.d. rows; observed columns only unless ``include_latent``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    g = scm.graph
    p = len(g)
    eps = np.empty((n, p))
    for i in range(p):
        eps[:, i] = np.sqrt(scm.psi[i]) * draw_noise(scm.noise[i], n, rng)
    V = np.empty((n, p))
    for v in g.topological_order:
        i = g.index(v)
        V[:, i] = eps[:, i]
        for par in g.parents(v):
            j = g.index(par)
            V[:, i] += scm.A[i, j] * V[:, j]
    names = [v.name for v in g.vertices if v.observed]
    if include_latent:
        names += [v.name for v in g.vertices if not v.observed]
    idx = [g.index(nm) for nm in names]
    return Dataset(names, V[:, idx])


def random_dag(n_vertices: int, edge_prob: float, rng: np.random.Generator,
               n_latent: int = 0) -> DirectedGraph:
    """Random DAG over a random causal order; ``n_latent`` vertices are latent."""
    names = [f"X{i + 1}" for i in range(n_vertices - n_latent)] + [f"L{i + 1}" for i in range(n_latent)]
    order = [names[i] for i in rng.permutation(n_vertices)]
    edges = [
        (order[i], order[j])
        for i in range(n_vertices)
        for j in range(i + 1, n_vertices)
        if rng.random() < edge_prob
    ]
    return DirectedGraph.from_names(names[: n_vertices - n_latent], names[n_vertices - n_latent:], edges)


def random_coefficients(graph: DirectedGraph, rng: np.random.Generator,
                        low: float = 0.5, high: float = 2.0) -> dict[tuple[str, str], float]:
    """Edge weights with magnitude in [low, high] and random sign."""
    return {
        (p.name, c.name): float(rng.uniform(low, high) * rng.choice([-1.0, 1.0]))
        for p, c in graph.edges
    }


def random_scm(graph: DirectedGraph, rng: np.random.Generator, low: float = 0.5, high: float = 2.0,
               psi_range: tuple[float, float] = (0.5, 1.5),
               noise: NoiseFamily | str = NoiseFamily.GAUSSIAN) -> LatentLinearSCM:
    coefs = random_coefficients(graph, rng, low, high)
    psi = np.array([rng.uniform(*psi_range) for _ in graph.vertices])
    p = len(graph)
    A = np.zeros((p, p))
    for (a, b), w in coefs.items():
        A[graph.index(b), graph.index(a)] = w
    return LatentLinearSCM(graph, A, psi, noise)


# --------------------------------------------------------------------------
# VAR(1) and temporal aggregation


class VarProcess:
    """``X_t = A X_{t-1} + e_t`` with independent per-component noise."""

    def __init__(self, A_lag, noise: Sequence[NoiseFamily] | NoiseFamily = NoiseFamily.GAUSSIAN,
                 initial_state=None, psi=None):
        A = np.atleast_2d(np.asarray(A_lag, dtype=float))
        d = A.shape[0]
        if A.shape != (d, d):
            raise ValueError("A_lag must be square")
        rho = float(np.max(np.abs(np.linalg.eigvals(A)))) if d else 0.0
        if rho >= 1.0:
            raise StationarityError(f"spectral radius {rho:.4f} >= 1")
        if isinstance(noise, (str, NoiseFamily)):
            noise = [NoiseFamily(noise)] * d
        self.A_lag = A
        self.noise = tuple(NoiseFamily(f) for f in noise)
        self.initial_state = np.zeros(d) if initial_state is None else np.asarray(initial_state, dtype=float)
        self.psi = np.ones(d) if psi is None else np.asarray(psi, dtype=float)
        if len(self.noise) != d or self.initial_state.shape != (d,) or self.psi.shape != (d,):
            raise ValueError("noise, initial_state and psi must have one entry per component")

    @property
    def dim(self) -> int:
        return self.A_lag.shape[0]


def simulate_var(p: VarProcess, T: int, seed: int | None = None, burn_in: int = 1000,
                 names: Sequence[str] | None = None) -> Dataset:
    if T < 1:
        raise ValueError("T must be >= 1")
    rng = np.random.default_rng(seed)
    d = p.dim
    total = T + burn_in
    noise = np.empty((total, d))
    for i in range(d):
        noise[:, i] = np.sqrt(p.psi[i]) * draw_noise(p.noise[i], total, rng)
    X = kernels.var_recursion(p.A_lag, noise, p.initial_state)[burn_in:]
    names = list(names) if names is not None else [f"X{i + 1}" for i in range(d)]
    return Dataset(names, X, np.arange(T))


def aggregate(data: Dataset, k: int) -> Dataset:
    """Average every ``k`` consecutive rows; a trailing partial block is dropped."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > data.n:
        raise ValueError(f"aggregation factor {k} exceeds the {data.n} available rows")
    m = data.n // k
    X = data.samples[: m * k].reshape(m, k, data.d).mean(axis=1)
    ti = None if data.time_index is None else data.time_index[: m * k : k]
    return Dataset(list(data.columns), X, ti, dict(data.meta))
