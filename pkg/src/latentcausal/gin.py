"""Direction finding between latent covers with the GIN condition.

For observed sets ``Y`` and ``Z`` with ``|Y| > |Z|``, take ``omega`` with
``omega^T E[Y Z^T] = 0``. The pair satisfies the condition when the
surrogate ``omega^T Y`` is independent of ``Z``. Under non-Gaussian noise,
``Vp -> Vq`` is indicated when the condition holds for ``Z`` = some pure
children of ``Vp`` and ``Y`` = other pure children of ``Vp`` together with
pure children of ``Vq``, and fails the other way round.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .graph import CoverGraph, CycleError, Orientation, Cover
from .simulate import Dataset
from .stats import DEFAULT_ALPHA, HSIC_SAMPLE_CAP, hsic_independence

log = logging.getLogger(__name__)

DEGENERACY_TOL = 1e-6


class RankDegenerateError(ArithmeticError):
    pass


@dataclass
class GinQuery:
    Z: list[str]
    Y: list[str]
    omega: np.ndarray
    surrogate: np.ndarray | None = field(default=None, repr=False)


def gin_surrogate(data: Dataset, Z, Y) -> GinQuery:
    Z, Y = list(Z), list(Y)
    if len(Y) < len(Z) + 1:
        raise ValueError("need |Y| >= |Z| + 1")
    if data.n < 100:
        raise ValueError("need at least 100 rows")
    Ys = data.samples[:, data.indices(Y)]
    Yc = Ys - Ys.mean(axis=0)
    cy = np.linalg.cond(Yc.T @ Yc)
    if not np.isfinite(cy) or cy > 1e12:
        raise RankDegenerateError("Y columns are collinear")
    if not Z:
        omega = np.zeros(len(Y))
        omega[0] = 1.0
        return GinQuery(Z, Y, omega, Ys @ omega)
    Zs = data.samples[:, data.indices(Z)]
    Zc = Zs - Zs.mean(axis=0)
    M = Yc.T @ Zc / (data.n - 1)  # |Y| x |Z|
    _, s, vt = np.linalg.svd(M.T)  # rows of vt span R^|Y|
    s_full = np.zeros(len(Y))
    s_full[: s.size] = s
    # more than one (near-)zero singular direction means omega is not unique
    if len(Y) - np.sum(s_full > DEGENERACY_TOL * max(s_full[0], 1e-300)) > 1:
        raise RankDegenerateError("null space of E[YZ^T] is multidimensional")
    omega = vt[-1]
    omega = omega / np.linalg.norm(omega)
    if omega[np.argmax(np.abs(omega))] < 0:
        omega = -omega
    return GinQuery(Z, Y, omega, Ys @ omega)


def gin_pvalues(data: Dataset, Z, Y, permutations: int = 200, seed: int = 0,
                max_samples: int = HSIC_SAMPLE_CAP) -> list[float]:
    q = gin_surrogate(data, Z, Y)
    return [
        hsic_independence(q.surrogate, data.col(z), permutations=permutations, seed=seed,
                          max_samples=max_samples).p_value
        for z in q.Z
    ]


def gin_holds(data: Dataset, Z, Y, alpha: float = DEFAULT_ALPHA, permutations: int = 200,
              seed: int = 0, max_samples: int = HSIC_SAMPLE_CAP) -> bool:
    """Surrogate independent of every Z column (Bonferroni over ``|Z|``)."""
    Z = list(Z)
    if not Z:
        return True
    ps = gin_pvalues(data, Z, Y, permutations, seed, max_samples)
    return all(p >= alpha / len(Z) for p in ps)


# --------------------------------------------------------------------------


@dataclass
class PairReport:
    a: list[str]
    b: list[str]
    forward: list[float]  # a -> b test
    backward: list[float]
    decision: str

    def to_dict(self) -> dict:
        return {"a": self.a, "b": self.b, "forward_p": self.forward,
                "backward_p": self.backward, "decision": self.decision}


def pure_observed_children(structure: CoverGraph, V: Cover, observed) -> list[str]:
    """Observed variables whose parent set (member level) is exactly ``V``."""
    parents: dict[str, set] = {}
    for p, c in structure.variable_edges():
        parents.setdefault(str(c), set()).add(str(p))
    vm = {str(m) for m in V.members}
    return sorted(y for y, ps in parents.items() if y in observed and ps == vm and y not in vm)


def _has_latent(c: Cover, observed) -> bool:
    return any(str(m) not in observed for m in c.members)


def orient_all(structure: CoverGraph, data: Dataset, alpha: float = DEFAULT_ALPHA,
               permutations: int = 200, seed: int = 0,
               max_samples: int = HSIC_SAMPLE_CAP) -> tuple[CoverGraph, list[PairReport]]:
    """Orient edges between latent covers; returns a new graph and a per-pair report."""
    observed = set(data.columns)
    out = CoverGraph(structure.covers, structure.edges)
    report: list[PairReport] = []
    for e in list(structure.edges):
        a, b = e.parent, e.child
        if not (_has_latent(a, observed) and _has_latent(b, observed)):
            continue
        ca = pure_observed_children(structure, a, observed)
        cb = pure_observed_children(structure, b, observed)
        an, bn = sorted(map(str, a.members)), sorted(map(str, b.members))
        if len(ca) < 2 * len(a) or len(cb) < 2 * len(b):
            log.warning("pair %s / %s lacks 2|V| pure children; left as found", an, bn)
            report.append(PairReport(an, bn, [], [], "skipped-insufficient-children"))
            continue
        try:
            fwd = _direction(data, ca, cb, len(a), len(b), permutations, seed, max_samples)
            bwd = _direction(data, cb, ca, len(b), len(a), permutations, seed, max_samples)
        except RankDegenerateError as err:
            out.set_orientation(a, b, Orientation.UNDIRECTED)
            report.append(PairReport(an, bn, [], [], f"ambiguous-degenerate: {err}"))
            continue
        f_ok = all(p >= alpha / len(fwd) for p in fwd)
        b_ok = all(p >= alpha / len(bwd) for p in bwd)
        decision = "ambiguous-both" if f_ok and b_ok else "ambiguous-neither"
        try:
            if f_ok and not b_ok:
                out.set_orientation(a, b, Orientation.DIRECTED)
                decision = "forward"
            elif b_ok and not f_ok:
                out.set_orientation(b, a, Orientation.DIRECTED)
                decision = "backward"
            else:
                out.set_orientation(a, b, Orientation.UNDIRECTED)
        except CycleError:
            out.set_orientation(a, b, Orientation.UNDIRECTED)
            decision = "ambiguous-cycle"
        report.append(PairReport(an, bn, fwd, bwd, decision))
    return out, report


def _direction(data, cp, cq, kp, kq, permutations, seed, max_samples) -> list[float]:
    Z = cp[:kp]
    Y = cp[kp: 2 * kp] + cq[:kq]
    return gin_pvalues(data, Z, Y, permutations, seed, max_samples)


def report_json(report: list[PairReport]) -> str:
    return json.dumps([r.to_dict() for r in report], indent=2, sort_keys=True)
