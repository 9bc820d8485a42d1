"""Nonstationarity analysis with a time-index surrogate.

The surrogate is treated as one more variable in the skeleton search. Tests
that involve it use the kernel CI test; tests among the original variables
use Fisher-z. Variables left adjacent to the surrogate have changing causal
modules.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .simulate import Dataset
from .skeleton import Skeleton, pc_skeleton
from .stats import DEFAULT_ALPHA, Moments, kci_test, partial_corr_ci

SURROGATE = "T"


@dataclass
class CdnodResult:
    skeleton: Skeleton
    changing_modules: set[str]
    surrogate: str = SURROGATE
    rolling: dict[str, list[dict]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        s = self.surrogate
        edges = self.skeleton.edges()
        first = [list(e) for e in edges if s in e]
        rest = [list(e) for e in edges if s not in e]
        return {
            "surrogate": s,
            "changing_modules": sorted(self.changing_modules),
            "surrogate_edges": first,
            "edges": rest,
            "rolling": self.rolling,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def augment_with_time(data: Dataset, name: str = SURROGATE) -> Dataset:
    """Append the time index rescaled to [0, 1] (row order when absent)."""
    if name in data.columns:
        raise ValueError(f"column {name!r} already present")
    t = np.arange(data.n, dtype=float) if data.time_index is None else np.asarray(data.time_index, dtype=float)
    span = t[-1] - t[0] if data.n > 1 else 0.0
    s = (t - t[0]) / span if span > 0 else np.zeros(data.n)
    return Dataset(list(data.columns) + [name], np.column_stack([data.samples, s]), data.time_index, dict(data.meta))


def hybrid_ci(data: Dataset, surrogate: str, alpha: float, kci_cap: int, seed: int):
    linear = Moments.from_dataset(data.select([c for c in data.columns if c != surrogate]))

    def test(x, y, S):
        if surrogate in (x, y) or surrogate in S:
            return kci_test(data, x, y, S, alpha, cap=kci_cap, subsample=True, seed=seed)
        return partial_corr_ci(linear, x, y, S, alpha)

    return test


def cdnod_skeleton(data: Dataset, alpha: float = DEFAULT_ALPHA, kci_cap: int = 1000,
                   max_cond: int = 3, surrogate: str = SURROGATE, seed: int = 0,
                   rolling_window: int | None = None) -> CdnodResult:
    if surrogate not in data.columns:
        raise ValueError(f"surrogate column {surrogate!r} missing; call augment_with_time first")
    sk = pc_skeleton(data, hybrid_ci(data, surrogate, alpha, kci_cap, seed), alpha, max_cond)
    changing = {v for v in sk.neighbours(surrogate)}
    res = CdnodResult(sk, changing, surrogate)
    if rolling_window:
        res.rolling = rolling_trace(data, sk, changing, surrogate, rolling_window)
    return res


def rolling_trace(data: Dataset, sk: Skeleton, modules, surrogate: str, window: int,
                  step: int | None = None) -> dict[str, list[dict]]:
    """Least-squares coefficients of each module on its observed neighbours per window.

    Descriptive only: it shows how a changing module drifts over time.
    """
    step = step or max(1, window // 2)
    out: dict[str, list[dict]] = {}
    for v in sorted(modules):
        nb = [u for u in sk.neighbours(v) if u != surrogate]
        rows = []
        for a in range(0, data.n - window + 1, step):
            y = data.col(v)[a: a + window]
            X = np.column_stack([data.col(u)[a: a + window] for u in nb] + [np.ones(window)])
            beta, *_ = np.linalg.lstsq(X, y, rcond=None)
            rows.append({"start": a, "coef": {u: float(b) for u, b in zip(nb, beta)}})
        out[v] = rows
    return out
