"""Bayesian online change-point detection and segmentation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .simulate import Dataset


@dataclass(frozen=True)
class NIGPrior:
    """Normal-Inverse-Gamma prior on (mean, variance)."""

    mu0: float = 0.0
    kappa0: float = 1.0
    alpha0: float = 1.0
    beta0: float = 1.0


@dataclass(frozen=True)
class DeclarationRule:
    """Declare when the posterior mode run length falls below
    ``min(previous mode, max_run)`` and ``P(r <= max_run)`` exceeds ``mass``.

    With ``confirm > 0`` the implied change location ``t - mode`` must also
    stay within ``jitter`` steps for the next ``confirm`` steps, which
    suppresses one-step flickers caused by short bursts of outliers.
    ``confirm = 0`` gives the bare rule.
    """

    max_run: int = 10
    mass: float = 0.5
    merge_within: int = 5
    confirm: int = 10
    jitter: int = 2


@dataclass
class ChangePointReport:
    run_length_posterior: np.ndarray = field(repr=False)
    change_points: list[int]
    hazard: float
    reset_mass: dict[int, float] = field(default_factory=dict)
    mode_path: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "hazard": self.hazard,
            "change_points": list(self.change_points),
            "reset_mass": {str(k): v for k, v in self.reset_mass.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def mode_path_csv(self) -> str:
        lines = ["t,mode_run_length"]
        lines += [f"{t},{int(m)}" for t, m in enumerate(self.mode_path)]
        return "\n".join(lines) + "\n"


def bocpd(series, hazard: float = 1 / 250, prior: NIGPrior = NIGPrior(),
          rule: DeclarationRule = DeclarationRule()) -> ChangePointReport:
    x = np.asarray(series, dtype=float).ravel()
    if x.size < 10:
        raise ValueError("series must have at least 10 points")
    if not 0.0 < hazard < 1.0:
        raise ValueError("hazard must lie in (0, 1)")
    if not np.all(np.isfinite(x)):
        raise ValueError("series contains non-finite values")
    R = kernels.bocpd_run_length(x, hazard, prior.mu0, prior.kappa0, prior.alpha0, prior.beta0)
    modes = np.argmax(R, axis=1)
    low = np.cumsum(R[:, : rule.max_run + 1], axis=1)[:, -1]
    cps: list[int] = []
    mass: dict[int, float] = {}
    for t in range(1, x.size):
        if modes[t] < min(modes[t - 1], rule.max_run) and low[t] > rule.mass:
            if not _persists(modes, t, rule.confirm, rule.jitter):
                continue
            cp = int(t - modes[t])
            if cp <= 0:
                continue
            if cps and cp - cps[-1] <= rule.merge_within:
                continue
            cps.append(cp)
            mass[cp] = float(low[t])
    return ChangePointReport(R, cps, hazard, mass, modes)


def _persists(modes: np.ndarray, t: int, confirm: int, jitter: int) -> bool:
    end = min(len(modes), t + confirm + 1)
    starts = np.arange(t, end) - modes[t:end]
    return bool(np.all(np.abs(starts - starts[0]) <= jitter))


def mean_return_series(data: Dataset) -> np.ndarray:
    if data.d == 0 or data.n == 0:
        raise ValueError("empty dataset")
    return data.samples.mean(axis=1)


def segment(data: Dataset, change_points, min_len: int = 100) -> list[Dataset]:
    """Split at change points; pieces shorter than ``min_len`` join their predecessor
    (a short leading piece joins the next one)."""
    cps = sorted(int(c) for c in change_points)
    if any(c <= 0 or c >= data.n for c in cps):
        raise ValueError("change points must lie strictly inside the series")
    bounds = [0] + cps + [data.n]
    pieces: list[list[int]] = []
    carry = None
    for a, b in zip(bounds[:-1], bounds[1:]):
        if carry is not None:
            a, carry = carry, None
        if b - a < min_len:
            if pieces:
                pieces[-1][1] = b
            else:
                carry = a
            continue
        pieces.append([a, b])
    if carry is not None:  # everything shorter than min_len
        pieces.append([carry, data.n])
    return [data.rows(a, b) for a, b in pieces]
