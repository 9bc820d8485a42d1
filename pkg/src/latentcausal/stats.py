"""Statistical tests: cross-covariance rank, Fisher-z partial correlation,
kernel conditional independence (KCI) and HSIC with permutations.

Rank and partial-correlation tests only need second moments, so they accept
either a :class:`~latentcausal.simulate.Dataset` or a precomputed
:class:`Moments` (covariance + sample size), which is what the discovery
loops pass around.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy import linalg, stats

from . import kernels
from .simulate import Dataset

log = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.01
MAX_CONDITION = 1e12
KCI_SAMPLE_CAP = 2000
HSIC_SAMPLE_CAP = 2000


class InsufficientSampleError(ValueError):
    pass


class DegenerateCovarianceError(ArithmeticError):
    pass


class SingularConditioningError(ArithmeticError):
    pass


class SampleCapError(ValueError):
    pass


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    reject: bool
    dof_or_perm: int = 0

    __test__ = False  # not a pytest class


@dataclass(frozen=True)
class RankDecision:
    tested_rank: int
    p_value: float
    deficient: bool
    statistic: float = 0.0


def sample_covariance(data: Dataset) -> np.ndarray:
    """Unbiased (n-1) covariance of the columns."""
    if data.n < 2:
        raise InsufficientSampleError("need at least two rows")
    X = data.samples - data.samples.mean(axis=0)
    S = X.T @ X / (data.n - 1)
    return 0.5 * (S + S.T)


@dataclass
class Moments:
    columns: list[str]
    cov: np.ndarray
    n: int

    @classmethod
    def from_dataset(cls, data: Dataset) -> "Moments":
        return cls(list(data.columns), sample_covariance(data), data.n)

    def index(self, names: Sequence[str]) -> list[int]:
        try:
            return [self.columns.index(c) for c in names]
        except ValueError as e:
            raise KeyError(str(e)) from None

    def block(self, rows: Sequence[str], cols: Sequence[str]) -> np.ndarray:
        return self.cov[np.ix_(self.index(rows), self.index(cols))]


SecondMoments = Union[Dataset, Moments]


def _moments(data: SecondMoments) -> Moments:
    return data if isinstance(data, Moments) else Moments.from_dataset(data)


def _audit(kind: str, payload, statistic: float, p: float) -> None:
    if log.isEnabledFor(logging.DEBUG):
        h = hashlib.sha1(repr(payload).encode()).hexdigest()[:12]
        log.debug("%s inputs=%s stat=%.6g p=%.6g", kind, h, statistic, p)


# --------------------------------------------------------------------------
# rank of a cross-covariance block


def canonical_correlations(cov_aa: np.ndarray, cov_bb: np.ndarray, cov_ab: np.ndarray) -> np.ndarray:
    """Canonical correlations, descending, computed from covariance blocks."""
    for name, S in (("A", cov_aa), ("B", cov_bb)):
        c = np.linalg.cond(S)
        if not np.isfinite(c) or c > MAX_CONDITION:
            raise DegenerateCovarianceError(f"within-set covariance of {name} is singular (cond={c:.3g})")
    la = np.linalg.cholesky(cov_aa)
    lb = np.linalg.cholesky(cov_bb)
    M = linalg.solve_triangular(la, cov_ab, lower=True)
    M = linalg.solve_triangular(lb, M.T, lower=True).T
    rho = np.linalg.svd(M, compute_uv=False)
    return np.clip(rho, 0.0, 1.0)


def rank_test(data: SecondMoments, A: Sequence[str], B: Sequence[str], r: int,
              alpha: float = DEFAULT_ALPHA) -> RankDecision:
    """Test H0: rank(Sigma_AB) <= r with Bartlett's canonical-correlation statistic.

    ``A`` and ``B`` may share variables; a shared variable contributes a unit
    canonical correlation, so H0 is rejected outright whenever r is smaller
    than the overlap.
    """
    m = _moments(data)
    A, B = list(A), list(B)
    p, q = len(A), len(B)
    if not 0 <= r < min(p, q):
        raise ValueError(f"tested rank {r} must lie in [0, {min(p, q)})")
    rho = canonical_correlations(m.block(A, A), m.block(B, B), m.block(A, B))
    tail = rho[r:]
    with np.errstate(divide="ignore"):
        logs = np.log1p(-np.minimum(tail ** 2, 1.0))
    stat = -(m.n - (p + q + 3) / 2.0) * float(np.sum(logs))
    dof = (p - r) * (q - r)
    pval = 0.0 if not np.isfinite(stat) else float(stats.chi2.sf(stat, dof))
    _audit("rank", (tuple(A), tuple(B), r, m.n), stat, pval)
    return RankDecision(r, pval, pval >= alpha, stat)


def estimate_rank(data: SecondMoments, A: Sequence[str], B: Sequence[str],
                  alpha: float = DEFAULT_ALPHA) -> int:
    """Smallest r whose rank test is not rejected; ``min(|A|, |B|)`` if all are."""
    m = _moments(data)
    top = min(len(A), len(B))
    for r in range(top):
        if rank_test(m, A, B, r, alpha).deficient:
            return r
    return top


# --------------------------------------------------------------------------
# Fisher-z partial correlation


def partial_correlation(cov: np.ndarray) -> float:
    """Partial correlation of the first two variables given the rest."""
    d = np.sqrt(np.diag(cov))
    if np.any(d <= 0):
        raise SingularConditioningError("zero-variance variable")
    R = cov / np.outer(d, d)
    c = np.linalg.cond(R)
    if not np.isfinite(c) or c > MAX_CONDITION:
        raise SingularConditioningError(f"conditioning covariance is singular (cond={c:.3g})")
    P = np.linalg.inv(R)
    return float(np.clip(-P[0, 1] / np.sqrt(P[0, 0] * P[1, 1]), -1.0, 1.0))


def partial_corr_ci(data: SecondMoments, x: str, y: str, S: Sequence[str] = (),
                    alpha: float = DEFAULT_ALPHA) -> TestResult:
    """Fisher-z test of zero partial correlation; ``reject`` means dependence."""
    S = list(S)
    if x == y or x in S or y in S:
        raise ValueError("x, y must differ and lie outside the conditioning set")
    m = _moments(data)
    if m.n <= len(S) + 3:
        raise InsufficientSampleError(f"n={m.n} too small for |S|={len(S)}")
    names = [x, y] + S
    rho = partial_correlation(m.block(names, names))
    rho = float(np.clip(rho, -1 + 1e-15, 1 - 1e-15))
    z = np.sqrt(m.n - len(S) - 3) * np.arctanh(rho)
    p = float(2.0 * stats.norm.sf(abs(z)))
    _audit("fisherz", (x, y, tuple(S), m.n), z, p)
    return TestResult(float(z), p, p < alpha, len(S))


# --------------------------------------------------------------------------
# kernels


def _sq_dists(X: np.ndarray) -> np.ndarray:
    sq = np.sum(X * X, axis=1)
    D = sq[:, None] + sq[None, :] - 2.0 * X @ X.T
    np.maximum(D, 0.0, out=D)
    return D


def rbf_gram(X: np.ndarray) -> np.ndarray:
    """Gaussian Gram matrix with median-heuristic bandwidth."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    D = _sq_dists(X)
    iu = np.triu_indices_from(D, k=1)
    med = np.median(D[iu]) if iu[0].size else 0.0
    if med <= 0:
        pos = D[iu][D[iu] > 0]
        med = float(np.median(pos)) if pos.size else 1.0
    return np.exp(-D / med)


def _center(K: np.ndarray) -> np.ndarray:
    rm = K.mean(axis=0)
    return K - rm[None, :] - rm[:, None] + rm.mean()


def _standardize(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    return (X - X.mean(axis=0)) / sd


def _subsample(n: int, cap: int, seed: int) -> np.ndarray:
    if n <= cap:
        return np.arange(n)
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n, cap, replace=False))


def _gamma_pvalue(stat: float, mean: float, var: float) -> float:
    if mean <= 0 or var <= 0:
        return 1.0
    k = mean * mean / var
    theta = var / mean
    return float(stats.gamma.sf(stat, k, scale=theta))


def kci_test(data: Dataset, x: str, y: str, S: Sequence[str] = (), alpha: float = DEFAULT_ALPHA,
             cap: int = KCI_SAMPLE_CAP, subsample: bool = False, seed: int = 0,
             epsilon: float = 1e-3, eig_threshold: float = 1e-5) -> TestResult:
    """Kernel (conditional) independence test with a gamma null approximation.

    Above ``cap`` rows the call fails unless ``subsample`` is set, in which
    case ``cap`` rows are drawn uniformly with ``seed``.
    """
    S = list(S)
    if x == y or x in S or y in S:
        raise ValueError("x, y must differ and lie outside the conditioning set")
    n = data.n
    if n > cap and not subsample:
        raise SampleCapError(f"n={n} exceeds the KCI cap of {cap}; subsample the data first")
    idx = _subsample(n, cap, seed)
    X = _standardize(data.col(x)[idx])
    Y = _standardize(data.col(y)[idx])
    m = idx.size
    if not S:
        Kx = _center(rbf_gram(X))
        Ky = _center(rbf_gram(Y))
        stat = float(np.sum(Kx * Ky))
        mean = np.trace(Kx) * np.trace(Ky) / m
        var = 2.0 * np.sum(Kx * Kx) * np.sum(Ky * Ky) / (m * m)
        p = _gamma_pvalue(stat, mean, var)
        _audit("kci", (x, y, (), m), stat, p)
        return TestResult(stat, p, p < alpha, 0)
    Z = _standardize(data.samples[np.ix_(idx, data.indices(S))])
    Kx = _center(rbf_gram(np.hstack([X, 0.5 * Z])))
    Ky = _center(rbf_gram(Y))
    Kz = _center(rbf_gram(Z))
    Rz = epsilon * np.linalg.inv(Kz + epsilon * np.eye(m))
    KxR = Rz @ Kx @ Rz
    KyR = Rz @ Ky @ Rz
    stat = float(np.sum(KxR * KyR))
    uu = _uu_product(KxR, KyR, eig_threshold)
    mean = float(np.trace(uu))
    var = 2.0 * float(np.sum(uu * uu))
    p = _gamma_pvalue(stat, mean, var)
    _audit("kci", (x, y, tuple(S), m), stat, p)
    return TestResult(stat, p, p < alpha, len(S))


def _top_eig(K: np.ndarray, threshold: float) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (K + K.T))
    keep = w > w.max() * threshold
    return v[:, keep] * np.sqrt(w[keep])


def _uu_product(KxR: np.ndarray, KyR: np.ndarray, threshold: float) -> np.ndarray:
    vx = _top_eig(KxR, threshold)
    vy = _top_eig(KyR, threshold)
    m = vx.shape[0]
    uu = (vx[:, :, None] * vy[:, None, :]).reshape(m, -1)
    return uu @ uu.T if uu.shape[1] > m else uu.T @ uu


# --------------------------------------------------------------------------
# HSIC


def _median_sq_dist(X: np.ndarray, rng: np.random.Generator, m: int = 1000) -> float:
    idx = _subsample(X.shape[0], m, int(rng.integers(2**31)))
    D = _sq_dists(X[idx])
    iu = np.triu_indices_from(D, k=1)
    vals = D[iu]
    med = float(np.median(vals)) if vals.size else 0.0
    if med <= 0:
        pos = vals[vals > 0]
        med = float(np.median(pos)) if pos.size else 1.0
    return med


def rff_features(X: np.ndarray, n_features: int, rng: np.random.Generator) -> np.ndarray:
    """Centered random Fourier features for the median-heuristic Gaussian kernel."""
    med = _median_sq_dist(X, rng)
    # exp(-|x-y|^2 / med) has spectral density N(0, 2/med)
    W = rng.normal(0.0, np.sqrt(2.0 / med), size=(X.shape[1], n_features))
    b = rng.uniform(0.0, 2 * np.pi, size=n_features)
    F = np.sqrt(2.0 / n_features) * np.cos(X @ W + b)
    return F - F.mean(axis=0)


def hsic_independence(u, v, alpha: float = DEFAULT_ALPHA, permutations: int = 200, seed: int = 0,
                      max_samples: int = HSIC_SAMPLE_CAP, n_features: int = 16,
                      feature_cap: int = 100_000) -> TestResult:
    """HSIC with Gaussian kernels (median heuristic) and a permutation p-value.

    Up to ``max_samples`` rows the exact Gram matrices are used. Longer
    inputs switch to ``n_features`` random Fourier features per side on up
    to ``feature_cap`` rows, which keeps memory linear in n.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape[0] != v.shape[0]:
        raise ValueError(f"length mismatch: {u.shape[0]} vs {v.shape[0]}")
    if u.shape[0] < 50:
        raise InsufficientSampleError("HSIC needs at least 50 samples")
    rng = np.random.default_rng(seed)
    if u.shape[0] <= max_samples:
        U, V = _standardize(u), _standardize(v)
        Kc = _center(rbf_gram(U))
        Lc = _center(rbf_gram(V))
        m = U.shape[0]
        stat = float(np.sum(Kc * Lc)) / (m * m)
        null = _chunked(lambda P: kernels.hsic_permutation_stats(Kc, Lc, P), m, permutations, rng)
    else:
        idx = _subsample(u.shape[0], feature_cap, seed)
        U, V = _standardize(u[idx]), _standardize(v[idx])
        A = rff_features(U, n_features, rng)
        B = rff_features(V, n_features, rng)
        m = U.shape[0]
        M = A.T @ B
        stat = float(np.sum(M * M)) / (m * m)
        null = _chunked(lambda P: kernels.rff_permutation_stats(A, B, P), m, permutations, rng)
    p = float((1 + np.sum(null >= stat * (1 - 1e-12))) / (1 + permutations))
    _audit("hsic", (m, permutations, seed), stat, p)
    return TestResult(stat, p, p < alpha, permutations)


def _chunked(fn, m: int, permutations: int, rng: np.random.Generator, chunk: int = 25) -> np.ndarray:
    out = []
    left = permutations
    while left > 0:
        c = min(chunk, left)
        out.append(fn(np.array([rng.permutation(m) for _ in range(c)], dtype=np.int64)))
        left -= c
    return np.concatenate(out) if out else np.empty(0)
