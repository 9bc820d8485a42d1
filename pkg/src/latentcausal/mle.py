"""Gaussian maximum-likelihood fit of edge coefficients and noise variances.

Parameters are packed as ``[edge coefficients (graph.edges order),
log noise variances (graph.vertices order)]``. Latent scales are a gauge
freedom; a quadratic penalty pulls each latent variance towards 1 during the
search and an exact rescaling enforces it afterwards.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .graph import DirectedGraph, GraphError
from .simulate import Dataset

PENALTY_WEIGHT = 1e3
NON_PD_CAP = 1e15


class UnidentifiableStructureError(GraphError):
    pass


class DimensionMismatchError(ValueError):
    pass


@dataclass
class FitResult:
    A_hat: dict[tuple[str, str], float]
    psi_hat: dict[str, float]
    loglik: float
    restarts_used: int
    converged: bool
    grad_norm: float = math.nan
    history: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "coefficients": [
                {"from": p, "to": c, "coef": v} for (p, c), v in sorted(self.A_hat.items())
            ],
            "psi": dict(sorted(self.psi_hat.items())),
            "loglik": self.loglik,
            "restarts_used": self.restarts_used,
            "converged": self.converged,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


class _Model:
    """Index bookkeeping shared by the objective and the gradient."""

    def __init__(self, g: DirectedGraph):
        self.g = g
        self.p = len(g)
        self.edges = [(g.index(par), g.index(ch)) for par, ch in g.edges]
        self.obs = [g.index(v) for v in g.observed]
        self.lat = [g.index(v) for v in g.latent]
        self.dim = len(self.edges) + self.p

    def unpack(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise DimensionMismatchError(f"expected {self.dim} parameters, got {theta.shape}")
        A = np.zeros((self.p, self.p))
        for w, (j, i) in zip(theta[: len(self.edges)], self.edges):
            A[i, j] = w
        psi = np.exp(theta[len(self.edges):])
        return A, psi

    def pack(self, A, psi) -> np.ndarray:
        coefs = [A[i, j] for j, i in self.edges]
        return np.concatenate([coefs, np.log(psi)])

    def mixing(self, A):
        return np.linalg.solve(np.eye(self.p) - A, np.eye(self.p))


def _sigma(m: _Model, A, psi):
    B = m.mixing(A)
    S = (B * psi) @ B.T
    return B, 0.5 * (S + S.T)


def _nll_parts(m: _Model, theta, S_hat):
    A, psi = m.unpack(theta)
    B, Sig = _sigma(m, A, psi)
    Sx = Sig[np.ix_(m.obs, m.obs)]
    try:
        L = np.linalg.cholesky(Sx)
    except np.linalg.LinAlgError:
        return None
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    inv = np.linalg.solve(Sx, np.eye(len(m.obs)))
    return A, psi, B, Sig, inv, logdet


def neg_log_likelihood(structure: DirectedGraph, params, sample_cov: np.ndarray, n: int) -> float:
    """Gaussian negative log-likelihood of the observed block; capped when not PD."""
    m = _Model(structure)
    q = len(m.obs)
    if sample_cov.shape != (q, q):
        raise DimensionMismatchError("sample covariance must match the observed vertices")
    parts = _nll_parts(m, params, sample_cov)
    if parts is None:
        return NON_PD_CAP
    *_, inv, logdet = parts
    return 0.5 * n * (q * math.log(2 * math.pi) + logdet + float(np.sum(inv * sample_cov)))


def objective(structure: DirectedGraph, params, sample_cov: np.ndarray,
              penalty: float = PENALTY_WEIGHT) -> tuple[float, np.ndarray]:
    """Per-sample NLL plus the latent-variance penalty, with its analytic gradient."""
    return _objective(_Model(structure), params, sample_cov, penalty)


def _objective(m: _Model, theta, S_hat, penalty):
    q = len(m.obs)
    parts = _nll_parts(m, theta, S_hat)
    if parts is None:
        return NON_PD_CAP, np.zeros(m.dim)
    A, psi, B, Sig, inv, logdet = parts
    f = 0.5 * (q * math.log(2 * math.pi) + logdet + float(np.sum(inv * S_hat)))
    G = np.zeros((m.p, m.p))
    G[np.ix_(m.obs, m.obs)] = 0.5 * (inv - inv @ S_hat @ inv)
    for l in m.lat:
        d = Sig[l, l] - 1.0
        f += penalty * d * d
        G[l, l] += 2.0 * penalty * d
    BtGB = B.T @ G @ B
    dA = 2.0 * (BtGB * psi) @ B.T
    grad = np.empty(m.dim)
    for k, (j, i) in enumerate(m.edges):
        grad[k] = dA[i, j]
    grad[len(m.edges):] = np.diag(BtGB) * psi
    return f, grad


def _check_identifiable(g: DirectedGraph) -> None:
    for l in g.latent:
        obs = [d for d in g.descendants(l) if d.observed]
        if len(obs) < 2:
            raise UnidentifiableStructureError(f"latent {l.name} has fewer than two observed descendants")


def rescale_latents(structure: DirectedGraph, A: np.ndarray, psi: np.ndarray):
    """Unit latent variances and a canonical sign, leaving Sigma_X unchanged."""
    m = _Model(structure)
    _, Sig = _sigma(m, A, psi)
    A = A.copy()
    psi = psi.copy()
    for l in m.lat:
        s = math.sqrt(Sig[l, l])
        out = [i for j, i in m.edges if j == l]
        # canonical sign: edge to the first observed child (by name) positive;
        # other latents' rescaling never touches that entry
        anchor = [i for i in out if i in m.obs] or out
        first = min(anchor, key=lambda i: structure.vertices[i].name) if anchor else None
        if first is not None and A[first, l] < 0:
            s = -s
        A[:, l] *= s
        A[l, :] /= s
        psi[l] /= s * s
    return A, psi


def fit_coefficients(structure: DirectedGraph, data, restarts: int = 10, tol: float = 1e-6,
                     max_iters: int = 2000, seed: int = 0, penalty: float = PENALTY_WEIGHT) -> FitResult:
    """Best of ``restarts`` L-BFGS-B runs from random starts.

    ``data`` is a Dataset, or a ``(sample_cov, n)`` pair ordered like
    ``structure.observed``.
    """
    _check_identifiable(structure)
    m = _Model(structure)
    names = [v.name for v in structure.observed]
    if isinstance(data, Dataset):
        X = data.samples[:, data.indices(names)]
        n = X.shape[0]
        Xc = X - X.mean(axis=0)
        S_hat = Xc.T @ Xc / (n - 1)
    else:
        S_hat, n = data
        S_hat = np.asarray(S_hat, dtype=float)
    best = None
    history = []
    for r in range(restarts):
        rng = np.random.default_rng([seed, r])
        A0 = np.zeros((m.p, m.p))
        for j, i in m.edges:
            A0[i, j] = rng.uniform(0.1, 1.0) * rng.choice([-1.0, 1.0])
        psi0 = np.ones(m.p)
        for k, i in enumerate(m.obs):
            psi0[i] = max(S_hat[k, k], 1e-6)
        res = optimize.minimize(
            lambda th: _objective(m, th, S_hat, penalty), m.pack(A0, psi0), jac=True,
            method="L-BFGS-B", options={"maxiter": max_iters, "gtol": tol * 1e-2, "ftol": 1e-15},
        )
        A, psi = m.unpack(res.x)
        A, psi = rescale_latents(structure, A, psi)
        # polish from the gauge-fixed point, where the penalty term is flat
        res = optimize.minimize(
            lambda th: _objective(m, th, S_hat, penalty), m.pack(A, psi), jac=True,
            method="L-BFGS-B", options={"maxiter": max_iters, "gtol": tol * 1e-2, "ftol": 1e-15},
        )
        A, psi = rescale_latents(structure, *m.unpack(res.x))
        theta = m.pack(A, psi)
        ll = -neg_log_likelihood(structure, theta, S_hat, n)
        gnorm = float(np.linalg.norm(_objective(m, theta, S_hat, penalty)[1]))
        history.append(ll)
        if best is None or ll > best[0] + 1e-9:
            best = (ll, A, psi, gnorm)
    ll, A, psi, gnorm = best
    vs = structure.vertices
    return FitResult(
        A_hat={(vs[j].name, vs[i].name): float(A[i, j]) for j, i in m.edges},
        psi_hat={v.name: float(psi[k]) for k, v in enumerate(vs)},
        loglik=float(ll),
        restarts_used=restarts,
        converged=gnorm < tol,
        grad_norm=gnorm,
        history=history,
    )
