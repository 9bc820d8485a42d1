"""Hot loops, each with a numba kernel and a numpy twin.

The public functions dispatch on :func:`latentcausal._accel.numba_enabled`.
Both paths must agree to floating-point round-off; ``tests/test_kernels.py``
and ``benchmarks/bench_kernels.py`` compare them.
"""

import math

import numpy as np

from ._accel import njit, numba_enabled

# --------------------------------------------------------------------------
# VAR(1) recursion  x_t = A x_{t-1} + e_t


@njit(cache=True)
def _var_recursion_nb(A, noise, x0):
    T, d = noise.shape
    out = np.empty((T, d))
    prev = x0.copy()
    for t in range(T):
        for i in range(d):
            s = noise[t, i]
            for j in range(d):
                s += A[i, j] * prev[j]
            out[t, i] = s
        for i in range(d):
            prev[i] = out[t, i]
    return out


def _var_recursion_np(A, noise, x0):
    T, d = noise.shape
    out = np.empty((T, d))
    prev = np.array(x0, dtype=float)
    At = A.T
    for t in range(T):
        prev = prev @ At + noise[t]
        out[t] = prev
    return out


def var_recursion(A: np.ndarray, noise: np.ndarray, x0: np.ndarray) -> np.ndarray:
    A = np.ascontiguousarray(A, dtype=float)
    noise = np.ascontiguousarray(noise, dtype=float)
    x0 = np.ascontiguousarray(x0, dtype=float)
    if numba_enabled():
        return _var_recursion_nb(A, noise, x0)
    return _var_recursion_np(A, noise, x0)


# --------------------------------------------------------------------------
# BOCPD run-length recursion with a Normal-Inverse-Gamma prior


@njit(cache=True)
def _student_logpdf_nb(x, mu, kappa, alpha, beta):
    nu = 2.0 * alpha
    scale2 = beta * (kappa + 1.0) / (alpha * kappa)
    z = (x - mu) * (x - mu) / (nu * scale2)
    return (
        math.lgamma(0.5 * (nu + 1.0))
        - math.lgamma(0.5 * nu)
        - 0.5 * math.log(nu * math.pi * scale2)
        - 0.5 * (nu + 1.0) * math.log1p(z)
    )


@njit(cache=True)
def _bocpd_nb(x, hazard, mu0, kappa0, alpha0, beta0):
    T = x.shape[0]
    R = np.zeros((T + 1, T + 1))
    R[0, 0] = 1.0
    mu = np.empty(T + 1)
    kappa = np.empty(T + 1)
    alpha = np.empty(T + 1)
    beta = np.empty(T + 1)
    mu[0] = mu0
    kappa[0] = kappa0
    alpha[0] = alpha0
    beta[0] = beta0
    logpred = np.empty(T + 1)
    for t in range(T):
        xt = x[t]
        mx = -np.inf
        for r in range(t + 1):
            lp = _student_logpdf_nb(xt, mu[r], kappa[r], alpha[r], beta[r])
            logpred[r] = lp
            if lp > mx:
                mx = lp
        cp = 0.0
        total = 0.0
        for r in range(t, -1, -1):
            w = R[t, r] * math.exp(logpred[r] - mx)
            R[t + 1, r + 1] = w * (1.0 - hazard)
            cp += w * hazard
        R[t + 1, 0] = cp
        for r in range(t + 2):
            total += R[t + 1, r]
        for r in range(t + 2):
            R[t + 1, r] /= total
        # posterior hyperparameters shift up by one run length
        for r in range(t, -1, -1):
            k = kappa[r]
            mu[r + 1] = (k * mu[r] + xt) / (k + 1.0)
            beta[r + 1] = beta[r] + k * (xt - mu[r]) * (xt - mu[r]) / (2.0 * (k + 1.0))
            kappa[r + 1] = k + 1.0
            alpha[r + 1] = alpha[r] + 0.5
        mu[0] = mu0
        kappa[0] = kappa0
        alpha[0] = alpha0
        beta[0] = beta0
    return R[1:]


def _student_logpdf_np(x, mu, kappa, alpha, beta):
    from scipy.special import gammaln

    nu = 2.0 * alpha
    scale2 = beta * (kappa + 1.0) / (alpha * kappa)
    z = (x - mu) ** 2 / (nu * scale2)
    return (
        gammaln(0.5 * (nu + 1.0))
        - gammaln(0.5 * nu)
        - 0.5 * np.log(nu * np.pi * scale2)
        - 0.5 * (nu + 1.0) * np.log1p(z)
    )


def _bocpd_np(x, hazard, mu0, kappa0, alpha0, beta0):
    T = x.shape[0]
    R = np.zeros((T + 1, T + 1))
    R[0, 0] = 1.0
    mu = np.array([mu0])
    kappa = np.array([kappa0])
    alpha = np.array([alpha0])
    beta = np.array([beta0])
    for t in range(T):
        xt = x[t]
        lp = _student_logpdf_np(xt, mu, kappa, alpha, beta)
        w = R[t, : t + 1] * np.exp(lp - lp.max())
        R[t + 1, 1 : t + 2] = w * (1.0 - hazard)
        R[t + 1, 0] = w.sum() * hazard
        R[t + 1, : t + 2] /= R[t + 1, : t + 2].sum()
        beta = np.concatenate(([beta0], beta + kappa * (xt - mu) ** 2 / (2.0 * (kappa + 1.0))))
        mu = np.concatenate(([mu0], (kappa * mu + xt) / (kappa + 1.0)))
        kappa = np.concatenate(([kappa0], kappa + 1.0))
        alpha = np.concatenate(([alpha0], alpha + 0.5))
    return R[1:]


def bocpd_run_length(x: np.ndarray, hazard: float, mu0: float, kappa0: float,
                     alpha0: float, beta0: float) -> np.ndarray:
    """Run-length posterior, row ``t`` = p(r_t | x_1..x_t), shape (T, T+1)."""
    x = np.ascontiguousarray(x, dtype=float)
    args = (x, float(hazard), float(mu0), float(kappa0), float(alpha0), float(beta0))
    if numba_enabled():
        return _bocpd_nb(*args)
    return _bocpd_np(*args)


# --------------------------------------------------------------------------
# HSIC statistic under permutations of the second sample


@njit(cache=True)
def _hsic_perm_nb(Kc, Lc, perms):
    P = perms.shape[0]
    n = Kc.shape[0]
    out = np.empty(P)
    for p in range(P):
        perm = perms[p]
        s = 0.0
        for i in range(n):
            pi = perm[i]
            for j in range(n):
                s += Kc[i, j] * Lc[pi, perm[j]]
        out[p] = s / (n * n)
    return out


def _hsic_perm_np(Kc, Lc, perms):
    n = Kc.shape[0]
    out = np.empty(perms.shape[0])
    for p, perm in enumerate(perms):
        out[p] = np.einsum("ij,ij->", Kc, Lc[np.ix_(perm, perm)]) / (n * n)
    return out


def hsic_permutation_stats(Kc: np.ndarray, Lc: np.ndarray, perms: np.ndarray) -> np.ndarray:
    """Biased HSIC ``tr(Kc P Lc P^T)/n^2`` for each row of ``perms``."""
    Kc = np.ascontiguousarray(Kc, dtype=float)
    Lc = np.ascontiguousarray(Lc, dtype=float)
    perms = np.ascontiguousarray(perms, dtype=np.int64)
    if numba_enabled():
        return _hsic_perm_nb(Kc, Lc, perms)
    return _hsic_perm_np(Kc, Lc, perms)


# --------------------------------------------------------------------------
# HSIC on random Fourier features: ||A^T P B||_F^2 / n^2 per permutation


@njit(cache=True)
def _rff_perm_nb(At, B, perms):
    P = perms.shape[0]
    n = B.shape[0]
    D = B.shape[1]
    out = np.empty(P)
    Bp = np.empty((n, D))
    for p in range(P):
        perm = perms[p]
        for i in range(n):
            for j in range(D):
                Bp[i, j] = B[perm[i], j]
        M = At @ Bp
        out[p] = np.sum(M * M) / (n * n)
    return out


def _rff_perm_np(At, B, perms):
    n = B.shape[0]
    out = np.empty(perms.shape[0])
    for p, perm in enumerate(perms):
        M = At @ B[perm]
        out[p] = np.sum(M * M) / (n * n)
    return out


def rff_permutation_stats(A: np.ndarray, B: np.ndarray, perms: np.ndarray) -> np.ndarray:
    """Feature-space HSIC for each permutation of the rows of ``B``."""
    At = np.ascontiguousarray(np.asarray(A, dtype=float).T)
    B = np.ascontiguousarray(B, dtype=float)
    perms = np.ascontiguousarray(perms, dtype=np.int64)
    if numba_enabled():
        return _rff_perm_nb(At, B, perms)
    return _rff_perm_np(At, B, perms)
