"""Named ground-truth models used by tests, the acceptance suite and the CLI."""

from __future__ import annotations

import datetime as _dt

import numpy as np

from .graph import DirectedGraph
from .simulate import Dataset, LatentLinearSCM, NoiseFamily, draw_noise

ONE_FACTOR_COEFS = {"X1": 1.0, "X2": 0.8, "X3": 0.6, "X4": 0.9}

NESTED_EDGES = [
    ("L1", "X1"), ("L1", "L2"), ("L1", "X2"), ("L1", "X3"),
    ("L2", "X4"), ("L2", "X5"), ("L2", "X6"),
    ("X2", "X4"), ("X2", "X5"), ("X2", "X6"), ("X2", "X7"),
    ("X3", "X7"), ("X3", "X8"),
]

# fixed magnitudes in [0.6, 1.4] with mixed signs
NESTED_COEFS = dict(zip(NESTED_EDGES, [
    1.1, 0.9, -0.8, 1.2,
    1.0, -1.3, 0.8,
    0.7, 0.9, -1.1, 1.2,
    -0.9, 1.0,
]))


def one_factor_scm(noise: NoiseFamily | str = NoiseFamily.GAUSSIAN, psi: float = 1.0) -> LatentLinearSCM:
    """One latent L1 with four observed children; Var(L1) = 1."""
    obs = list(ONE_FACTOR_COEFS)
    coefs = {("L1", x): w for x, w in ONE_FACTOR_COEFS.items()}
    return LatentLinearSCM.from_edges(obs, ["L1"], coefs, psi={"L1": 1.0, **{x: psi for x in obs}}, noise=noise)


def nested_latent_graph() -> DirectedGraph:
    return DirectedGraph.from_names([f"X{i}" for i in range(1, 9)], ["L1", "L2"], NESTED_EDGES)


def nested_latent_scm(rng: np.random.Generator | None = None,
                noise: NoiseFamily | str = NoiseFamily.GAUSSIAN) -> LatentLinearSCM:
    """Nested two-latent structure; fixed coefficients unless ``rng`` is given."""
    if rng is None:
        coefs = dict(NESTED_COEFS)
    else:
        coefs = {e: float(rng.uniform(0.6, 1.4) * rng.choice([-1.0, 1.0])) for e in NESTED_EDGES}
    return LatentLinearSCM.from_edges([f"X{i}" for i in range(1, 9)], ["L1", "L2"], coefs, psi=1.0, noise=noise)


def chain_scm(length: int = 3, coef: float = 0.8, noise: NoiseFamily | str = NoiseFamily.GAUSSIAN) -> LatentLinearSCM:
    names = [f"X{i + 1}" for i in range(length)]
    coefs = {(names[i], names[i + 1]): coef for i in range(length - 1)}
    if not coefs:
        return LatentLinearSCM.from_edges(names, [], {}, noise=noise)
    return LatentLinearSCM.from_edges(names, [], coefs, noise=noise)


def two_cover_scm(rng: np.random.Generator, noise: NoiseFamily | str = NoiseFamily.UNIFORM,
                  n_children: int = 4) -> LatentLinearSCM:
    """L1 -> L2, each latent with ``n_children`` pure observed children.

    L1's children are X1..Xm, L2's are X(m+1)..X(2m).
    """
    m = n_children
    obs = [f"X{i + 1}" for i in range(2 * m)]

    def w(lo=0.6, hi=1.4):
        return float(rng.uniform(lo, hi) * rng.choice([-1.0, 1.0]))

    coefs = {("L1", "L2"): w(0.8, 1.5)}
    coefs.update({("L1", obs[i]): w() for i in range(m)})
    coefs.update({("L2", obs[m + i]): w() for i in range(m)})
    psi = {v: float(rng.uniform(0.5, 1.0)) for v in obs}
    psi.update({"L1": 1.0, "L2": float(rng.uniform(0.5, 1.0))})
    return LatentLinearSCM.from_edges(obs, ["L1", "L2"], coefs, psi=psi, noise=noise)


# --------------------------------------------------------------------------
# nonstationary fixtures


def drift_dataset(n: int = 2000, seed: int = 0, stationary: bool = False,
                  b_range: tuple[float, float] = (0.0, 2.0), c: float = 0.8) -> Dataset:
    """X1 -> X2 -> X3 where X2's coefficient on X1 drifts linearly in time.

    With ``stationary`` the coefficient is held at the midpoint of ``b_range``.
    """
    rng = np.random.default_rng(seed)
    t = np.linspace(0.0, 1.0, n)
    b = np.full(n, 0.5 * sum(b_range)) if stationary else b_range[0] + (b_range[1] - b_range[0]) * t
    x1 = rng.standard_normal(n)
    x2 = b * x1 + rng.standard_normal(n)
    x3 = c * x2 + rng.standard_normal(n)
    return Dataset(["X1", "X2", "X3"], np.column_stack([x1, x2, x3]), np.arange(n))


def common_trend_dataset(n: int = 2000, seed: int = 0, amplitude: float = 2.0) -> Dataset:
    """Three independent series sharing one smooth trend in their means."""
    rng = np.random.default_rng(seed)
    t = np.linspace(0.0, 1.0, n)
    trend = amplitude * np.sin(2 * np.pi * t)
    X = trend[:, None] + rng.standard_normal((n, 3))
    return Dataset(["X1", "X2", "X3"], X, np.arange(n))


# --------------------------------------------------------------------------
# two-regime price panel

REGIME_OBSERVED = [f"X{i}" for i in range(1, 9)]


def regime_scm(with_link: bool, noise: NoiseFamily | str = NoiseFamily.UNIFORM) -> LatentLinearSCM:
    """Two latents with four pure children each; ``with_link`` adds L1 -> L2."""
    load1 = [1.0, 0.9, 0.8, 1.1]
    load2 = [0.9, 1.0, 1.2, 0.8]
    coefs = {("L1", f"X{i + 1}"): w for i, w in enumerate(load1)}
    coefs.update({("L2", f"X{i + 5}"): w for i, w in enumerate(load2)})
    if with_link:
        coefs[("L1", "L2")] = 1.0
    psi = {x: 0.5 for x in REGIME_OBSERVED}
    return LatentLinearSCM.from_edges(REGIME_OBSERVED, ["L1", "L2"], coefs, psi=psi, noise=noise)


def two_regime_returns(seed: int = 0, n1: int = 500, n2: int = 500, scale: float = 0.01,
                       shift: float = 3.0) -> tuple[np.ndarray, list[LatentLinearSCM]]:
    """Returns panel whose second regime adds L1 -> L2 and shifts the mean.

    The mean shift (in units of the mean series' noise level) is what makes
    the regime change visible to change-point detection on the average return.
    """
    rng = np.random.default_rng(seed)
    scms = [regime_scm(False), regime_scm(True)]
    blocks = [_sample(scm, n, rng) for scm, n in ((scms[0], n1), (scms[1], n2))]
    R = np.vstack(blocks)
    # mean-series noise level of regime 1
    sd = float(np.std(blocks[0].mean(axis=1)))
    R[n1:] += shift * sd
    return scale * R, scms


def _sample(scm: LatentLinearSCM, n: int, rng: np.random.Generator) -> np.ndarray:
    g = scm.graph
    V = np.zeros((n, len(g)))
    for v in g.topological_order:
        i = g.index(v)
        V[:, i] = np.sqrt(scm.psi[i]) * draw_noise(scm.noise[i], n, rng)
        for p in g.parents(v):
            j = g.index(p)
            V[:, i] += scm.A[i, j] * V[:, j]
    return V[:, [g.index(x) for x in REGIME_OBSERVED]]


def returns_to_price_csv(R: np.ndarray, tickers: list[str], start: str = "2020-01-01",
                         base: float = 100.0) -> str:
    """Price CSV (``date,<tickers>``) whose log returns are exactly ``R``."""
    P = base * np.exp(np.vstack([np.zeros(R.shape[1]), np.cumsum(R, axis=0)]))
    d0 = _dt.date.fromisoformat(start)
    lines = ["date," + ",".join(tickers)]
    for i, row in enumerate(P):
        day = d0 + _dt.timedelta(days=i)
        lines.append(day.isoformat() + "," + ",".join(repr(float(x)) for x in row))
    return "\n".join(lines) + "\n"


def two_regime_price_csv(seed: int = 0) -> tuple[str, list[LatentLinearSCM]]:
    R, scms = two_regime_returns(seed)
    return returns_to_price_csv(R, REGIME_OBSERVED), scms


def stationary_price_csv(seed: int = 0, n: int = 1000, with_link: bool = True,
                         scale: float = 0.01) -> tuple[str, LatentLinearSCM]:
    """Single-regime counterpart of :func:`two_regime_price_csv`."""
    rng = np.random.default_rng(seed)
    scm = regime_scm(with_link)
    return returns_to_price_csv(scale * _sample(scm, n, rng), REGIME_OBSERVED), scm
