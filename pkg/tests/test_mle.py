import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from latentcausal import fixtures as F
from latentcausal.graph import DirectedGraph
from latentcausal.mle import (NON_PD_CAP, DimensionMismatchError, UnidentifiableStructureError, _Model,
                              _objective, _sigma, fit_coefficients, neg_log_likelihood, rescale_latents)
from latentcausal.simulate import LatentLinearSCM, covariance_block, sample_scm

EX2 = F.one_factor_scm()
OBS = EX2.observed_names


def true_theta(scm):
    m = _Model(scm.graph)
    return m, m.pack(scm.A, scm.psi)


def test_truth_is_gaussian_entropy():
    m, th = true_theta(EX2)
    S = covariance_block(EX2, OBS, OBS)
    n = 1000
    q = len(OBS)
    expected = 0.5 * n * (q * math.log(2 * math.pi) + np.linalg.slogdet(S)[1] + q)
    assert neg_log_likelihood(EX2.graph, th, S, n) == pytest.approx(expected, rel=1e-12)


def test_identity_case():
    g = DirectedGraph.from_names(["X1", "X2"], [], [])
    n = 10
    val = neg_log_likelihood(g, np.zeros(2), np.eye(2), n)
    assert val == pytest.approx(n * 2 / 2 * (math.log(2 * math.pi) + 1))


def test_perturbation_increases():
    m, th = true_theta(EX2)
    S = covariance_block(EX2, OBS, OBS)
    base = neg_log_likelihood(EX2.graph, th, S, 100)
    for k in range(len(m.edges)):
        for dlt in (0.1, -0.1):
            t2 = th.copy()
            t2[k] += dlt
            assert neg_log_likelihood(EX2.graph, t2, S, 100) > base


def test_errors():
    m, th = true_theta(EX2)
    with pytest.raises(DimensionMismatchError):
        neg_log_likelihood(EX2.graph, th, np.eye(3), 10)
    with pytest.raises(DimensionMismatchError):
        neg_log_likelihood(EX2.graph, th[:-1], np.eye(4), 10)
    bad = DirectedGraph.from_names(["X1"], ["L1"], [("L1", "X1")])
    with pytest.raises(UnidentifiableStructureError):
        fit_coefficients(bad, (np.eye(1), 100))


def test_non_pd_capped():
    g = DirectedGraph.from_names(["X1"], [], [])
    assert neg_log_likelihood(g, np.array([-800.0]), np.eye(1), 10) == NON_PD_CAP


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_gradient_matches_finite_differences(seed):
    scm = F.nested_latent_scm()
    m = _Model(scm.graph)
    obs = scm.observed_names
    S = covariance_block(scm, obs, obs)
    rng = np.random.default_rng(seed)
    th = np.concatenate([rng.uniform(-1.2, 1.2, len(m.edges)), rng.uniform(-0.5, 0.5, m.p)])
    f0, g = _objective(m, th, S, 1e3)
    if f0 >= NON_PD_CAP:
        return
    h = 1e-5
    fd = np.array([(_objective(m, th + h * e, S, 1e3)[0] - _objective(m, th - h * e, S, 1e3)[0]) / (2 * h)
                   for e in np.eye(m.dim)])
    assert np.linalg.norm(fd - g) <= 1e-4 * max(np.linalg.norm(fd), 1.0)


def test_rescaling_preserves_observed_covariance():
    m = _Model(EX2.graph)
    A = EX2.A * 1.7
    psi = EX2.psi.copy()
    psi[m.lat] = 3.0
    A2, psi2 = rescale_latents(EX2.graph, A, psi)
    S1 = _sigma(m, A, psi)[1][np.ix_(m.obs, m.obs)]
    S2 = _sigma(m, A2, psi2)[1]
    np.testing.assert_allclose(S2[np.ix_(m.obs, m.obs)], S1, atol=1e-10)
    assert S2[m.lat[0], m.lat[0]] == pytest.approx(1.0)


def test_sign_flip_invariance():
    m, th = true_theta(EX2)
    S = covariance_block(EX2, OBS, OBS)
    flipped = th.copy()
    flipped[: len(m.edges)] *= -1  # every edge touches L1
    assert _objective(m, th, S, 1e3)[0] == pytest.approx(_objective(m, flipped, S, 1e3)[0], rel=1e-12)


@pytest.mark.slow
def test_one_factor_recovery():
    fit = fit_coefficients(EX2.graph, sample_scm(EX2, 100_000, seed=0), restarts=10)
    assert fit.converged
    for x, w in F.ONE_FACTOR_COEFS.items():
        assert abs(fit.A_hat[("L1", x)]) == pytest.approx(w, abs=0.05)
    assert fit.psi_hat["L1"] == pytest.approx(1.0, abs=1e-6)


def test_observed_chain_is_ols():
    scm = LatentLinearSCM.from_edges(["X1", "X2"], [], {("X1", "X2"): 2.0})
    d = sample_scm(scm, 20_000, seed=1)
    fit = fit_coefficients(scm.graph, d, restarts=3)
    ols = np.cov(d.col("X1"), d.col("X2"))[0, 1] / np.var(d.col("X1"), ddof=1)
    assert fit.A_hat[("X1", "X2")] == pytest.approx(ols, rel=0.02)


def test_empty_structure():
    g = DirectedGraph.from_names(["X1", "X2"], [], [])
    d = sample_scm(LatentLinearSCM.from_edges(["X1", "X2"], [], {}, psi=2.0), 5000, seed=0)
    fit = fit_coefficients(g, d, restarts=2)
    assert fit.A_hat == {}
    assert fit.psi_hat["X1"] == pytest.approx(np.var(d.col("X1"), ddof=1), rel=1e-4)


def test_loglik_best_over_restarts_and_monotone():
    d = sample_scm(EX2, 5000, seed=2)
    lls = [fit_coefficients(EX2.graph, d, restarts=r, seed=3).loglik for r in (1, 3, 6)]
    assert lls[0] <= lls[1] + 1e-9 <= lls[2] + 2e-9
    fit = fit_coefficients(EX2.graph, d, restarts=4, seed=3)
    assert fit.loglik == pytest.approx(max(fit.history))
    assert '"restarts_used": 4' in fit.to_json()
