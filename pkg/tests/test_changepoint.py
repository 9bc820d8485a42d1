import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from latentcausal.changepoint import DeclarationRule, bocpd, mean_return_series, segment
from latentcausal.simulate import Dataset


def test_null_series_quiet():
    quiet = sum(not bocpd(np.random.default_rng(s).standard_normal(1000)).change_points for s in range(30))
    assert quiet >= 27


def test_mean_shift_example():
    x = np.random.default_rng(0).standard_normal(1000)
    x[500:] += 3
    cps = bocpd(x).change_points
    assert len(cps) == 1 and 480 <= cps[0] <= 520


def test_variance_shift_example():
    hits = 0
    for s in range(10):
        x = np.random.default_rng(s).standard_normal(1000)
        x[500:] *= 3
        cps = bocpd(x).change_points
        hits += len(cps) >= 1 and any(470 <= c <= 530 for c in cps)
    assert hits >= 6


def test_bare_rule_available():
    x = np.random.default_rng(0).standard_normal(1000)
    x[500:] += 3
    rep = bocpd(x, rule=DeclarationRule(max_run=5, confirm=0))
    assert any(abs(c - 500) <= 20 for c in rep.change_points)


def test_input_validation():
    with pytest.raises(ValueError):
        bocpd(np.zeros(5))
    with pytest.raises(ValueError):
        bocpd(np.zeros(50), hazard=1.5)
    with pytest.raises(ValueError):
        bocpd(np.r_[np.zeros(49), np.nan])


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(20, 300))
def test_rows_sum_to_one_and_deterministic(seed, n):
    x = np.random.default_rng(seed).standard_normal(n)
    a, b = bocpd(x), bocpd(x)
    np.testing.assert_allclose(a.run_length_posterior.sum(axis=1), 1.0, atol=1e-8)
    assert np.array_equal(a.run_length_posterior, b.run_length_posterior)
    assert a.change_points == b.change_points


def test_report_outputs():
    x = np.random.default_rng(0).standard_normal(100)
    rep = bocpd(x)
    assert rep.mode_path_csv().startswith("t,mode_run_length\n0,")
    assert '"change_points"' in rep.to_json()


def test_mean_series_examples():
    d = Dataset(["a"], np.arange(5.0))
    assert np.array_equal(mean_return_series(d), np.arange(5.0))
    d = Dataset(["a", "b"], np.column_stack([np.arange(5.0), -np.arange(5.0)]))
    assert np.all(mean_return_series(d) == 0)
    d = Dataset(["a", "b"], np.column_stack([np.full(4, 1.0), np.full(4, 3.0)]))
    assert np.all(mean_return_series(d) == 2.0)


def _d(n):
    return Dataset(["a"], np.arange(float(n)))


def test_segment_examples():
    d = _d(1000)
    assert [s.n for s in segment(d, [])] == [1000]
    assert [s.n for s in segment(d, [500])] == [500, 500]
    segs = segment(d, [10, 500], min_len=100)
    assert [(s.samples[0, 0], s.n) for s in segs] == [(0.0, 500), (500.0, 500)]
    with pytest.raises(ValueError):
        segment(d, [0])


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 600), st.lists(st.integers(1, 599), max_size=6, unique=True), st.integers(1, 150))
def test_segments_partition_rows(n, cps, min_len):
    cps = [c for c in cps if c < n]
    segs = segment(_d(n), cps, min_len)
    assert np.array_equal(np.concatenate([s.samples for s in segs]), _d(n).samples)
