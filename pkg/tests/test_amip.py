import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from amipkit.amip import (amip_path, amis, apip, brute_force_mip, decompose, gamma_bound,
                          refit_lower_bound)
from amipkit.dataset import RegressionProblem
from amipkit.errors import AlphaTooSmallError, EnumerationTooLargeError
from amipkit.influence import InfluenceVector, influence_scores, make_qoi, parameter_qoi
from amipkit.sandwich import noise_sigma, sandwich_covariance
from amipkit.zestim import fit, fit_ols

from conftest import random_problem


def iv_of(psi):
    psi = np.asarray(psi, dtype=float)
    return InfluenceVector(psi, np.argsort(psi, kind="stable"))


def sample_mean(x):
    x = np.asarray(x, dtype=float)
    return RegressionProblem(x, np.ones((x.size, 1)))


def test_amis_toy():
    r = amis(iv_of([-0.16, 0.16]), 0.5)
    assert list(r.dropped_indices) == [0]
    assert r.amip == pytest.approx(0.16)
    np.testing.assert_array_equal(r.w_star, [0, 1])


def test_amis_nonnegative_scores():
    r = amis(iv_of([0.0, 1.0, 2.0, 0.5]), 0.5)
    assert r.n_dropped == 0 and r.amip == 0


def test_amis_greedy():
    r = amis(iv_of([1.0, -2.0, 4.0, -3.0, -1.0, 0.5]), 2 / 6)
    assert sorted(r.dropped_indices) == [1, 3]
    assert r.amip == pytest.approx(5)


def test_alpha_too_small():
    with pytest.raises(AlphaTooSmallError):
        amis(iv_of([-1.0, 1.0]), 0.1)


def test_apip_examples():
    assert apip(iv_of([-0.16, 0.16]), 0.0).m_removed == 1
    na = apip(iv_of([-0.16, 0.16]), 1.8)
    assert na.is_na and na.alpha_star is None
    r = apip(iv_of([-3.0, -2.0, -1.0, 4.0, 2.0]), 4.5)
    assert r.m_removed == 2
    np.testing.assert_allclose(r.cumulative_path, [3, 5, 6])
    # strict crossing
    assert apip(iv_of([-3.0, -2.0, 5.0]), 5.0).is_na


def test_refit_toy(toy):
    f = fit_ols(toy)
    q = parameter_qoi(0, 1)
    res = refit_lower_bound(toy, f, q, amis(influence_scores(f, toy, q), 0.5))
    assert res.phi_after == pytest.approx(2.0)
    assert res.exact_change == pytest.approx(0.2)
    assert res.predicted_change == pytest.approx(0.16)


def test_refit_empty_and_sample_mean():
    p = sample_mean([1.0, 2.0, 3.0])
    f = fit(p)
    q = parameter_qoi(0, 1)
    assert refit_lower_bound(p, f, q, np.array([], dtype=int)).exact_change == 0
    inf = influence_scores(f, p, q)
    res = refit_lower_bound(p, f, q, amis(inf, 1 / 3))
    assert list(res.dropped_indices) == [0]
    assert res.phi_after == pytest.approx(2.5)
    assert res.exact_change == pytest.approx(0.5)


def test_decomposition_identity(rng):
    p = random_problem(rng, P=3)
    f = fit(p)
    for kind in ("sign-change", "significance-change"):
        q = make_qoi(kind, f, p, 1)
        inf = influence_scores(f, p, q)
        sig = noise_sigma(f, q, sandwich_covariance(f, p), p)
        am = amis(inf, 0.1)
        d = decompose(inf, am, sig)
        assert am.amip == pytest.approx(d.sigma_psi * d.gamma_alpha, rel=1e-10)


def test_decomposition_degenerate():
    d = decompose(iv_of([0.0, 0.0]), amis(iv_of([0.0, 0.0]), 0.5), 0.0)
    assert d.degenerate and math.isnan(d.gamma_alpha)


def test_gamma_bound_equality_fixture():
    # one low value and the rest equal: dropped gammas are all equal
    N, alpha = 100, 0.01
    psi = np.full(N, 1.0 / (N - 1))
    psi[0] = -1.0
    psi -= psi.mean()
    inf = iv_of(psi)
    sigma = np.sqrt(N) * np.linalg.norm(psi)
    d = decompose(inf, amis(inf, alpha), sigma)
    assert d.gamma_alpha == pytest.approx(gamma_bound(alpha), rel=1e-12)
    assert gamma_bound(0.01) == pytest.approx(0.0995, abs=5e-5)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), alpha=st.floats(0.01, 0.9))
def test_gamma_bound_holds(seed, alpha):
    r = np.random.default_rng(seed)
    N = int(r.integers(5, 200))
    psi = r.standard_t(3, N)
    psi -= psi.mean()
    inf = iv_of(psi)
    sigma = np.sqrt(N) * np.linalg.norm(psi)
    if math.floor(alpha * N + 1e-9) < 1:
        return
    d = decompose(inf, amis(inf, alpha), sigma)
    assert abs(d.gamma_alpha) <= d.gamma_bound * (1 + 1e-12)


@settings(max_examples=60, deadline=None)
@given(psi=st.lists(st.floats(-10, 10), min_size=2, max_size=60))
def test_path_concave_nondecreasing(psi):
    path = amip_path(iv_of(psi))
    steps = np.diff(path)
    assert np.all(steps >= 0)
    assert np.all(np.diff(steps) <= 1e-12)


@settings(max_examples=40, deadline=None)
@given(a=st.lists(st.floats(-5, 5), min_size=10, max_size=10),
       b=st.lists(st.floats(-5, 5), min_size=10, max_size=10),
       c=st.floats(0, 10))
def test_amip_is_a_seminorm(a, b, c):
    def m(v):
        return amis(iv_of(v), 0.3).amip
    a, b = np.array(a), np.array(b)
    assert m(c * a) == pytest.approx(c * m(a), abs=1e-9)
    assert m(a + b) <= m(a) + m(b) + 1e-9


def test_brute_force_examples(toy):
    p = sample_mean([2.0, 1.0, 3.0])
    bf = brute_force_mip(p, parameter_qoi(0, 1), 1)
    assert bf.exact_mis == (1,)
    f = fit_ols(toy)
    q = parameter_qoi(0, 1)
    bf = brute_force_mip(toy, q, 1, f)
    ref = refit_lower_bound(toy, f, q, amis(influence_scores(f, toy, q), 0.5))
    assert bf.exact_mip == pytest.approx(0.2)
    assert bf.exact_mip >= 0.16
    assert ref.exact_change == pytest.approx(bf.exact_mip)


def test_brute_force_dominates_refit(rng):
    for _ in range(50):
        p = random_problem(rng, N=10, P=2)
        f = fit(p)
        q = make_qoi("sign-change", f, p, 1)
        am = amis(influence_scores(f, p, q), 0.2)
        ref = refit_lower_bound(p, f, q, am)
        assert ref.exact_change <= brute_force_mip(p, q, 2, f).exact_mip + 1e-12


def test_enumeration_refused():
    p = sample_mean(np.arange(200.0))
    with pytest.raises(EnumerationTooLargeError):
        brute_force_mip(p, parameter_qoi(0, 1), 5)


def test_amip_does_not_vanish_with_n():
    amips, ses = {}, {}
    for N in (1_000, 10_000, 100_000):
        vals = []
        for seed in range(3):
            r = np.random.default_rng([seed, N])
            x = r.normal(size=N)
            p = RegressionProblem(x + r.normal(size=N), x)
            f = fit_ols(p)
            vals.append(amis(influence_scores(f, p, parameter_qoi(0, 1)), 0.01).amip)
            ses.setdefault(N, sandwich_covariance(f, p).standard_errors[0])
        amips[N] = np.median(vals)
    assert max(amips.values()) / min(amips.values()) < 1.5
    assert ses[1_000] / ses[100_000] == pytest.approx(10, rel=0.2)
