import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from amipkit.dataset import RegressionProblem
from amipkit.errors import BoundsError, MissingGradientError
from amipkit.influence import (custom_qoi, dtheta_dw, influence_scores, linear_qoi, make_qoi,
                               parameter_qoi, qoi_value)
from amipkit.sandwich import SandwichOptions
from amipkit.zestim import ZEstimatorSpec, fit, fit_ols, solve_zestimator

from conftest import fd_scores, random_problem

KINDS = ("parameter", "sign-change", "significance-change", "sign-and-significance")


def test_sample_mean_rows():
    spec = ZEstimatorSpec(lambda t, d: t - d, [0.0])
    f = solve_zestimator(spec, [1.0, 2.0, 3.0])
    np.testing.assert_allclose(dtheta_dw(f)[:, 0], [-1 / 3, 0, 1 / 3], atol=1e-9)


def test_ols_toy_rows(toy):
    np.testing.assert_allclose(dtheta_dw(fit_ols(toy))[:, 0], [-0.16, 0.16])


def test_perfect_fit_zero_rows():
    x = np.array([1.0, 2.0, 3.0])
    f = fit_ols(RegressionProblem(2 * x, x))
    np.testing.assert_allclose(dtheta_dw(f), 0, atol=1e-14)


def test_parameter_kind_is_column(rng):
    p = random_problem(rng, P=3)
    f = fit(p)
    psi = influence_scores(f, p, make_qoi("parameter", f, p, 1)).psi
    np.testing.assert_allclose(psi, dtheta_dw(f, p)[:, 1])


def test_sign_change_toy(toy):
    f = fit_ols(toy)
    q = make_qoi("sign-change", f, toy, 0)
    np.testing.assert_allclose(influence_scores(f, toy, q).psi, [0.16, -0.16])
    assert q.delta == pytest.approx(1.8)


@pytest.mark.parametrize("iv", [False, True])
@pytest.mark.parametrize("opts", [SandwichOptions(), SandwichOptions(score_weighting="w-squared"),
                                  SandwichOptions(normalization="divide-by-sum-w"),
                                  SandwichOptions.lm_compatible()])
def test_finite_differences_all_kinds(iv, opts):
    r = np.random.default_rng(11)
    p = random_problem(r, iv=iv, N=20, P=3, weights=True)
    f = fit(p)
    qois = [make_qoi(k, f, p, 2, opts) for k in KINDS]
    fd = fd_scores(p, qois)
    for q, ref in zip(qois, fd):
        psi = influence_scores(f, p, q).psi
        np.testing.assert_allclose(psi, ref, rtol=0, atol=1e-6 * np.abs(ref).max())


def _prescribed(theta, se):
    # x'e = 0 and SE^2 = sum(e^2) / 16 for this design
    x = np.array([-1.0, 1.0, -1.0, 1.0])
    e = 2 * se * np.array([1.0, 1.0, -1.0, -1.0])
    return RegressionProblem(theta * x + e, x)


def test_delta_formulas():
    p = _prescribed(-4.55, 5.88)
    f = fit_ols(p)
    assert f.theta_hat[0] == pytest.approx(-4.55)
    assert make_qoi("sign-and-significance", f, p, 0).delta == pytest.approx(4.55 + 1.96 * 5.88)
    assert make_qoi("sign-and-significance", f, p, 0).delta == pytest.approx(16.07, abs=0.01)
    p = _prescribed(1.0, 0.1)
    f = fit_ols(p)
    assert make_qoi("significance-change", f, p, 0).delta == pytest.approx(0.804)


def test_zero_estimate_sign_delta():
    x = np.array([1.0, -1.0, 2.0, -2.0])
    p = RegressionProblem([1.0, 1.0, 1.0, 1.0], x)
    f = fit_ols(p)
    assert make_qoi("sign-change", f, p, 0).delta == pytest.approx(0, abs=1e-15)


def test_already_insignificant_targets_gaining(rng):
    x = rng.normal(size=30)
    p = RegressionProblem(0.01 * x + rng.normal(size=30), x)
    f = fit_ols(p)
    q = make_qoi("significance-change", f, p, 0)
    theta = f.theta_hat[0]
    assert q.delta > 0
    assert q.direction == (1 if theta >= 0 else -1)
    assert qoi_value(q, f, p) + q.delta == pytest.approx(0, abs=1e-12)


def test_bad_index():
    p = RegressionProblem([1, 2, 3], [1, 2, 4])
    with pytest.raises(BoundsError):
        make_qoi("sign-change", fit_ols(p), p, 3)


def test_custom_needs_gradient():
    with pytest.raises(MissingGradientError):
        custom_qoi(lambda t, w: t[0])


def test_custom_matches_builtin(rng):
    p = random_problem(rng, P=2)
    f = fit(p)
    c = custom_qoi(lambda t, w: t[1] ** 2, lambda t, w: np.array([0.0, 2 * t[1]]))
    psi = influence_scores(f, p, c).psi
    np.testing.assert_allclose(psi, 2 * f.theta_hat[1] * dtheta_dw(f, p)[:, 1])


def test_linearity_of_combinations(rng):
    p = random_problem(rng, P=3)
    f = fit(p)
    a = make_qoi("sign-change", f, p, 1)
    b = make_qoi("significance-change", f, p, 2)
    combo = 2.0 * a + b
    lhs = influence_scores(f, p, combo).psi
    rhs = 2 * influence_scores(f, p, a).psi + influence_scores(f, p, b).psi
    np.testing.assert_allclose(lhs, rhs, atol=1e-14)


def test_leverage_identity(rng):
    for _ in range(20):
        x = rng.normal(size=15)
        p = RegressionProblem(rng.normal(size=15), x)
        f = fit_ols(p)
        for n in range(p.N):
            psi = influence_scores(f, p, linear_qoi(p.X[n])).psi
            h = x[n] ** 2 / (x @ x)
            assert psi[n] == pytest.approx(h * f.residuals[n], rel=1e-12, abs=1e-15)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), iv=st.booleans())
def test_zero_sum_property(seed, iv):
    r = np.random.default_rng(seed)
    p = random_problem(r, iv=iv)
    f = fit(p)
    for kind in ("parameter", "sign-change"):
        psi = influence_scores(f, p, make_qoi(kind, f, p, 0)).psi
        assert abs(psi.sum()) <= 1e-8 * p.N * np.abs(psi).max()


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_permutation_equivariance(seed):
    r = np.random.default_rng(seed)
    p = random_problem(r, P=2)
    perm = r.permutation(p.N)
    q = RegressionProblem(p.y[perm], p.X[perm])
    a = influence_scores(fit(p), p, parameter_qoi(1, 2)).psi
    b = influence_scores(fit(q), q, parameter_qoi(1, 2)).psi
    np.testing.assert_allclose(b, a[perm], atol=1e-12)
