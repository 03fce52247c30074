import numpy as np
import pytest

from amipkit.dataset import RegressionProblem
from amipkit.errors import ConfigError
from amipkit.influence import influence_scores, make_qoi, parameter_qoi
from amipkit.sandwich import SandwichOptions, noise_sigma, sandwich_covariance
from amipkit.zestim import fit, fit_ols

from conftest import random_problem


def test_toy_sandwich(toy):
    cov = sandwich_covariance(fit_ols(toy), toy)
    assert cov.sigma_theta[0, 0] == pytest.approx(0.1024)
    assert cov.standard_errors[0] == pytest.approx(np.sqrt(0.1024 / 2))


def test_exact_fit_zero():
    x = np.array([1.0, 2.0, 4.0])
    p = RegressionProblem(2 * x, x)
    assert sandwich_covariance(fit_ols(p), p).sigma_theta[0, 0] == pytest.approx(0, abs=1e-20)


def test_singleton_clusters_change_nothing(rng):
    p = random_problem(rng, P=3, weights=True)
    q = RegressionProblem(p.y, p.X, base_weights=p.base_weights, clusters=np.arange(p.N))
    w = rng.uniform(0.3, 1, p.N)
    for sw in ("w", "w-squared"):
        a = sandwich_covariance(fit(p, w), p, None, SandwichOptions(score_weighting=sw))
        b = sandwich_covariance(fit(q, w), q, None,
                                SandwichOptions(cluster_mode="by-label", score_weighting=sw))
        np.testing.assert_allclose(a.sigma_theta, b.sigma_theta, rtol=1e-12)


def test_cluster_labels_required(rng):
    p = random_problem(rng, P=2)
    with pytest.raises(ConfigError):
        sandwich_covariance(fit(p), p, None, SandwichOptions(cluster_mode="by-label"))


def test_lm_compat_matches_classical_ols(rng):
    p = random_problem(rng, P=3)
    f = fit_ols(p)
    cov = sandwich_covariance(f, p, None, SandwichOptions.lm_compatible())
    s2 = f.residuals @ f.residuals / (p.N - p.P)
    classical = np.sqrt(np.diag(s2 * np.linalg.inv(p.X.T @ p.X)))
    np.testing.assert_allclose(cov.standard_errors, classical, rtol=1e-10)


def test_noise_sigma_unit_gradient(toy):
    f = fit_ols(toy)
    cov = sandwich_covariance(f, toy)
    assert noise_sigma(f, parameter_qoi(0, 1), cov, toy) == pytest.approx(0.32)


def test_noise_identity(rng):
    for iv in (False, True):
        p = random_problem(rng, iv=iv)
        f = fit(p)
        cov = sandwich_covariance(f, p)
        # the identity is for quantities with no explicit weight dependence
        for kind in ("parameter", "sign-change"):
            q = make_qoi(kind, f, p, p.P - 1)
            psi = influence_scores(f, p, q).psi
            sig = noise_sigma(f, q, cov, p)
            assert sig == pytest.approx(np.sqrt(p.N) * np.linalg.norm(psi), rel=1e-8)


def test_noise_tends_to_variance_ratio():
    r = np.random.default_rng(7)
    N, sx, se = 100_000, 2.0, 3.0
    x = sx * r.normal(size=N)
    p = RegressionProblem(-x + se * r.normal(size=N), x[:, None])
    f = fit_ols(p)
    sig = noise_sigma(f, parameter_qoi(0, 1), sandwich_covariance(f, p), p)
    assert sig**2 == pytest.approx(se**2 / sx**2, rel=0.05)


def test_bad_option_rejected():
    with pytest.raises(ConfigError):
        SandwichOptions(normalization="nope")
