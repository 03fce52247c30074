"""Sandwich covariance (robust, clustered, weighted) and delta-method noise."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import RegressionProblem
from .errors import ConfigError
from .zestim import FitResult

__all__ = [
    "SandwichOptions",
    "CovarianceEstimate",
    "sandwich_covariance",
    "standard_error",
    "se_with_gradients",
    "noise_sigma",
]

_CLUSTER = ("none", "by-label")
_NORM = ("divide-by-N", "divide-by-sum-w")
_SCORE = ("w", "w-squared")
_COMPAT = ("native", "lm-compatible")


@dataclass(frozen=True)
class SandwichOptions:
    """Weighting conventions for the sandwich estimator.

    ``normalization`` sets the scale ``c`` in ``Sigma = c H^{-1} S H^{-T}``
    (``c = N`` or ``c = sum_n v_n``); standard errors are always
    ``sqrt(Sigma_pp / N)``. ``score_weighting`` chooses ``v_n`` or ``v_n^2``
    as the weight of ``G_n G_n'`` in ``S``. ``lm-compatible`` replaces the
    sandwich with the classical homoskedastic covariance
    ``s^2 H^{-1} (Z'VZ) H^{-T}``, ``s^2 = sum v e^2 / (n_pos - P)``.
    """

    cluster_mode: str = "none"
    normalization: str = "divide-by-N"
    score_weighting: str = "w"
    se_compat: str = "native"

    def __post_init__(self):
        for value, allowed, name in [
            (self.cluster_mode, _CLUSTER, "cluster_mode"),
            (self.normalization, _NORM, "normalization"),
            (self.score_weighting, _SCORE, "score_weighting"),
            (self.se_compat, _COMPAT, "se_compat"),
        ]:
            if value not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {value!r}")
        if self.se_compat == "lm-compatible" and self.cluster_mode != "none":
            raise ConfigError("lm-compatible standard errors do not support clustering")

    @classmethod
    def lm_compatible(cls):
        return cls(se_compat="lm-compatible")


@dataclass(frozen=True)
class CovarianceEstimate:
    sigma_theta: np.ndarray
    standard_errors: np.ndarray
    min_eigenvalue: float
    n: int

    @property
    def has_negative_eigenvalues(self) -> bool:
        scale = max(float(np.max(np.abs(self.sigma_theta))), 1e-300)
        return self.min_eigenvalue < -1e-8 * scale


def _cluster_codes(problem, opts):
    if opts.cluster_mode == "by-label":
        if problem.clusters is None:
            raise ConfigError("cluster_mode='by-label' but the problem has no cluster labels")
        return problem.clusters
    return np.arange(problem.N)


def _score_root(v, opts):
    """Per-row multiplier r_n with S = sum_g (sum_{n in g} r_n G_n)(...)'."""
    return v if opts.score_weighting == "w-squared" else np.sqrt(v)


def _score_root_deriv(v, b, opts):
    """d r_n / d w_n, with v = w b."""
    if opts.score_weighting == "w-squared":
        return b.copy()
    out = np.zeros_like(v)
    pos = v > 0
    out[pos] = b[pos] / (2 * np.sqrt(v[pos]))
    return out


def _meat(fit, problem, opts):
    r = _score_root(fit.effective_weights, opts)
    weighted = fit.scores * r[:, None]
    codes = _cluster_codes(problem, opts)
    sums = np.zeros((codes.max() + 1, fit.P))
    np.add.at(sums, codes, weighted)
    return sums.T @ sums


def _lm_dof(fit):
    dof = int(np.count_nonzero(fit.effective_weights > 0)) - fit.P
    if dof <= 0:
        raise ConfigError("lm-compatible standard errors need more positive-weight rows than P")
    return dof


def sandwich_covariance(
    fit: FitResult,
    problem: RegressionProblem,
    w=None,
    opts: SandwichOptions | None = None,
) -> CovarianceEstimate:
    """Covariance of ``sqrt(N)(theta_hat - theta_0)`` at the fit's weights.

    ``w`` is accepted for symmetry with the fit signature; when given it must
    equal ``fit.removal_weights`` (refit first for other weights).
    """
    opts = opts or SandwichOptions()
    if w is not None and not np.array_equal(np.asarray(w, dtype=float), fit.removal_weights):
        raise ValueError("w differs from the fit's weights; refit before computing covariance")
    N = problem.N
    v = fit.effective_weights
    Hinv = fit.factor.inverse()
    if opts.se_compat == "lm-compatible":
        Zm = problem.instruments
        s2 = float(v @ fit.residuals**2) / _lm_dof(fit)
        V = s2 * Hinv @ ((Zm * v[:, None]).T @ Zm) @ Hinv.T
        sigma = N * V
    else:
        scale = N if opts.normalization == "divide-by-N" else float(v.sum())
        sigma = scale * Hinv @ _meat(fit, problem, opts) @ Hinv.T
    sigma = (sigma + sigma.T) / 2
    eig = np.linalg.eigvalsh(sigma)
    se = np.sqrt(np.clip(np.diag(sigma), 0, None) / N)
    return CovarianceEstimate(sigma, se, float(eig[0]), N)


def standard_error(fit, problem, index, opts=None) -> float:
    return float(sandwich_covariance(fit, problem, None, opts).standard_errors[index])


def se_with_gradients(fit: FitResult, problem: RegressionProblem, index: int,
                      opts: SandwichOptions | None = None):
    """Standard error of coordinate ``index`` and its partial derivatives.

    Returns ``(se, d_theta, d_w)`` where ``d_theta`` (length P) is the
    partial derivative in theta with weights held fixed and ``d_w``
    (length N) the explicit derivative in the removal weights with theta
    held fixed. Closed forms for OLS/IV, where ``dG_n/dtheta = -z_n x_n'``.
    """
    if fit.residuals is None:
        raise NotImplementedError("standard-error derivatives are available for OLS/IV only")
    opts = opts or SandwichOptions()
    N = problem.N
    X, Zm, e = problem.X, problem.instruments, fit.residuals
    b = problem.weights
    v = fit.effective_weights
    ep = np.zeros(fit.P)
    ep[index] = 1.0
    u = fit.factor.solve_transpose(ep)          # row `index` of H^{-1}
    a = Zm @ u
    Hinv_x = lambda vec: fit.factor.solve(vec)  # noqa: E731

    if opts.se_compat == "lm-compatible":
        dof = _lm_dof(fit)
        s2 = float(v @ e**2) / dof
        Q = (Zm * v[:, None]).T @ Zm
        quad = float(u @ Q @ u)
        se2 = s2 * quad
        ds2_dtheta = -2 * (X.T @ (v * e)) / dof
        ds2_dw = b * e**2 / dof
        k = Hinv_x(Q @ u)
        dquad_dw = 2 * b * a * (X @ k) + b * a**2
        d_theta = ds2_dtheta * quad
        d_w = ds2_dw * quad + s2 * dquad_dw
    else:
        r = _score_root(v, opts)
        dr = _score_root_deriv(v, b, opts)
        codes = _cluster_codes(problem, opts)
        T = np.zeros(codes.max() + 1)
        np.add.at(T, codes, r * a * e)
        Tn = T[codes]
        quad = float(T @ T)                     # u' S u
        S = _meat(fit, problem, opts)
        k = Hinv_x(S @ u)
        dquad_dtheta = -2 * X.T @ (Tn * r * a)
        dquad_dw = 2 * Tn * dr * a * e + 2 * b * a * (X @ k)
        if opts.normalization == "divide-by-N":
            c, dc = float(N), np.zeros(N)
        else:
            c, dc = float(v.sum()), b
        se2 = c / N * quad
        d_theta = c / N * dquad_dtheta
        d_w = (dc * quad + c * dquad_dw) / N

    se = float(np.sqrt(max(se2, 0.0)))
    if se == 0:
        return 0.0, np.zeros(fit.P), np.zeros(N)
    return se, d_theta / (2 * se), d_w / (2 * se)


def noise_sigma(fit: FitResult, qoi, cov: CovarianceEstimate, problem=None) -> float:
    """Delta-method noise ``sqrt(g' Sigma g)`` with ``g = d phi / d theta``."""
    from .influence import qoi_gradients

    g, _ = qoi_gradients(qoi, fit, problem, need_w=False)
    val = float(g @ cov.sigma_theta @ g)
    return float(np.sqrt(max(val, 0.0)))
