"""Weighted estimating equations: closed-form OLS/IV and a Newton Z-solver.

Every estimator here solves

    sum_n w_n b_n G(theta, d_n) = 0

where ``w`` are removal weights (1 = kept, 0 = dropped) and ``b`` the
problem's base weights. For OLS ``G = x (y - x'theta)``; for IV
``G = z (y - x'theta)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .dataset import RANK_TOL, Dataset, RegressionProblem
from .errors import (
    DegenerateSubsetError,
    SingularJacobianError,
    SolverError,
    WeakInstrumentError,
)

__all__ = [
    "JacobianFactor",
    "FitResult",
    "ZEstimatorSpec",
    "fit",
    "fit_ols",
    "fit_iv",
    "solve_zestimator",
    "power_iteration_inverse_norm",
]

SOLVE_TOL = 1e-10
MAX_NEWTON_ITER = 100


def power_iteration_inverse_norm(factor, tol=1e-10, max_iter=1000):
    """Largest singular value of ``A^{-1}`` by power iteration on ``A^{-T}A^{-1}``.

    ``factor`` needs ``solve`` and ``solve_transpose``. Returns
    ``(norm, iterations)``.
    """
    p = factor.shape[0]
    v = np.ones(p) + 0.01 * np.arange(1, p + 1)
    v /= np.linalg.norm(v)
    lam = 0.0
    for it in range(1, max_iter + 1):
        u = factor.solve_transpose(factor.solve(v))
        lam_new = float(v @ u)
        nrm = np.linalg.norm(u)
        if nrm == 0:
            return 0.0, it
        v = u / nrm
        if abs(lam_new - lam) <= tol * abs(lam_new):
            lam = lam_new
            break
        lam = lam_new
    return float(np.sqrt(max(lam, 0.0))), it


class JacobianFactor:
    """SVD ``H = U diag(s) Vt`` of the summed Jacobian, reused for every solve."""

    def __init__(self, U, s, Vt):
        self.U, self.s, self.Vt = U, s, Vt
        self.shape = (U.shape[0], Vt.shape[1])

    @classmethod
    def from_matrix(cls, H):
        U, s, Vt = np.linalg.svd(np.asarray(H, dtype=float))
        return cls(U, s, Vt)

    @property
    def matrix(self):
        return (self.U * self.s) @ self.Vt

    @property
    def rcond(self) -> float:
        return float(self.s[-1] / self.s[0]) if self.s[0] > 0 else 0.0

    def solve(self, b):
        """``H^{-1} b`` for a vector or matrix ``b``."""
        b = np.asarray(b, dtype=float)
        t = self.U.T @ b
        t = t / (self.s if t.ndim == 1 else self.s[:, None])
        return self.Vt.T @ t

    def solve_transpose(self, b):
        """``H^{-T} b``."""
        b = np.asarray(b, dtype=float)
        t = self.Vt @ b
        t = t / (self.s if t.ndim == 1 else self.s[:, None])
        return self.U @ t

    def inverse(self):
        return (self.Vt.T / self.s) @ self.U.T

    def inverse_norm(self, tol=1e-10, max_iter=1000) -> float:
        return power_iteration_inverse_norm(self, tol, max_iter)[0]


@dataclass(frozen=True)
class FitResult:
    """Solution of a weighted estimating equation.

    Attributes
    ----------
    theta_hat : (P,) array
    residuals : (N,) array
        ``y - X theta_hat`` for regressions; ``None`` for general Z-estimators.
    scores : (N, P) array
        Unweighted per-row ``G(theta_hat, d_n)``.
    factor : JacobianFactor
        Factorized ``H(w) = sum_n w_n b_n dG/dtheta``.
    removal_weights, effective_weights : (N,) arrays
    """

    theta_hat: np.ndarray
    residuals: np.ndarray | None
    scores: np.ndarray
    factor: JacobianFactor
    removal_weights: np.ndarray
    effective_weights: np.ndarray
    converged: bool = True
    iterations: int = 0
    kind: str = "ols"

    @property
    def jacobian(self):
        return self.factor.matrix

    @property
    def N(self):
        return self.scores.shape[0]

    @property
    def P(self):
        return self.theta_hat.shape[0]

    def equation_residual(self) -> float:
        """``||sum_n w_n b_n G(theta_hat, d_n)||_inf``."""
        return float(np.max(np.abs(self.effective_weights @ self.scores)))


def _weights(problem: RegressionProblem, w):
    w = np.ones(problem.N) if w is None else np.asarray(w, dtype=float).reshape(-1)
    if w.shape != (problem.N,):
        raise ValueError(f"weight vector has length {w.size}, expected {problem.N}")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    v = w * problem.weights
    if not np.any(v > 0):
        raise DegenerateSubsetError("all effective weights are zero")
    return w, v


def fit_ols(problem: RegressionProblem, w=None) -> FitResult:
    """Weighted least squares via the thin SVD of ``sqrt(v) X``."""
    w, v = _weights(problem, w)
    X, y = problem.X, problem.y
    sv = np.sqrt(v)
    U, s, Vt = np.linalg.svd(sv[:, None] * X, full_matrices=False)
    if s[0] == 0 or s[-1] / s[0] <= RANK_TOL:
        raise DegenerateSubsetError("weighted design is rank deficient for this weight vector")
    theta = Vt.T @ ((U.T @ (sv * y)) / s)
    resid = y - X @ theta
    # H = -X'VX = (-V) diag(s^2) V'
    factor = JacobianFactor(-Vt.T, s**2, Vt)
    return FitResult(theta, resid, X * resid[:, None], factor, w, v, True, 0, "ols")


def fit_iv(problem: RegressionProblem, w=None) -> FitResult:
    """Just-identified IV: ``theta = (Z'VX)^{-1} Z'Vy``."""
    if problem.Z is None:
        raise ValueError("fit_iv requires an instrument matrix")
    w, v = _weights(problem, w)
    X, Z, y = problem.X, problem.Z, problem.y
    Zv = Z * v[:, None]
    M = Zv.T @ X
    U, s, Vt = np.linalg.svd(M)
    if s[0] == 0 or s[-1] / s[0] <= RANK_TOL:
        raise WeakInstrumentError("weighted instrument cross-product Z'VX is singular")
    theta = Vt.T @ ((U.T @ (Zv.T @ y)) / s)
    resid = y - X @ theta
    factor = JacobianFactor(-U, s, Vt)
    return FitResult(theta, resid, Z * resid[:, None], factor, w, v, True, 0, "iv")


def fit(problem: RegressionProblem, w=None) -> FitResult:
    """OLS or IV depending on whether the problem carries instruments."""
    return fit_iv(problem, w) if problem.is_iv else fit_ols(problem, w)


@dataclass(frozen=True)
class ZEstimatorSpec:
    """User-supplied estimating function.

    ``g_eval(theta, d_n)`` returns a length-P vector; ``g_jacobian``, when
    given, returns its P x P derivative in ``theta``. The solver may call
    these from several threads, so they should be free of shared state.
    """

    g_eval: Callable
    theta0: np.ndarray
    g_jacobian: Callable | None = None


def _rows(data):
    if isinstance(data, Dataset):
        return data.rows()
    return list(data)


def _numeric_jacobian(F, theta):
    eps = np.finfo(float).eps ** (1 / 3)
    P = theta.size
    J = np.empty((P, P))
    for j in range(P):
        h = eps * max(1.0, abs(theta[j]))
        tp, tm = theta.copy(), theta.copy()
        tp[j] += h
        tm[j] -= h
        J[:, j] = (F(tp) - F(tm)) / (tp[j] - tm[j])
    return J


def solve_zestimator(
    spec: ZEstimatorSpec,
    data,
    w=None,
    *,
    numeric_jacobian: bool = True,
    tol: float = SOLVE_TOL,
    max_iter: int = MAX_NEWTON_ITER,
    raise_on_failure: bool = True,
) -> FitResult:
    """Newton's method on ``F(theta) = sum_n w_n G(theta, d_n)``.

    Stops when ``||F||_inf <= tol * max(1, ||F(theta0)||_inf)``. Raises
    :class:`SolverError` after ``max_iter`` iterations unless
    ``raise_on_failure`` is false, in which case the returned fit has
    ``converged=False``.
    """
    rows = _rows(data)
    N = len(rows)
    w = np.ones(N) if w is None else np.asarray(w, dtype=float).reshape(-1)
    if w.shape != (N,):
        raise ValueError(f"weight vector has length {w.size}, expected {N}")
    theta = np.array(spec.theta0, dtype=float).reshape(-1)
    if not np.all(np.isfinite(theta)):
        raise ValueError("theta0 must be finite")
    if spec.g_jacobian is None and not numeric_jacobian:
        raise ValueError("no g_jacobian callback and numeric differencing disabled")
    active = np.flatnonzero(w != 0)

    def scores(t):
        return np.array([np.asarray(spec.g_eval(t, rows[n]), dtype=float).reshape(-1)
                         for n in range(N)])

    def F(t):
        G = np.array([np.asarray(spec.g_eval(t, rows[n]), dtype=float).reshape(-1)
                      for n in active])
        return w[active] @ G

    def J(t):
        if spec.g_jacobian is None:
            return _numeric_jacobian(F, t)
        return sum(w[n] * np.asarray(spec.g_jacobian(t, rows[n]), dtype=float)
                   for n in active)

    f = F(theta)
    if f.shape != theta.shape:
        raise ValueError(f"g_eval returned length {f.size}, expected {theta.size}")
    target = tol * max(1.0, float(np.max(np.abs(f))))
    norm = float(np.max(np.abs(f)))
    it = 0
    while norm > target and it < max_iter:
        it += 1
        Jt = J(theta)
        if not np.all(np.isfinite(Jt)) or np.linalg.cond(Jt) > 1 / RANK_TOL:
            raise SingularJacobianError(f"singular Jacobian at iteration {it}")
        step = np.linalg.solve(Jt, -f)
        t_new, f_new = theta + step, F(theta + step)
        # halve the step while the residual grows
        for _ in range(30):
            if np.all(np.isfinite(f_new)) and np.max(np.abs(f_new)) < norm:
                break
            step = step / 2
            t_new, f_new = theta + step, F(theta + step)
        theta, f = t_new, f_new
        norm = float(np.max(np.abs(f)))

    converged = norm <= target
    if not converged and raise_on_failure:
        raise SolverError(f"Newton solver did not converge in {max_iter} iterations "
                          f"(residual {norm:.3e})", theta=theta, residual_norm=norm,
                          iterations=it)
    H = J(theta)
    factor = JacobianFactor.from_matrix(H)
    if factor.rcond <= RANK_TOL:
        raise SingularJacobianError("Jacobian is singular at the solution")
    return FitResult(theta, None, scores(theta), factor, w, w.copy(), converged, it,
                     "zestimator")
