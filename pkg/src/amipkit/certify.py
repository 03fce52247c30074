"""Finite-sample error certificates for the linear approximation (OLS/IV).

All constants come from the original fit; no additional regressions are run.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .dataset import RegressionProblem
from .influence import QuantityOfInterest, dtheta_dw, qoi_gradients
from .zestim import FitResult

__all__ = [
    "CONDITION_THRESHOLD",
    "CertificateConstants",
    "ErrorCertificate",
    "compute_constants",
    "certify_theta",
    "certify_qoi",
]

CONDITION_THRESHOLD = 1 / 3


@dataclass(frozen=True)
class CertificateConstants:
    alpha: float
    n_dropped: int
    C_op: float
    C_op_scaled: float
    xi1: float
    xi2: float
    lin_change: float
    C_ball: float
    condition_value: float

    @property
    def condition_holds(self) -> bool:
        return self.condition_value <= CONDITION_THRESHOLD

    def as_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class ErrorCertificate:
    """Bounds on ``||theta(w) - theta_lin(w)||`` and ``||theta(w) - theta(1)||``.

    ``valid`` is false when the regularity condition fails or required
    smoothness data are missing; ``reason`` then says why and the bounds are
    ``None``. ``qoi_bound`` and ``qoi_diff_bound`` bound
    ``|phi(w) - phi_lin(w)|`` and ``|phi(w) - phi(1)|``.
    """

    constants: CertificateConstants
    bound_lin: float | None
    bound_diff: float | None
    valid: bool
    reason: str | None = None
    qoi_bound: float | None = None
    qoi_diff_bound: float | None = None
    alternate: dict | None = None

    def as_dict(self):
        d = asdict(self)
        d["constants"] = self.constants.as_dict()
        return d


def _dropped(w, N):
    w = np.asarray(w, dtype=float).reshape(-1)
    if w.shape != (N,):
        raise ValueError(f"weight vector has length {w.size}, expected {N}")
    if not np.all((w == 0) | (w == 1)):
        raise ValueError("certificates need 0/1 weight vectors")
    return w, np.flatnonzero(w == 0)


def _c_ball(lin_change, alpha, c_hat, xi1, xi2):
    denom = 1 - 2 * alpha**2 * c_hat**2 * xi1**2
    if denom <= 0:
        return float("inf")
    return (lin_change + 2 * alpha**2 * c_hat**2 * xi1 * xi2) / denom


def compute_constants(problem: RegressionProblem, fit: FitResult, w,
                      lin_change: float | None = None) -> CertificateConstants:
    """Constants of the parameter-level bound for the 0/1 weight vector ``w``.

    ``fit`` must be the full-data fit. ``C_op`` is found by power iteration
    on the cached Jacobian factorization. ``lin_change`` defaults to
    ``||theta_lin(w) - theta_hat||_2``.
    """
    if fit.residuals is None:
        raise NotImplementedError("certificates are available for OLS/IV only")
    N = problem.N
    w, D = _dropped(w, N)
    # ||(N^{-1} sum z x')^{-1}|| = N ||H^{-1}||
    c_op = N * fit.factor.inverse_norm()
    if D.size == 0:
        return CertificateConstants(0.0, 0, c_op, 1.5 * c_op, 0.0, 0.0, 0.0, 0.0, 0.0)
    alpha = D.size / N
    b = problem.weights[D]
    Zd = problem.instruments[D] * b[:, None]
    xi1 = float(np.linalg.norm(Zd.T @ problem.X[D] / D.size, 2))
    xi2 = float(np.linalg.norm(Zd.T @ fit.residuals[D] / D.size))
    if lin_change is None:
        lin_change = float(np.linalg.norm(dtheta_dw(fit, problem).T @ (w - 1)))
    c_hat = 1.5 * c_op
    return CertificateConstants(alpha, int(D.size), c_op, c_hat, xi1, xi2, float(lin_change),
                                _c_ball(lin_change, alpha, c_hat, xi1, xi2),
                                alpha * c_op * xi1)


def _bounds(c: CertificateConstants):
    core = c.xi2 + c.C_ball * c.xi1
    bound_lin = c.alpha**2 * 2 * c.C_op_scaled**2 * c.xi1 * core
    bound_diff = c.alpha * c.C_op * core
    return float(bound_lin), float(bound_diff)


def certify_theta(problem: RegressionProblem, fit: FitResult, w) -> ErrorCertificate:
    """Parameter-level certificate, refused when ``alpha C_op xi1 > 1/3``."""
    c = compute_constants(problem, fit, w)
    if c.n_dropped == 0:
        return ErrorCertificate(c, 0.0, 0.0, True)
    if not c.condition_holds:
        return ErrorCertificate(c, None, None, False,
                                f"condition violated: alpha*C_op*xi1 = {c.condition_value:.6g} > 1/3")
    return ErrorCertificate(c, *_bounds(c), True)


def _qoi_bounds(cert, alpha, lip):
    if alpha == 0:
        return 0.0, 0.0
    c_diff = cert.bound_diff / alpha
    c_lin = cert.bound_lin / alpha**2
    L_t, L_w = lip["L_theta"], lip["L_omega"]
    C_t, C_w = lip["C_theta"], lip["C_omega"]
    lin = (L_t * (c_diff + 1) * c_diff + C_t * c_lin + L_w * (c_diff + 1)) * alpha**2
    diff = (C_t * c_diff + C_w) * alpha
    return float(lin), float(diff)


def certify_qoi(problem: RegressionProblem, fit: FitResult, w, qoi: QuantityOfInterest,
                lipschitz: dict | None = None) -> ErrorCertificate:
    """Certificate for a quantity of interest built on :func:`certify_theta`.

    For a quantity linear in theta with no explicit weight dependence the
    smoothness constants are derived automatically (``C_theta = ||g||``, the
    rest zero). Otherwise ``lipschitz`` must supply ``L_theta``,
    ``L_omega``, ``C_theta`` and ``C_omega``.

    ``alternate`` repeats the bounds with the ball constant computed from
    ``|phi_lin(w) - phi(1)|`` instead of the parameter-level change, when
    the two differ.
    """
    cert = certify_theta(problem, fit, w)
    if not cert.valid:
        return cert
    if lipschitz is None:
        if not qoi.is_linear:
            return ErrorCertificate(cert.constants, cert.bound_lin, cert.bound_diff, False,
                                    "insufficient smoothness data: supply Lipschitz constants "
                                    "for a quantity of interest that is nonlinear in theta "
                                    "or depends on the weights")
        lipschitz = {"L_theta": 0.0, "L_omega": 0.0,
                     "C_theta": float(np.linalg.norm(qoi.theta_grad)), "C_omega": 0.0}
    missing = {"L_theta", "L_omega", "C_theta", "C_omega"} - set(lipschitz)
    if missing:
        return ErrorCertificate(cert.constants, cert.bound_lin, cert.bound_diff, False,
                                f"insufficient smoothness data: missing {sorted(missing)}")
    c = cert.constants
    qb, qd = _qoi_bounds(cert, c.alpha, lipschitz)

    alternate = None
    if c.n_dropped:
        w_arr = np.asarray(w, dtype=float)
        g, gw = qoi_gradients(qoi, fit, problem)
        psi = dtheta_dw(fit, problem) @ g + (0 if gw is None else gw)
        phi_change = abs(float(psi @ (w_arr - 1)))
        if not np.isclose(phi_change, c.lin_change, rtol=1e-12, atol=0):
            alt_c = compute_constants(problem, fit, w_arr, lin_change=phi_change)
            alt_lin, alt_diff = _bounds(alt_c)
            alt_cert = ErrorCertificate(alt_c, alt_lin, alt_diff, True)
            aq, ad = _qoi_bounds(alt_cert, c.alpha, lipschitz)
            alternate = {"lin_change": phi_change, "C_ball": alt_c.C_ball,
                         "bound_lin": alt_lin, "bound_diff": alt_diff,
                         "qoi_bound": aq, "qoi_diff_bound": ad}
    return ErrorCertificate(c, cert.bound_lin, cert.bound_diff, True, None, qb, qd, alternate)
