"""Per-observation influence scores for quantities of interest.

A built-in quantity of interest has the form

    phi(theta, w) = g' theta + sum_k c_k * SE_{p_k}(theta, w)

which covers a single coefficient, the sign/significance reversal targets and
any linear combination of them. ``custom`` quantities carry callbacks.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .dataset import RegressionProblem
from .errors import BoundsError, MissingGradientError, SingularJacobianError
from .sandwich import SandwichOptions, se_with_gradients, sandwich_covariance
from .zestim import FitResult, fit as refit_problem

__all__ = [
    "KINDS",
    "QuantityOfInterest",
    "InfluenceVector",
    "dtheta_dw",
    "make_qoi",
    "parameter_qoi",
    "linear_qoi",
    "custom_qoi",
    "qoi_value",
    "qoi_gradients",
    "influence_scores",
    "evaluate_qoi",
]

KINDS = ("parameter", "sign-change", "significance-change", "sign-and-significance", "custom")
DEFAULT_LEVEL = 1.96


@dataclass(frozen=True)
class QuantityOfInterest:
    """A scalar functional of the parameter and weights, oriented to increase.

    ``delta`` is the change in ``phi`` that realizes the reversal targeted by
    ``kind`` (zero for plain parameters unless set by the caller).
    """

    kind: str
    theta_grad: np.ndarray | None = None
    se_terms: tuple = ()
    target_index: int | None = None
    level: float = DEFAULT_LEVEL
    direction: int = 1
    delta: float = 0.0
    se_options: SandwichOptions = field(default_factory=SandwichOptions)
    value_fn: Callable | None = None
    grad_theta_fn: Callable | None = None
    grad_w_fn: Callable | None = None

    @property
    def depends_on_w(self) -> bool:
        if self.kind == "custom":
            return self.grad_w_fn is not None
        return bool(self.se_terms)

    @property
    def is_linear(self) -> bool:
        """Linear in theta with no explicit weight dependence."""
        return self.kind != "custom" and not self.se_terms

    def _check_combinable(self, other=None):
        for q in (self, other):
            if q is not None and q.kind == "custom":
                raise TypeError("custom quantities cannot be combined arithmetically")
        if other is not None and other.se_options != self.se_options:
            raise ValueError("cannot combine quantities with different sandwich options")

    def __mul__(self, c):
        self._check_combinable()
        c = float(c)
        return replace(self, theta_grad=c * self.theta_grad,
                       se_terms=tuple((p, c * k) for p, k in self.se_terms),
                       delta=c * self.delta)

    __rmul__ = __mul__

    def __add__(self, other):
        self._check_combinable(other)
        if self.theta_grad.shape != other.theta_grad.shape:
            raise ValueError("quantities refer to different parameter dimensions")
        return replace(self, kind="combination", theta_grad=self.theta_grad + other.theta_grad,
                       se_terms=self.se_terms + other.se_terms, target_index=None,
                       delta=self.delta + other.delta)


@dataclass(frozen=True)
class InfluenceVector:
    psi: np.ndarray
    sorted_order: np.ndarray

    @property
    def N(self) -> int:
        return self.psi.shape[0]


def _require_converged(fit):
    if not fit.converged:
        raise ValueError("influence requires a converged fit")


def dtheta_dw(fit: FitResult, problem: RegressionProblem | None = None) -> np.ndarray:
    """N x P matrix whose row n is ``d theta_hat / d w_n = -H^{-1} b_n G_n``."""
    _require_converged(fit)
    if fit.factor.rcond <= 1e-14:
        raise SingularJacobianError("Jacobian is numerically singular")
    b = np.ones(fit.N) if problem is None else problem.weights
    return -fit.factor.solve((fit.scores * b[:, None]).T).T


def _check_index(index, P):
    if index is None or not (0 <= int(index) < P):
        raise BoundsError(f"target index {index} out of range for P={P}")
    return int(index)


def parameter_qoi(index: int, P: int, scale: float = 1.0, opts=None) -> QuantityOfInterest:
    """``phi = scale * theta_index``."""
    index = _check_index(index, P)
    g = np.zeros(P)
    g[index] = scale
    return QuantityOfInterest("parameter", g, target_index=index,
                              se_options=opts or SandwichOptions())


def linear_qoi(gradient, opts=None) -> QuantityOfInterest:
    """``phi = gradient' theta``, e.g. a fitted value ``x_n' theta``."""
    return QuantityOfInterest("parameter", np.asarray(gradient, dtype=float).copy(),
                              se_options=opts or SandwichOptions())


def custom_qoi(value_fn, grad_theta_fn=None, grad_w_fn=None, delta=0.0) -> QuantityOfInterest:
    """Arbitrary ``phi(theta, w)`` with user gradients.

    ``grad_theta_fn(theta, w)`` is required; ``grad_w_fn(theta, w)`` gives the
    explicit weight derivative and is omitted when ``phi`` has none.
    """
    if grad_theta_fn is None:
        raise MissingGradientError("custom quantity of interest needs grad_theta_fn")
    return QuantityOfInterest("custom", delta=float(delta), value_fn=value_fn,
                              grad_theta_fn=grad_theta_fn, grad_w_fn=grad_w_fn)


def make_qoi(
    kind: str,
    fit: FitResult,
    problem: RegressionProblem,
    target_index: int,
    sandwich_options: SandwichOptions | None = None,
    *,
    level: float = DEFAULT_LEVEL,
    direction: int | None = None,
) -> QuantityOfInterest:
    """Build a reversal target for coefficient ``target_index``.

    With ``s = sign(theta_p)`` (``+1`` when zero) the quantities are

    ======================  ==========================  ===========================
    kind                    phi                         delta
    ======================  ==========================  ===========================
    sign-change             ``-s theta_p``              ``|theta_p|``
    significance-change     ``-s theta_p + z SE_p``     ``|theta_p| - z SE_p``
    sign-and-significance   ``-s theta_p - z SE_p``     ``|theta_p| + z SE_p``
    ======================  ==========================  ===========================

    If the estimate is already insignificant, ``significance-change`` instead
    targets gaining significance in ``direction`` (default ``s``):
    ``phi = d theta_p - z SE_p`` with ``delta = z SE_p - d theta_p``.
    """
    if kind not in KINDS or kind == "custom":
        raise ValueError(f"unknown built-in kind {kind!r}")
    opts = sandwich_options or SandwichOptions()
    index = _check_index(target_index, problem.P)
    theta_p = float(fit.theta_hat[index])
    s = 1 if theta_p >= 0 else -1
    e = np.zeros(problem.P)
    e[index] = 1.0
    common = dict(target_index=index, level=level, se_options=opts)

    if kind == "parameter":
        d = 1 if direction is None else int(direction)
        return QuantityOfInterest("parameter", d * e, direction=d, **common)
    if kind == "sign-change":
        return QuantityOfInterest(kind, -s * e, direction=-s, delta=abs(theta_p), **common)

    se = float(sandwich_covariance(fit, problem, None, opts).standard_errors[index])
    if kind == "sign-and-significance":
        return QuantityOfInterest(kind, -s * e, ((index, -level),), direction=-s,
                                  delta=abs(theta_p) + level * se, **common)
    if abs(theta_p) - level * se >= 0:
        return QuantityOfInterest(kind, -s * e, ((index, level),), direction=-s,
                                  delta=abs(theta_p) - level * se, **common)
    d = s if direction is None else int(direction)
    return QuantityOfInterest(kind, d * e, ((index, -level),), direction=d,
                              delta=level * se - d * theta_p, **common)


def qoi_value(qoi: QuantityOfInterest, fit: FitResult, problem: RegressionProblem) -> float:
    """``phi(theta_hat(w), w)`` at the weights the fit was computed with."""
    if qoi.kind == "custom":
        return float(qoi.value_fn(fit.theta_hat, fit.removal_weights))
    val = float(qoi.theta_grad @ fit.theta_hat)
    if qoi.se_terms:
        se = sandwich_covariance(fit, problem, None, qoi.se_options).standard_errors
        val += sum(c * float(se[p]) for p, c in qoi.se_terms)
    return val


def qoi_gradients(qoi, fit, problem, need_w=True):
    """Partial derivatives ``(d phi/d theta, d phi/d w)`` at the fit.

    The second element is ``None`` when ``phi`` has no explicit weight
    dependence (or when ``need_w`` is false).
    """
    if qoi.kind == "custom":
        g = np.asarray(qoi.grad_theta_fn(fit.theta_hat, fit.removal_weights), dtype=float)
        gw = None
        if need_w and qoi.grad_w_fn is not None:
            gw = np.asarray(qoi.grad_w_fn(fit.theta_hat, fit.removal_weights), dtype=float)
        return g, gw
    g = np.array(qoi.theta_grad, dtype=float)
    gw = np.zeros(fit.N) if (need_w and qoi.se_terms) else None
    for p, c in qoi.se_terms:
        _, d_theta, d_w = se_with_gradients(fit, problem, p, qoi.se_options)
        g += c * d_theta
        if gw is not None:
            gw += c * d_w
    return g, gw


def _stable_order(psi):
    return np.argsort(psi, kind="stable")


def influence_scores(fit: FitResult, problem: RegressionProblem,
                     qoi: QuantityOfInterest) -> InfluenceVector:
    """``psi_n = (d phi/d theta)' (d theta/d w_n) + d phi/d w_n``.

    ``sorted_order`` lists indices by ascending ``psi`` with ties broken by
    original index.
    """
    _require_converged(fit)
    g, gw = qoi_gradients(qoi, fit, problem)
    psi = dtheta_dw(fit, problem) @ g
    if gw is not None:
        psi = psi + gw
    psi.setflags(write=False)
    return InfluenceVector(psi, _stable_order(psi))


def evaluate_qoi(qoi: QuantityOfInterest, problem: RegressionProblem, w=None) -> float:
    """Refit at weights ``w`` and evaluate ``phi`` exactly."""
    return qoi_value(qoi, refit_problem(problem, w), problem)
