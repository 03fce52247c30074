"""Approximate most influential set, maximum influence perturbation and
perturbation-inducing proportion, plus the refit and brute-force checks."""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .dataset import RegressionProblem
from .errors import AlphaTooSmallError, DegenerateSubsetError, EnumerationTooLargeError
from .influence import InfluenceVector, QuantityOfInterest, qoi_value
from .sandwich import sandwich_covariance
from .zestim import FitResult, fit as refit_problem

__all__ = [
    "AmisResult",
    "ApipResult",
    "RefitResult",
    "Decomposition",
    "BruteForceResult",
    "amis",
    "apip",
    "amip_path",
    "refit_lower_bound",
    "decompose",
    "brute_force_mip",
    "MAX_ENUMERATION",
]

MAX_ENUMERATION = 2_000_000


def _max_drop(alpha, N):
    # guard against alpha * N landing a hair under an integer
    return int(math.floor(alpha * N + 1e-9))


@dataclass(frozen=True)
class AmisResult:
    alpha: float
    dropped_indices: np.ndarray
    w_star: np.ndarray
    amip: float
    max_drop: int

    @property
    def n_dropped(self) -> int:
        return int(self.dropped_indices.size)


@dataclass(frozen=True)
class ApipResult:
    """``m_removed`` and ``alpha_star`` are ``None`` when the target is out of reach."""

    delta: float
    m_removed: int | None
    alpha_star: float | None
    cumulative_path: np.ndarray
    drop_order: np.ndarray

    @property
    def is_na(self) -> bool:
        return self.m_removed is None

    @property
    def dropped_indices(self) -> np.ndarray:
        return self.drop_order[: self.m_removed or 0]

    @property
    def predicted_change(self) -> float | None:
        return None if self.is_na else float(self.cumulative_path[self.m_removed - 1])


def _negative_order(inf: InfluenceVector):
    order = inf.sorted_order
    return order[inf.psi[order] < 0]


def amis(inf: InfluenceVector, alpha: float) -> AmisResult:
    """Drop up to ``floor(alpha N)`` rows with the most negative scores.

    Rows with nonnegative scores are never dropped, so the result can hold
    fewer than ``floor(alpha N)`` indices.
    """
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    N = inf.N
    m = _max_drop(alpha, N)
    if m < 1:
        raise AlphaTooSmallError(f"floor(alpha * N) = 0 for alpha={alpha}, N={N}")
    dropped = _negative_order(inf)[:m]
    w = np.ones(N)
    w[dropped] = 0.0
    return AmisResult(alpha, dropped, w, float(-inf.psi[dropped].sum()), m)


def amip_path(inf: InfluenceVector) -> np.ndarray:
    """AMIP after dropping k = 0..N rows; concave and nondecreasing in k."""
    neg = -inf.psi[_negative_order(inf)]
    path = np.zeros(inf.N + 1)
    path[1: neg.size + 1] = np.cumsum(neg)
    path[neg.size + 1:] = path[neg.size]
    return path


def apip(inf: InfluenceVector, delta: float) -> ApipResult:
    """Smallest number of drops whose predicted change strictly exceeds ``delta``."""
    if not math.isfinite(delta):
        raise ValueError("delta must be finite")
    order = _negative_order(inf)
    cum = np.cumsum(-inf.psi[order])
    hits = np.flatnonzero(cum > delta)
    if hits.size == 0:
        return ApipResult(float(delta), None, None, cum, order)
    m = int(hits[0]) + 1
    return ApipResult(float(delta), m, m / inf.N, cum, order)


@dataclass(frozen=True)
class RefitResult:
    phi_before: float
    phi_after: float
    exact_change: float
    predicted_change: float
    delta: float
    achieved: bool
    theta_after: np.ndarray
    se_after: np.ndarray | None
    dropped_indices: np.ndarray

    @property
    def approximation_error(self) -> float:
        return self.exact_change - self.predicted_change


def _drop_weights(N, dropped):
    w = np.ones(N)
    w[np.asarray(dropped, dtype=int)] = 0.0
    return w


def refit_lower_bound(problem: RegressionProblem, fit: FitResult,
                      qoi: QuantityOfInterest, amis_result, psi=None) -> RefitResult:
    """Refit without the dropped rows and measure the exact change in ``phi``.

    ``amis_result`` may be an :class:`AmisResult`, an :class:`ApipResult` or
    a plain index array. The exact change is a lower bound on the maximum
    influence perturbation; ``achieved`` is ``exact_change >= delta``.
    Standard errors are recomputed at the refit.
    """
    if isinstance(amis_result, (AmisResult, ApipResult)):
        dropped = np.asarray(amis_result.dropped_indices, dtype=int)
    else:
        dropped = np.asarray(amis_result, dtype=int).reshape(-1)
    if isinstance(amis_result, AmisResult):
        predicted = amis_result.amip
    elif isinstance(amis_result, ApipResult):
        predicted = amis_result.predicted_change or 0.0
    else:
        predicted = float(-np.asarray(psi)[dropped].sum()) if psi is not None else float("nan")

    phi0 = qoi_value(qoi, fit, problem)
    if dropped.size == 0:
        new_fit = fit
    else:
        new_fit = refit_problem(problem, _drop_weights(problem.N, dropped))
    phi1 = qoi_value(qoi, new_fit, problem)
    se = None
    if new_fit.residuals is not None:
        se = sandwich_covariance(new_fit, problem, None, qoi.se_options).standard_errors
    change = phi1 - phi0
    return RefitResult(phi0, phi1, change, predicted, qoi.delta, bool(change >= qoi.delta),
                       new_fit.theta_hat, se, dropped)


@dataclass(frozen=True)
class Decomposition:
    """``amip = sigma_psi * gamma_alpha`` with ``|gamma_alpha| <= gamma_bound``.

    ``degenerate`` marks a perfect fit (``sigma_psi = 0``), where the shape
    is undefined and reported as NaN.
    """

    sigma_psi: float
    gamma_alpha: float
    gamma_bound: float
    gamma_n: np.ndarray | None
    degenerate: bool = False


def gamma_bound(alpha: float, N: int | None = None) -> float:
    """``sqrt(a (1 - a))`` with ``a = floor(alpha N)/N`` capped at 1/2."""
    a = alpha if N is None else _max_drop(alpha, N) / N
    a = min(a, 0.5)
    return math.sqrt(a * (1 - a))


def decompose(inf: InfluenceVector, amis_result: AmisResult, sigma_psi: float) -> Decomposition:
    """Split AMIP into noise ``sigma_psi`` and shape ``Gamma_alpha``."""
    N = inf.N
    bound = gamma_bound(amis_result.alpha, N)
    if sigma_psi <= 0:
        return Decomposition(0.0, float("nan"), bound, None, True)
    gamma = N * inf.psi / sigma_psi
    g_alpha = float(-gamma[amis_result.dropped_indices].sum() / N)
    return Decomposition(float(sigma_psi), g_alpha, bound, gamma)


@dataclass(frozen=True)
class BruteForceResult:
    exact_mis: tuple
    exact_mip: float
    n_evaluated: int
    n_degenerate: int


def brute_force_mip(problem: RegressionProblem, qoi: QuantityOfInterest, max_drop: int,
                    fit: FitResult | None = None,
                    limit: int = MAX_ENUMERATION) -> BruteForceResult:
    """Exact maximum influence perturbation over all drop sets of size <= ``max_drop``.

    Ties go to the lexicographically smallest index set. Drop sets that make
    the design singular are skipped and counted.
    """
    N = problem.N
    total = sum(math.comb(N, k) for k in range(max_drop + 1))
    if total > limit:
        raise EnumerationTooLargeError(
            f"{total} refits needed for N={N}, m={max_drop}; limit is {limit}")
    fit = fit or refit_problem(problem)
    phi0 = qoi_value(qoi, fit, problem)
    best, best_set = 0.0, ()
    n_eval = n_bad = 0
    for k in range(1, max_drop + 1):
        for subset in combinations(range(N), k):
            n_eval += 1
            try:
                f = refit_problem(problem, _drop_weights(N, subset))
            except DegenerateSubsetError:
                n_bad += 1
                continue
            change = qoi_value(qoi, f, problem) - phi0
            if change > best:
                best, best_set = change, subset
    return BruteForceResult(best_set, float(best), n_eval, n_bad)
