"""Factorised variational approximation of a Boltzmann machine.

Covers the entropy and first-order lower bound, the synchronous and
asynchronous fixed-point solvers for the bound criterion, the closed-form
second-order correction, and the Onsager-corrected fixed point.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, xlogy

from .expansion import ExpansionEstimate, TractableSurface, estimate
from .model import BoltzmannModel

__all__ = [
    "FactorisedParams",
    "FixedPointReport",
    "entropy",
    "bound_value",
    "mean_delta_h",
    "var_delta_h",
    "factorised_surface",
    "stationarity_residual",
    "bound_gradient_theta",
    "solve_bound",
    "solve_tap",
    "second_order_bound_criterion",
]

_MEAN_EPS = 1e-15


@dataclass(frozen=True)
class FactorisedParams:
    """Per-node fields theta with their means m = logistic(theta)."""

    theta: np.ndarray
    means: np.ndarray

    def __post_init__(self):
        theta = np.array(self.theta, dtype=np.float64)
        means = np.array(self.means, dtype=np.float64)
        if theta.shape != means.shape or theta.ndim != 1:
            raise ValueError("theta and means must be matching one-dimensional arrays")
        if means.size and not np.all((means >= 0.0) & (means <= 1.0)):
            raise ValueError("means must lie in [0, 1]")
        theta.setflags(write=False)
        means.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "means", means)

    @classmethod
    def from_theta(cls, theta) -> "FactorisedParams":
        theta = np.asarray(theta, dtype=np.float64)
        return cls(theta, expit(theta))

    @classmethod
    def from_means(cls, means) -> "FactorisedParams":
        means = np.asarray(means, dtype=np.float64)
        if means.size and not np.all((means > 0.0) & (means < 1.0)):
            raise ValueError("means must lie strictly inside (0, 1)")
        return cls(np.log(means / (1.0 - means)), means)


@dataclass(frozen=True)
class FixedPointReport:
    """Outcome of a fixed-point solve; non-convergence is a result, not an error.

    params is a FactorisedParams for the factorised solvers and None for the
    generalized solver, whose parameters live on its own state object.
    """

    params: FactorisedParams | None
    converged: bool
    iterations: int
    final_residual: float
    criterion: str  # "bound" or "tap"


def entropy(m) -> float:
    """Entropy of independent Bernoulli nodes; exact 0/1 means contribute zero."""
    m = np.asarray(m, dtype=np.float64)
    if m.size and not np.all((m >= 0.0) & (m <= 1.0)):
        raise ValueError("means must lie in [0, 1]")
    return -float(np.sum(xlogy(m, m) + xlogy(1.0 - m, 1.0 - m)))


def bound_value(model: BoltzmannModel, m) -> float:
    """First-order lower bound on log Z at the given means."""
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (model.n,):
        raise ValueError(f"means must have length {model.n}")
    return (
        entropy(m)
        + model.constant
        + float(model.bias @ m)
        + 0.5 * float(m @ model.coupling @ m)
    )


def mean_delta_h(model: BoltzmannModel, params: FactorisedParams) -> float:
    """Mean of H1 - H0 under the factorised distribution."""
    m = params.means
    return (
        model.constant
        + float((model.bias - params.theta) @ m)
        + 0.5 * float(m @ model.coupling @ m)
    )


def var_delta_h(model: BoltzmannModel, params: FactorisedParams) -> float:
    """Variance of H1 - H0 under the factorised distribution (any theta).

    Equals 0.5 sum_ij w_ij^2 p_i p_j plus a stationarity penalty that
    vanishes exactly at a bound-criterion fixed point, with p_i = m_i(1-m_i).
    """
    if params.theta.shape != (model.n,):
        raise ValueError(f"params must have length {model.n}")
    m = params.means
    p = m * (1.0 - m)
    residual = params.theta - model.bias - model.coupling @ m
    return 0.5 * float(p @ (model.coupling**2) @ p) + float((residual**2) @ p)


def factorised_surface(model: BoltzmannModel, params: FactorisedParams) -> TractableSurface:
    """Expansion surface of a factorised approximation to the given model."""
    log_z0 = float(np.logaddexp(0.0, params.theta).sum())
    return TractableSurface(log_z0, mean_delta_h(model, params), var_delta_h(model, params))


def stationarity_residual(model: BoltzmannModel, params: FactorisedParams) -> float:
    """Max deviation from the bound-criterion fixed point theta = b + W m."""
    if model.n == 0:
        return 0.0
    return float(
        np.max(np.abs(params.theta - model.bias - model.coupling @ params.means))
    )


def bound_gradient_theta(model: BoltzmannModel, params: FactorisedParams) -> np.ndarray:
    """Gradient of log Z0 + mean(H1 - H0) with respect to theta.

    Component k equals p_k (b_k + sum_j w_kj m_j - theta_k), the covariance
    of H1 - H0 with s_k under the factorised distribution.
    """
    m = params.means
    p = m * (1.0 - m)
    return p * (model.bias + model.coupling @ m - params.theta)


def _logit_clipped(m: np.ndarray) -> np.ndarray:
    clipped = np.clip(m, _MEAN_EPS, 1.0 - _MEAN_EPS)
    return np.log(clipped / (1.0 - clipped))


def _iterate(model, theta0, propose, schedule, damping, tol, max_iter):
    """Shared damped fixed-point loop over mean updates.

    propose(m) returns the proposed theta vector given current means. With
    damping 1 the stored theta is the raw proposal, which keeps the
    fixed-point residual bounded by tol times the coupling mass.
    """
    theta = np.array(theta0, dtype=np.float64)
    m = expit(theta)
    n = model.n
    if n == 0:
        return FactorisedParams(theta, m), True, 0, 0.0
    residual = np.inf
    iterations = 0
    for iterations in range(1, max_iter + 1):
        if schedule == "sync":
            theta_prop = propose(m)
            m_prop = expit(theta_prop)
            m_new = m + damping * (m_prop - m)
            residual = float(np.max(np.abs(m_new - m)))
            theta = theta_prop if damping == 1.0 else _logit_clipped(m_new)
            m = m_new
        else:  # async: sweep nodes in index order, updating means in place
            residual = 0.0
            for i in range(n):
                t_i = float(propose(m)[i])
                m_new_i = m[i] + damping * (float(expit(t_i)) - m[i])
                residual = max(residual, abs(m_new_i - m[i]))
                m[i] = m_new_i
                theta[i] = t_i if damping == 1.0 else float(
                    _logit_clipped(np.array([m_new_i]))[0]
                )
        if residual <= tol:
            return FactorisedParams(theta, m), True, iterations, residual
    return FactorisedParams(theta, m), False, iterations, residual


def _bound_proposal(model):
    def propose(m):
        return model.bias + model.coupling @ m

    return propose


def _tap_proposal(model):
    coupling_sq = model.coupling**2

    def propose(m):
        p = m * (1.0 - m)
        return model.bias + model.coupling @ m + 0.5 * (1.0 - 2.0 * m) * (coupling_sq @ p)

    return propose


def _solve(model, propose, criterion, init, schedule, damping, tol, max_iter, restarts, seed):
    if tol <= 0:
        raise ValueError("tol must be positive")
    if not 0.0 < damping <= 1.0:
        raise ValueError("damping must lie in (0, 1]")
    if schedule not in ("sync", "async"):
        raise ValueError(f"unknown schedule {schedule!r}")

    inits = [np.array(model.bias) if init is None else np.array(init.theta, dtype=np.float64)]
    if restarts:
        rng = np.random.default_rng(seed)
        inits.extend(rng.normal(0.0, 1.0, model.n) for _ in range(restarts))

    best = None
    for theta0 in inits:
        if theta0.shape != (model.n,):
            raise ValueError("init must match the model's node count")
        params, converged, iterations, residual = _iterate(
            model, theta0, propose, schedule, damping, tol, max_iter
        )
        report = FixedPointReport(params, converged, iterations, residual, criterion)
        key = (converged, bound_value(model, params.means))
        if best is None or key > best[0]:
            best = (key, report)
    return best[1]


def solve_bound(
    model: BoltzmannModel,
    init: FactorisedParams | None = None,
    schedule: str = "sync",
    damping: float = 1.0,
    tol: float = 1e-10,
    max_iter: int = 10_000,
    restarts: int = 0,
    seed: int = 0,
) -> FixedPointReport:
    """Iterate theta_i <- b_i + sum_j w_ij m_j to a bound-criterion fixed point.

    Stops when the largest per-sweep mean change drops to tol. The default
    init theta = bias is exact for vanishing couplings; restarts > 0 adds
    seeded random initializations and keeps the run with the highest bound
    (converged runs preferred). Asynchronous sweeps with damping 1 are
    coordinate ascent on the bound and never decrease it; synchronous sweeps
    carry no such guarantee but mirror the usual experimental setup.
    """
    return _solve(
        model, _bound_proposal(model), "bound", init, schedule, damping, tol, max_iter,
        restarts, seed,
    )


def solve_tap(
    model: BoltzmannModel,
    init: FactorisedParams | None = None,
    schedule: str = "sync",
    damping: float = 1.0,
    tol: float = 1e-10,
    max_iter: int = 10_000,
    restarts: int = 0,
    seed: int = 0,
) -> FixedPointReport:
    """Iterate the Onsager-corrected fixed point.

    theta_i <- b_i + sum_j w_ij m_j + (1/2) sum_j w_ij^2 (1 - 2 m_i) m_j (1 - m_j).
    The correction is second order in the couplings, so solutions approach
    the plain bound-criterion fixed point quadratically as couplings shrink.
    Convergence can be poor at strong couplings; that is reported, not raised.
    """
    return _solve(
        model, _tap_proposal(model), "tap", init, schedule, damping, tol, max_iter,
        restarts, seed,
    )


def second_order_bound_criterion(
    model: BoltzmannModel,
    fixed_point: FactorisedParams,
    stationarity_tol: float = 1e-6,
) -> ExpansionEstimate:
    """Second-order estimate with the factorised model held at its bound optimum.

    At a fixed point the correction reduces to
    (1/4) sum_ij w_ij^2 m_i (1 - m_i) m_j (1 - m_j) and is nonnegative. Away
    from a fixed point the general variance form is used and a warning is
    issued, since the simplified correction assumes stationarity.
    """
    residual = stationarity_residual(model, fixed_point)
    if residual > stationarity_tol:
        warnings.warn(
            f"params are not a bound-criterion fixed point (residual {residual:.3g}); "
            "computing the general second-order value",
            stacklevel=2,
        )
    return estimate(factorised_surface(model, fixed_point), 2)
