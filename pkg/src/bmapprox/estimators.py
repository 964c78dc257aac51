"""Moment estimation via ratios of approximated normalizing constants, plus error metrics.

A marginal on-probability is a ratio of two normalizing constants: the
clamped network's over the full network's. Replacing each log Z with its
truncated expansion estimate gives the ratio estimators; order 1 uses the
plain variational bound, order 2 adds the variance correction. The raw
ratio values can leave [0, 1]; they are reported as-is and flagged.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import decimation, meanfield
from .exact import DEFAULT_MAX_NODES, enumerate_model
from .expansion import estimate
from .model import BoltzmannModel, clamp_to_one

__all__ = [
    "MomentEstimate",
    "ErrorValue",
    "ErrorRecord",
    "relative_error",
    "paired_delta",
    "error_record",
    "estimate_moments",
    "moment_table",
]

METHODS = ("variational", "ratio1", "ratio2")


@dataclass(frozen=True)
class MomentEstimate:
    """Estimated means and correlations of a model's distribution.

    correlations is symmetric with the means on its diagonal.
    physicality_flags marks raw values outside [0, 1]; nonconverged marks
    entries whose sub-solve did not converge (for the ratio methods, entry
    (i, i) covers the mean of node i and (i, j) the pair estimate).
    """

    means: np.ndarray
    correlations: np.ndarray
    method: str
    physicality_flags: np.ndarray  # (n, n) bool, diagonal = means flags
    nonconverged: np.ndarray  # (n, n) bool


@dataclass(frozen=True)
class ErrorValue:
    """Relative error, or the absolute difference when the exact value is ~0."""

    value: float
    absolute_fallback: bool


@dataclass(frozen=True)
class ErrorRecord:
    """Relative errors of two approximations of one log Z plus their paired gap."""

    e_first: ErrorValue
    e_second: ErrorValue
    paired_delta: float


def relative_error(log_z_exact: float, log_z_approx: float) -> ErrorValue:
    """(exact - approx) / exact, falling back to exact - approx for |exact| < 1e-6."""
    if not (np.isfinite(log_z_exact) and np.isfinite(log_z_approx)):
        raise ValueError("log Z values must be finite")
    if abs(log_z_exact) < 1e-6:
        return ErrorValue(log_z_exact - log_z_approx, True)
    return ErrorValue((log_z_exact - log_z_approx) / log_z_exact, False)


def paired_delta(log_z_exact: float, log_z_first: float, log_z_second: float) -> float:
    """|E_first| - |E_second|; positive when the second approximation is closer."""
    return abs(relative_error(log_z_exact, log_z_first).value) - abs(
        relative_error(log_z_exact, log_z_second).value
    )


def error_record(log_z_exact: float, log_z_first: float, log_z_second: float) -> ErrorRecord:
    e1 = relative_error(log_z_exact, log_z_first)
    e2 = relative_error(log_z_exact, log_z_second)
    return ErrorRecord(e1, e2, abs(e1.value) - abs(e2.value))


def _solve_log_z(model, order, structure, solver):
    """Optimize a tractable model on ``model`` and return (estimate, converged).

    With structure=None the tractable family is factorised; otherwise it is
    the decimatable family on the given edge set (restricted to the model's
    surviving nodes when the model is a clamped reduction).
    """
    if model.n == 0:
        return model.constant, True
    if structure is None:
        report = meanfield.solve_bound(model, **solver)
        surface = meanfield.factorised_surface(model, report.params)
    else:
        state = decimation.solve_generalized_mf(model, structure, **solver)
        report = state.report
        with warnings.catch_warnings():
            if not report.converged:
                warnings.simplefilter("ignore")  # caller records the flag instead
            surface = decimation.decimatable_surface(model, state)
    return estimate(surface, order).total, report.converged


def _restrict_structure(reduced: BoltzmannModel, structure):
    """Map a structure on the original labels onto a clamped reduction's labels."""
    if structure is None:
        return None
    parent = reduced.parent_index or tuple(range(reduced.n))
    back = {orig: new for new, orig in enumerate(parent)}
    return tuple(
        (back[i], back[j]) for i, j in structure if i in back and j in back
    )


def estimate_moments(
    target: BoltzmannModel,
    method: str = "ratio2",
    clamp_physical: bool = False,
    structure=None,
    **solver,
) -> MomentEstimate:
    """Estimate all means and pair correlations of the target.

    method "variational" returns the tractable model's own moments at the
    converged bound-criterion fixed point (off-diagonal correlations as
    products of means). "ratio1"/"ratio2" solve a fresh tractable model on
    every clamped reduction and exponentiate log Z differences at the given
    expansion order; numerator and denominator use the same order.

    structure selects the tractable family: None for factorised, or a
    decimatable edge set used for the full network and every reduction.
    Extra keyword arguments go to the underlying solver. clamp_physical
    clips reported values into [0, 1] after flagging.
    """
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    n = target.n
    nonconv = np.zeros((n, n), dtype=bool)

    if method == "variational":
        if structure is None:
            report = meanfield.solve_bound(target, **solver)
            means = np.array(report.params.means)
            converged = report.converged
            correlations = np.outer(means, means)
        else:
            state = decimation.solve_generalized_mf(target, structure, **solver)
            q0 = decimation.build_structure_model(n, state.structure, state.theta)
            moments = decimation.DecimatableMoments(q0, structure=state.structure)
            means = np.array([moments.joint((i,)) for i in range(n)])
            correlations = np.empty((n, n))
            for i in range(n):
                for j in range(i + 1, n):
                    correlations[i, j] = correlations[j, i] = moments.joint((i, j))
            converged = state.report.converged
        np.fill_diagonal(correlations, means)
        nonconv[:] = not converged
    else:
        order = 1 if method == "ratio1" else 2
        full_total, full_conv = _solve_log_z(target, order, structure, solver)
        means = np.empty(n)
        correlations = np.empty((n, n))
        for i in range(n):
            reduced = clamp_to_one(target, {i})
            total, conv = _solve_log_z(reduced, order, _restrict_structure(reduced, structure), solver)
            means[i] = np.exp(total - full_total)
            nonconv[i, i] = not (conv and full_conv)
        for i in range(n):
            for j in range(i + 1, n):
                reduced = clamp_to_one(target, {i, j})
                total, conv = _solve_log_z(
                    reduced, order, _restrict_structure(reduced, structure), solver
                )
                correlations[i, j] = correlations[j, i] = np.exp(total - full_total)
                nonconv[i, j] = nonconv[j, i] = not (conv and full_conv)
        np.fill_diagonal(correlations, means)

    flags = (correlations < 0.0) | (correlations > 1.0)
    if clamp_physical:
        correlations = np.clip(correlations, 0.0, 1.0)
        means = np.clip(means, 0.0, 1.0)
    return MomentEstimate(means, correlations, method, flags, nonconv)


def moment_table(
    target: BoltzmannModel,
    max_nodes: int = DEFAULT_MAX_NODES,
    **solver,
):
    """All three moment estimates plus the exact summary when within the cap.

    The two ratio orders share their clamped solves, since the fixed point
    does not depend on the truncation order. Returns
    (exact_or_None, variational, ratio1, ratio2).
    """
    n = target.n
    exact = enumerate_model(target, max_nodes) if n <= max_nodes else None

    report = meanfield.solve_bound(target, **solver)
    v_means = np.array(report.params.means)
    v_corr = np.outer(v_means, v_means)
    np.fill_diagonal(v_corr, v_means)
    v_nonconv = np.full((n, n), not report.converged, dtype=bool)
    variational = MomentEstimate(
        v_means, v_corr, "variational",
        (v_corr < 0.0) | (v_corr > 1.0), v_nonconv,
    )

    def totals(model):
        if model.n == 0:
            return model.constant, model.constant, True
        rep = meanfield.solve_bound(model, **solver)
        surface = meanfield.factorised_surface(model, rep.params)
        return estimate(surface, 1).total, estimate(surface, 2).total, rep.converged

    full1, full2, full_conv = totals(target)
    means = {1: np.empty(n), 2: np.empty(n)}
    corr = {1: np.empty((n, n)), 2: np.empty((n, n))}
    nonconv = np.zeros((n, n), dtype=bool)
    for i in range(n):
        t1, t2, conv = totals(clamp_to_one(target, {i}))
        means[1][i] = np.exp(t1 - full1)
        means[2][i] = np.exp(t2 - full2)
        nonconv[i, i] = not (conv and full_conv)
    for i in range(n):
        for j in range(i + 1, n):
            t1, t2, conv = totals(clamp_to_one(target, {i, j}))
            corr[1][i, j] = corr[1][j, i] = np.exp(t1 - full1)
            corr[2][i, j] = corr[2][j, i] = np.exp(t2 - full2)
            nonconv[i, j] = nonconv[j, i] = not (conv and full_conv)
    ratios = []
    for order in (1, 2):
        np.fill_diagonal(corr[order], means[order])
        ratios.append(
            MomentEstimate(
                means[order], corr[order], f"ratio{order}",
                (corr[order] < 0.0) | (corr[order] > 1.0), nonconv.copy(),
            )
        )
    return exact, variational, ratios[0], ratios[1]
