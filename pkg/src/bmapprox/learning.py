"""Gradient-ascent training of a visible/hidden Boltzmann machine on patterns.

The visible nodes are the first n_visible indices, hidden nodes follow. Each
update moves every parameter by eta times (clamped statistic - free
statistic). The likelihood bound is monitored three ways per update: with
the exact log Z from enumeration, with the factorised bound in its place,
and with the second-order corrected value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import estimators, meanfield
from .exact import DEFAULT_MAX_NODES, enumerate_model
from .expansion import estimate
from .model import BoltzmannModel, PatternSet, condition_on_visibles, random_model

__all__ = [
    "LearningConfig",
    "ClampedStats",
    "TraceRecord",
    "LearningTrace",
    "clamped_statistics",
    "free_statistics",
    "bound_and_approximations",
    "train",
]


@dataclass(frozen=True)
class LearningConfig:
    """Settings for a training run."""

    n_visible: int
    n_hidden: int
    eta: float = 0.05
    updates: int = 200
    free_stats: str = "factorised"  # or "ratio2"
    batch_mode: str = "batch"  # or "per-pattern"
    init_sigma: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.n_visible < 1 or self.n_hidden < 0:
            raise ValueError("need at least one visible node and nonnegative hidden count")
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.free_stats not in ("factorised", "ratio2"):
            raise ValueError("free_stats must be 'factorised' or 'ratio2'")
        if self.batch_mode not in ("batch", "per-pattern"):
            raise ValueError("batch_mode must be 'batch' or 'per-pattern'")


@dataclass(frozen=True)
class ClampedStats:
    """Statistics under the conditional distribution given one visible pattern.

    means covers all nodes (visible entries are the pattern itself);
    correlations is symmetric with means on the diagonal and products of
    means off it, which is exact for the factorised conditional family.
    """

    hidden_means: np.ndarray
    means: np.ndarray
    correlations: np.ndarray
    converged: bool


@dataclass(frozen=True)
class TraceRecord:
    update: int
    exact_bound: float | None
    first_bound: float
    second_bound: float
    grad_norm: float
    clamped_nonconv: int
    free_nonconv: int


@dataclass(frozen=True)
class LearningTrace:
    """Per-update monitor records plus the bounds at initialization."""

    records: tuple[TraceRecord, ...]
    initial_exact: float | None
    initial_first: float
    initial_second: float


def clamped_statistics(
    model: BoltzmannModel,
    pattern,
    **solver,
) -> ClampedStats:
    """Solve the factorised bound on the conditional network for one pattern.

    The pattern length determines the visible count; the conditional network
    over the hidden nodes comes from fixing the visibles at the pattern.
    """
    pattern = np.asarray(pattern, dtype=np.float64)
    n_visible = pattern.shape[0]
    if n_visible > model.n:
        raise ValueError("pattern longer than the model")
    conditional = condition_on_visibles(model, range(n_visible), pattern)
    if conditional.n:
        report = meanfield.solve_bound(conditional, **solver)
        hidden_means = np.array(report.params.means)
        converged = report.converged
    else:
        hidden_means = np.zeros(0)
        converged = True
    means = np.concatenate([pattern, hidden_means])
    correlations = np.outer(means, means)
    np.fill_diagonal(correlations, means)
    return ClampedStats(hidden_means, means, correlations, converged)


def free_statistics(model: BoltzmannModel, method: str = "factorised", **solver):
    """Means and correlation matrix of the unconditioned model.

    method "factorised" uses the full-network bound solve with product
    correlations; "ratio2" delegates to the ratio-of-normalizing-constants
    estimator. Returns (means, correlations, converged).
    """
    if method == "factorised":
        report = meanfield.solve_bound(model, **solver)
        means = np.array(report.params.means)
        correlations = np.outer(means, means)
        np.fill_diagonal(correlations, means)
        return means, correlations, report.converged
    if method == "ratio2":
        est = estimators.estimate_moments(model, "ratio2", **solver)
        return est.means, est.correlations, not est.nonconverged.any()
    raise ValueError(f"unknown free statistics method {method!r}")


def _pattern_bound_terms(model: BoltzmannModel, stats: ClampedStats) -> float:
    """Entropy of the conditional approximation plus the mean potential under it."""
    mean_potential = (
        model.constant
        + float(model.bias @ stats.means)
        + 0.5 * float(np.sum(model.coupling * stats.correlations))
    )
    return meanfield.entropy(stats.hidden_means) + mean_potential


def bound_and_approximations(
    model: BoltzmannModel,
    patterns: PatternSet,
    max_nodes: int = DEFAULT_MAX_NODES,
    **solver,
):
    """Total pattern-likelihood bound with three log Z treatments.

    Per pattern the bound is S(hidden means) + <H>_conditional - log Z,
    summed over the pattern set with repetitions counted. Returns
    (exact, first, second); exact is None when the model exceeds the
    enumeration cap, which disables only that curve.
    """
    if model.n <= max_nodes:
        log_z_exact = enumerate_model(model, max_nodes).log_z
    else:
        log_z_exact = None
    report = meanfield.solve_bound(model, **solver)
    surface = meanfield.factorised_surface(model, report.params)
    first_log_z = estimate(surface, 1).total
    second_log_z = estimate(surface, 2).total

    base = 0.0
    for pattern in patterns.patterns:
        stats = clamped_statistics(model, np.asarray(pattern, dtype=np.float64), **solver)
        base += _pattern_bound_terms(model, stats)
    count = len(patterns)
    exact = base - count * log_z_exact if log_z_exact is not None else None
    return exact, base - count * first_log_z, base - count * second_log_z


def _gradient(model, clamped_means, clamped_corr, free_means, free_corr):
    d_bias = clamped_means - free_means
    d_coupling = clamped_corr - free_corr
    d_coupling = 0.5 * (d_coupling + d_coupling.T)
    np.fill_diagonal(d_coupling, 0.0)
    norm = math.sqrt(
        float(d_bias @ d_bias) + 0.5 * float(np.sum(d_coupling**2))
    )
    return d_bias, d_coupling, norm


def train(
    config: LearningConfig,
    patterns: PatternSet,
    max_nodes: int = DEFAULT_MAX_NODES,
    **solver,
) -> tuple[BoltzmannModel, LearningTrace]:
    """Run gradient ascent and record the monitored bounds after every update.

    Parameters are initialized i.i.d. Normal(0, init_sigma^2) from the
    seeded generator. In batch mode the clamped statistics are averaged over
    the whole pattern set per update; in per-pattern mode the patterns are
    cycled, one update each. Solver non-convergence inside a step is counted
    in the trace and the step still applies.
    """
    if patterns.visible_count != config.n_visible:
        raise ValueError("pattern width must equal n_visible")
    n = config.n_visible + config.n_hidden
    model = random_model(n, "full", config.init_sigma, config.seed)

    init_exact, init_first, init_second = bound_and_approximations(
        model, patterns, max_nodes, **solver
    )
    records = []
    pattern_array = patterns.patterns.astype(np.float64)
    for update in range(1, config.updates + 1):
        if config.batch_mode == "batch":
            batch = pattern_array
        else:
            batch = pattern_array[(update - 1) % len(patterns)][None, :]
        clamped_means = np.zeros(n)
        clamped_corr = np.zeros((n, n))
        clamped_nonconv = 0
        for pattern in batch:
            stats = clamped_statistics(model, pattern, **solver)
            clamped_means += stats.means
            clamped_corr += stats.correlations
            clamped_nonconv += not stats.converged
        clamped_means /= len(batch)
        clamped_corr /= len(batch)

        free_means, free_corr, free_conv = free_statistics(
            model, config.free_stats, **solver
        )
        d_bias, d_coupling, norm = _gradient(
            model, clamped_means, clamped_corr, free_means, free_corr
        )
        model = BoltzmannModel(
            model.bias + config.eta * d_bias,
            model.coupling + config.eta * d_coupling,
            model.constant,
        )
        exact, first, second = bound_and_approximations(model, patterns, max_nodes, **solver)
        records.append(
            TraceRecord(update, exact, first, second, norm, clamped_nonconv, int(not free_conv))
        )
    trace = LearningTrace(tuple(records), init_exact, init_first, init_second)
    return model, trace
