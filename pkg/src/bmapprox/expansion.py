"""Truncated log Z estimates built from the low-order moments of H1 - H0.

Order 1 is the standard variational lower bound; order 2 adds half the
variance of the potential difference under the tractable distribution.
Orders above 2 are not implemented, but the surface contract leaves room
for a third-order term without breaking callers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .exact import DEFAULT_MAX_NODES, enumerate_model, interpolated_cumulant
from .model import BoltzmannModel

__all__ = [
    "TractableSurface",
    "ExpansionEstimate",
    "RemainderDiagnostic",
    "estimate",
    "remainder_diagnostic",
]


@dataclass(frozen=True)
class TractableSurface:
    """What a tractable approximating model must expose for a given target.

    log_z0 is the tractable model's own log normalizing constant;
    mean_delta_h and var_delta_h are the first two moments of H1 - H0 under
    the tractable distribution. A variance that is negative beyond rounding
    noise is rejected; tiny negatives are clamped to zero.
    """

    log_z0: float
    mean_delta_h: float
    var_delta_h: float

    def __post_init__(self):
        if self.var_delta_h < -1e-9:
            raise ValueError(f"variance must be nonnegative, got {self.var_delta_h}")
        if self.var_delta_h < 0.0:
            object.__setattr__(self, "var_delta_h", 0.0)


@dataclass(frozen=True)
class ExpansionEstimate:
    """A truncated log Z estimate: log_z0 + term1 (+ term2 at order 2)."""

    log_z0: float
    term1: float
    term2: float
    order: int
    total: float


def estimate(surface: TractableSurface, order: int) -> ExpansionEstimate:
    """Truncate the expansion of log Z at the given order (1 or 2)."""
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    term1 = surface.mean_delta_h
    term2 = 0.5 * surface.var_delta_h
    total = surface.log_z0 + term1 + (term2 if order >= 2 else 0.0)
    return ExpansionEstimate(surface.log_z0, term1, term2, order, total)


@dataclass(frozen=True)
class RemainderDiagnostic:
    """Exact truncation error and the next-cumulant envelope it should fall in.

    The envelope is sampled on a finite interpolation grid, so a remainder
    very close to an envelope edge can land just outside it; treat
    within_envelope as a high-probability check, not a certainty.
    """

    remainder: float
    envelope_low: float
    envelope_high: float
    within_envelope: bool


def remainder_diagnostic(
    model0: BoltzmannModel,
    model1: BoltzmannModel,
    order: int,
    grid_points: int = 101,
    max_nodes: int = DEFAULT_MAX_NODES,
) -> RemainderDiagnostic:
    """Compare exact log Z against the truncation, test-only and cap-gated.

    Returns the exact remainder (exact log Z1 minus the truncated total built
    from exact cumulants at alpha = 0) together with the min/max over an
    alpha grid of the order+1 cumulant divided by (order+1)!.
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    log_z0 = enumerate_model(model0, max_nodes).log_z
    log_z1 = enumerate_model(model1, max_nodes).log_z
    total = log_z0
    for k in range(1, order + 1):
        total += interpolated_cumulant(model0, model1, 0.0, k, max_nodes) / math.factorial(k)
    remainder = log_z1 - total

    scale = math.factorial(order + 1)
    lo = math.inf
    hi = -math.inf
    for i in range(grid_points):
        alpha = i / (grid_points - 1)
        value = interpolated_cumulant(model0, model1, alpha, order + 1, max_nodes) / scale
        lo = min(lo, value)
        hi = max(hi, value)
    return RemainderDiagnostic(remainder, lo, hi, lo <= remainder <= hi)
