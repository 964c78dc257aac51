"""Approximation toolkit for Boltzmann machine normalizing constants and moments.

The package pairs tractable approximations (factorised and decimatable
models, with first- and second-order truncated log Z estimates) with an
exact enumeration oracle at desk scale, plus ratio-based moment estimators
and bound-monitored pattern learning.
"""

from .exact import ExactSummary, enumerate_model, interpolated_cumulant, kl_divergence
from .expansion import ExpansionEstimate, TractableSurface, estimate, remainder_diagnostic
from .decimation import (
    DecimationTrace,
    GeneralizedMFState,
    decimatable_surface,
    decimate_log_z,
    elimination_order,
    joint_on_probability,
    solve_generalized_mf,
)
from .estimators import (
    ErrorRecord,
    MomentEstimate,
    estimate_moments,
    paired_delta,
    relative_error,
)
from .learning import (
    LearningConfig,
    LearningTrace,
    bound_and_approximations,
    clamped_statistics,
    free_statistics,
    train,
)
from .meanfield import (
    FactorisedParams,
    FixedPointReport,
    bound_value,
    entropy,
    second_order_bound_criterion,
    solve_bound,
    solve_tap,
    var_delta_h,
)
from .model import (
    BoltzmannModel,
    PatternSet,
    clamp_to_one,
    condition_on_visibles,
    load_model,
    load_patterns,
    potential,
    random_model,
    save_model,
    save_patterns,
)

__version__ = "0.1.0"
