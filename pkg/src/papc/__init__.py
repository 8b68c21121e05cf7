"""Stochastic primal-dual splitting with a correction step.

Solvers for structured monotone inclusions and saddle-point problems, the
product-space reduction for sums of composite terms, stochastic oracles with
summability certificates, and the diagnostics (KKT residuals, step-metric
distance tracking, ergodic duality gaps with their O(1/sum gamma) bound)
needed to verify the convergence behaviour empirically.
"""

from .linop import (LinearMap, OrthoProjector, SpdOperator, adjoint_consistency_check,
                    power_iteration, validate_tau, weighted_norm_sq)
from .monotone import (CocoerciveMap, MonotoneBlock, ProductMonotoneBlock, ProxFunction,
                       conjugate_prox_via_moreau, inverse_resolvent, prox_in_metric,
                       resolvent)
from .solver import (ErgodicAccumulator, PapcState, ProblemSpec, RunRecord, Schedules,
                     ergodic_update, papc_step, run, saddle_step, validate_hypotheses)
from .composite import (CompositeBlock, CompositeProblem, composite_step,
                        lift, lift_flat_equivalence, run_composite, structured_min_step)
from .diagnostics import (GapConstant, SaddleFunction, epsilon_saddle_check, fejer_tracker,
                          gap_and_bound, kkt_residual, rate_fit, saddle_value)
from .stochastic import (DeterministicOracle, GaussianOracle, MinibatchOracle,
                         VarianceSchedule, empirical_variance, summability_certificate)

__version__ = "0.1.0"
