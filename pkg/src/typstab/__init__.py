"""Typically stable mechanisms for adaptive data analysis."""

__version__ = "0.1.0"

from .composition import (
    CompositionSchedule,
    approx_adaptive_compose,
    approx_constants,
    non_adaptive_compose,
    pure_adaptive_compose,
    run_composition,
)
from .concentration import ConcentrationFunction, alpha_for, certify_concentration, gamma_of
from .core import (
    DataDistribution,
    Dataset,
    QuerySpec,
    StabilityParams,
    expected_value,
    hamming_distance,
    linear_query,
    mean_query,
    sample_dataset,
)
from .errors import ArgumentError, ConfigurationError, ContractViolationError, InfeasibleError, TypstabError
from .harness import RandomNonadaptive, SignOverfitter, adaptive_settings, evaluate_against_bounds, run_session, run_sessions
from .mechanisms import (
    CalibratedNoiseMechanism,
    discrete_reference_mechanism,
    gaussian_error_bound,
    gaussian_mechanism,
    laplace_error_bound,
    laplace_mechanism,
)
from .verifier import check_indistinguishable, hockey_stick, ledger_run, near_independence_check
