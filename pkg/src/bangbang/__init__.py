"""Bilinear parabolic optimal control on the circle, discretised pseudospectrally.

State, adjoint and linearised solves; first and second derivatives of the
objective; projected-gradient optimisation with bang-bang diagnostics; and
numerical checks of the two-scale expansion under high-mode perturbations.
"""

from .adjoint import (
    AdjointBundle,
    SecondOrderDecomposition,
    coercivity_terms,
    finite_difference_gradient,
    gateaux_first,
    gateaux_second,
    linearized_state,
    solve_adjoint,
)
from .errors import (
    ConfigError,
    DegenerateSupport,
    HypothesisViolation,
    InfeasibleVolume,
    NegativeState,
    NonFiniteState,
    ResolutionExceeded,
    StalledLineSearch,
)
from .models import (
    Control,
    InitialDatum,
    ModelSpec,
    builtin_models,
    evaluate_objective,
    get_model,
    project_admissible,
)
from .optimizer import OptimizerConfig, RunTrace, bang_bang_measure, optimize, pontryagin_residual
from .solver import LinearSourceSpec, SpaceTimeField, TimeGrid, solve_linear, solve_semilinear
from .spectral import Field, SpectrumField, TorusGrid
from .twoscale import (
    CorrectorExpansion,
    PerturbationSpectrum,
    ScalingReport,
    build_high_mode_perturbation,
    corrector_fields,
    leading_term_check,
    residual_study,
)

__version__ = "0.1.0"
