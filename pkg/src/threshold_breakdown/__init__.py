"""Threshold breakdown points and m-sensitivities for M-estimators and tests."""

__version__ = "0.1.0"

from .asymptotics import (
    H,
    MaxbiasCurve,
    ZState,
    asymptotic_variance_bp,
    asymptotic_variance_sensitivity,
    breakdown_state,
    maxbias_curve,
    maxbias_derivative,
    population_bp,
    population_location,
    population_sensitivity,
    sensitivity_state,
    z_constants,
    zsystem_residual,
)
from .bootstrap import (
    BootstrapConfig,
    BootstrapSummary,
    bootstrap_bp,
    bootstrap_sensitivity,
    draw_weights,
    pit_uniformity,
)
from .distributions import PopulationModel
from .errors import (
    BreakdownError,
    BudgetError,
    DataError,
    DegenerateError,
    DomainError,
    ExtrapolationError,
    NumericError,
)
from .estimators import (
    FitResult,
    Sample,
    WeightedSample,
    fit,
    plugin_se,
    solve_location,
    solve_location_weighted,
    solve_scale,
    solve_two_stage,
)
from .io import ingest_csv
from .oracle import OracleConfig, brute_force_bp, brute_force_sensitivity, brute_force_test_bp
from .score import ScaleScoreFamily, ScoreFamily, efficiency, tune_for_efficiency
from .sensitivity import (
    BreakdownResult,
    EstimatorSpec,
    SchemeConfig,
    SensitivityCurve,
    SensitivityPoint,
    breakdown_from_curve,
    location_bp,
    location_sensitivity,
    scale_bp,
    scale_sensitivity,
    sensitivity_curve,
    two_stage_bp_bounds,
    two_stage_sensitivity_bounds,
    weighted_location_bp,
    weighted_location_sensitivity,
)
from .testaudit import (
    TestSpec,
    run_test,
    statistic_band,
    test_bp_bounds,
    two_sample_bp_bounds,
)

__all__ = [name for name in dir() if not name.startswith("_")]
