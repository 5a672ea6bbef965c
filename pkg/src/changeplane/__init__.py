"""Multi-threshold change-plane regression for subgroup identification."""

from changeplane.backend import COMPILED, active_backend
from changeplane.model import (CoefficientSet, Dataset, DimensionError,
                               ModelFit, ThetaVector, Thresholds,
                               design_expand, exact_objective, group_labels,
                               predict)
from changeplane.mcpl import (McplConfig, SplitPlan, SplitResult,
                              build_block_design, fit_mcpl, make_split_plan,
                              refine_stage, split_stage)
from changeplane.optimize import (OptimizerSettings, SmoothingSpec,
                                  cd_penalized_ls, default_bandwidth,
                                  gcd_penalized_ls, smoothed_gradient,
                                  smoothed_indicator, smoothed_objective,
                                  sphere_optimize)
from changeplane.penalties import (MCP, SCAD, PenaltySpec, group_prox,
                                   penalty_derivative, penalty_value,
                                   scalar_prox)
from changeplane.scpl import ScplConfig, fit_scpl
from changeplane.simlab import (MCReport, SimDesign, gen_covariance, nmi,
                                run_monte_carlo, simulate_dataset)
from changeplane.tuning import (TuningGrid, bic_score, default_grid,
                                gcv_score, select_lambda)

__version__ = "0.1.0"

__all__ = [
    "COMPILED", "active_backend", "CoefficientSet", "Dataset",
    "DimensionError", "ModelFit", "ThetaVector", "Thresholds",
    "design_expand", "exact_objective", "group_labels", "predict",
    "McplConfig", "SplitPlan", "SplitResult", "build_block_design",
    "fit_mcpl", "make_split_plan", "refine_stage", "split_stage",
    "OptimizerSettings", "SmoothingSpec", "cd_penalized_ls",
    "default_bandwidth", "gcd_penalized_ls", "smoothed_gradient",
    "smoothed_indicator", "smoothed_objective", "sphere_optimize",
    "MCP", "SCAD", "PenaltySpec", "group_prox", "penalty_derivative",
    "penalty_value", "scalar_prox", "ScplConfig", "fit_scpl",
    "MCReport", "SimDesign", "gen_covariance", "nmi", "run_monte_carlo",
    "simulate_dataset", "TuningGrid", "bic_score", "default_grid",
    "gcv_score", "select_lambda",
]
