"""PMU placement and hybrid SCADA+PMU state estimation."""

from .estimator import GnOptions, HybridStateEstimator, gauss_newton, error_recursion_check, pmu_initializer
from .gain import CopReport, GainModel, beta_approx, cop_metric, critical_check, phi_approx
from .grid import Grid, build_admittance, build_constant_matrices, load_case, parse_case
from .measurements import Placement, Sigmas, eval_f, eval_jacobian, synthesize_measurements
from .placement import (
    PlacementProblem,
    PlacementResult,
    PmuPlacement,
    baseline_accuracy,
    baseline_observability,
    exhaustive_optimal,
    place_sdp,
)
from .sdp import LmiBlock, LmiProgram, solve

__version__ = "0.1.0"
