"""Multilevel Picard estimation for semilinear jump-diffusion PIDEs and its
exact compilation into ReLU networks."""

from .compiler import (
    CompiledMlp,
    ScenarioBinding,
    build_pl_f_network,
    compile_em_trajectory,
    compile_mlp,
    predicted_depth,
    theorem_param_envelope,
    verify_equivalence,
)
from .mlp import MlpParams, MlpResult, convergence_study, mlp_error_bound, mlp_estimate
from .model import (
    BenchmarkId,
    LevySpec,
    NetworkCoefficientSet,
    PideModel,
    benchmark_solution,
    model_from_config,
    validate_assumptions,
)
from .randomness import Purpose, RngStream, ThetaIndex
from .relunet import DimVector, ReluNetwork
from .sde import EmTrajectoryRequest, em_endpoint, exact_endpoint_martingale_check, grid_floor

__version__ = "0.1.0"
