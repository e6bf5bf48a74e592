"""Day-ahead scheduling of an underground pumped-storage plant.

The package holds the nonlinear plant model, its global and local
approximations, a differentiable penalized QP, an ex-post market simulator,
a recurrent penalty network with decision-focused training, MIQP and DP
baselines, and price-data utilities.
"""
__version__ = "0.1.0"

from .errors import (BuildError, DomainError, FitError, HeadBoundError, SearchSpaceError,
                     SolverError)
from .plant import (Mode, PlantConfig, Trajectory, UpcModel, default_model, gross_head, upc_eval,
                    upc_fit)
from .approx import GlobalLinearModel, Sos2Grid, build_sos2_grid, fit_global, local_linearize
from .qp import PenaltyWeights, build_penalized_qp, recursive_refine, refine_backward, solve_qp
from .simulator import SimOutcome, evaluate_schedule, profit_grad, simulate
from .penalty_net import NetParams, forward, init_params, predict_weights
from .training import TrainConfig, evaluate, perturb_schedule, train
from .baselines import (DpGrid, MipModel, build_miqp_gl, build_miqp_pw, dp_schedule,
                        enumerate_exact, export_model)
from .data import PriceHistory, PriceScenario, kmedoids, load_prices

__all__ = [
    "BuildError", "DomainError", "FitError", "HeadBoundError", "SearchSpaceError", "SolverError",
    "Mode", "PlantConfig", "Trajectory", "UpcModel", "default_model", "gross_head", "upc_eval",
    "upc_fit", "GlobalLinearModel", "Sos2Grid", "build_sos2_grid", "fit_global",
    "local_linearize", "PenaltyWeights", "build_penalized_qp", "recursive_refine",
    "refine_backward", "solve_qp", "SimOutcome", "evaluate_schedule", "profit_grad", "simulate",
    "NetParams", "forward", "init_params", "predict_weights", "TrainConfig", "evaluate",
    "perturb_schedule", "train", "DpGrid", "MipModel", "build_miqp_gl", "build_miqp_pw",
    "dp_schedule", "enumerate_exact", "export_model", "PriceHistory", "PriceScenario",
    "kmedoids", "load_prices",
]
