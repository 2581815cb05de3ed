from lfbl_racing.api.api import create_config, run_from_config
from lfbl_racing.api.settings import Settings, load_settings
from lfbl_racing.control.linearize import corrected_control, nominal_control
from lfbl_racing.control.numerics import solve_care, solve_qp
from lfbl_racing.control.planner import plan, tracker_gain
from lfbl_racing.control.vehicle import VehicleParams, VehicleState, step_rk4
from lfbl_racing.experiments.inspect_results import (
    get_curve_statistics,
    get_learning_curve,
    get_trajectory_statistics,
    inspect_run,
)
from lfbl_racing.learning.episode import run_episode
from lfbl_racing.learning.policy import CorrectionPolicy
from lfbl_racing.learning.prenet import accel_to_action, collect_data, train_prenet
from lfbl_racing.learning.trainer import train

__version__ = "0.1.0"

__all__ = [
    "create_config",
    "run_from_config",
    "Settings",
    "load_settings",
    "VehicleParams",
    "VehicleState",
    "step_rk4",
    "nominal_control",
    "corrected_control",
    "solve_care",
    "solve_qp",
    "plan",
    "tracker_gain",
    "run_episode",
    "CorrectionPolicy",
    "train",
    "collect_data",
    "train_prenet",
    "accel_to_action",
    "get_learning_curve",
    "get_curve_statistics",
    "get_trajectory_statistics",
    "inspect_run",
]
