"""Safe learning-based control of elastic-joint robots.

Gaussian-process models of the flat-coordinate dynamics, a switching feedback
linearization with a conservative back-up law, and a second-order-cone safety
filter built from a higher-order control barrier function.
"""

from .backend import BACKEND
from .cbf import CbfChain, build_chain, linear_constraint
from .config import Config, ConfigError, load_config
from .dynamics import MatrixBounds, NonFiniteState, PlantState, RobotParams
from .gp import GpModel, KernelParams, RobotPrior, SEParams, TrainingSet, fit
from .linearize import Branch, SwitchConfig, envelope
from .sim import Mode, Reference, TrackingGain, TrajectoryLog, run_closed_loop
from .socp import FilterResult, Status, filter_input

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "Branch", "CbfChain", "Config", "ConfigError", "FilterResult", "GpModel",
    "KernelParams", "MatrixBounds", "Mode", "NonFiniteState", "PlantState", "Reference",
    "RobotParams", "RobotPrior", "SEParams", "Status", "SwitchConfig", "TrackingGain",
    "TrainingSet", "TrajectoryLog", "build_chain", "envelope", "filter_input", "fit",
    "linear_constraint", "load_config", "run_closed_loop",
]
