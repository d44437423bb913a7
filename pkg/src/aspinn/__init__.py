"""Anisotropic sparse physics-informed kernel networks for PDEs."""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    Ellipse,
    LogCholeskyFactor,
    ModelParams,
    Node,
    NonFiniteError,
    assemble_L,
    eval,
    eval_derivs,
    eval_points,
    sigma,
    whiten,
    zone_of_influence,
)
from .problems import PdeProblem, get_problem  # noqa: E402
from .trainer import TrainConfig, TrainReport, train  # noqa: E402
