"""Self-recognition of a robot's body from action-motion mutual information,
and uncalibrated visual servoing of the discovered control point."""

from .mi import MiConfig, SampleSet, digamma, ksg_mi
from .selfrec import ResponsivenessReport, SelfRecConfig, identify
from .servo import Goal, JacobianEstimate, ServoConfig, reach
from .sim import ExplorationLog, SimWorld, WorldConfig, default_world_config, run_exploration

__all__ = [
    "MiConfig", "SampleSet", "digamma", "ksg_mi",
    "ResponsivenessReport", "SelfRecConfig", "identify",
    "Goal", "JacobianEstimate", "ServoConfig", "reach",
    "ExplorationLog", "SimWorld", "WorldConfig", "default_world_config", "run_exploration",
]
