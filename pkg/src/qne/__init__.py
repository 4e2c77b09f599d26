"""Joint sensing-time, threshold and power games for multicarrier cognitive radio."""

from .detector import DetectorStats, SignalingModel, detector_stats, q_function, q_inverse
from .model import Scenario, StrategyProfile, generate_scenario

__all__ = [
    "DetectorStats",
    "SignalingModel",
    "Scenario",
    "StrategyProfile",
    "detector_stats",
    "generate_scenario",
    "q_function",
    "q_inverse",
]
