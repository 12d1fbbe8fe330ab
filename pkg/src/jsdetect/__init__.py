"""Statistical attack detection for linear-Gaussian cyber-physical systems."""

from jsdetect.attacks import AttackScenario, apply_scenario
from jsdetect.detectors import JsDetector, NominalModel, NpiDetector, SoDetector, Trace
from jsdetect.linsys import SteadyState, SystemModel, WhitenedStream
from jsdetect.quantizer import DetectorGrid, lloyd_grid

__all__ = [
    "AttackScenario",
    "DetectorGrid",
    "JsDetector",
    "NominalModel",
    "NpiDetector",
    "SoDetector",
    "SteadyState",
    "SystemModel",
    "Trace",
    "WhitenedStream",
    "apply_scenario",
    "lloyd_grid",
]

__version__ = "0.1.0"
