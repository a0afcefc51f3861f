"""Identification of chemostat growth functions by feedback control.

Modules
-------
growth       growth-function families, crossover and derivative scans
dynamics     plant model, output disturbance, fixed-step RK4
control      feedback laws and the closed-loop simulator
settle       settlement detection for equilibrium readings
reconstruct  drift, Newton and secant reconstruction campaigns
twospecies   two-species stability analysis and switching protocols
cli          scenario files and the command-line runner
"""

from .control import ClosedLoop, ControllerConfig, ControllerState, saturate, simple_feedback
from .dynamics import (
    NO_DISTURBANCE,
    STANDARD_DISTURBANCE,
    DisturbanceModel,
    NumericalBlowup,
    PlantParams,
    PlantState,
)
from .growth import Haldane, Monod, Tabulated, crossover
from .reconstruct import (
    NewtonConfig,
    OracleEquilibrium,
    ReconstructedGraph,
    SecantConfig,
    SimulatedEquilibrium,
    drift_reconstruct,
    equilibrium_oracle,
    newton_reconstruct,
    secant_reconstruct,
)
from .settle import SettleConfig, run_until_settled

__version__ = "0.1.0"

__all__ = [
    "ClosedLoop", "ControllerConfig", "ControllerState", "saturate", "simple_feedback",
    "NO_DISTURBANCE", "STANDARD_DISTURBANCE", "DisturbanceModel", "NumericalBlowup",
    "PlantParams", "PlantState", "Haldane", "Monod", "Tabulated", "crossover",
    "NewtonConfig", "OracleEquilibrium", "ReconstructedGraph", "SecantConfig",
    "SimulatedEquilibrium", "drift_reconstruct", "equilibrium_oracle", "newton_reconstruct",
    "secant_reconstruct", "SettleConfig", "run_until_settled",
]
