"""Spiking actor-critic beamforming for a sensing-assisted V2X roadside unit."""

from .config import ConfigError, ScenarioConfig, dbm_to_watt, watt_to_dbm
from .channel import BeamAction, VehicleState
from .energy import EnergyCoefficients, EnergyLedger
from .env import Observation, V2XEnv
from .rl import TrainConfig, evaluate, train
from .snn import DenseNetwork, LifParams, SpikingNetwork

__version__ = "0.1.0"

__all__ = [
    "BeamAction", "ConfigError", "DenseNetwork", "EnergyCoefficients", "EnergyLedger", "LifParams",
    "Observation", "ScenarioConfig", "SpikingNetwork", "TrainConfig", "V2XEnv", "VehicleState",
    "dbm_to_watt", "evaluate", "train", "watt_to_dbm", "__version__",
]
