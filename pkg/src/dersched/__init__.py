"""Behind-the-meter demand and storage scheduling under NEM tariffs with demand charges."""
from .allocation import AllocationResult, HelperFunction
from .baselines import BackupPolicy, BaselineConfig, RatpPolicy
from .lsps import LspsPlanner, LspsSchedule, schedule
from .model import (BatterySpec, ControlAction, DeviceFleet, EpisodeLedger, ExogenousTrace,
                    SystemState, TariffSchedule, simulate_episode)
from .oracle import (SolverError, brute_force_dp, deterministic_upper_bound,
                     relaxed_grid_scan)

__version__ = "0.1.0"

__all__ = [
    "AllocationResult",
    "HelperFunction",
    "BackupPolicy",
    "BaselineConfig",
    "RatpPolicy",
    "LspsPlanner",
    "LspsSchedule",
    "schedule",
    "BatterySpec",
    "ControlAction",
    "DeviceFleet",
    "EpisodeLedger",
    "ExogenousTrace",
    "SystemState",
    "TariffSchedule",
    "simulate_episode",
    "SolverError",
    "brute_force_dp",
    "deterministic_upper_bound",
    "relaxed_grid_scan",
]
