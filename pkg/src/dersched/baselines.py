"""Reference policies for gap comparisons.

Both baselines decide device consumption with a fixed demand rule and then
move the battery with a simple rule:

* backup: store renewable surplus, never discharge (no outages are modeled);
* RATP: discharge to cover renewable-adjusted demand ``d - g`` when it is
  positive, charge to absorb it when it is negative.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import (BatterySpec, ControlAction, DeviceFleet, ExogenousTrace,
                    SystemState, TariffSchedule)

__all__ = [
    "DEMAND_RULES",
    "BaselineConfig",
    "myopic_demand",
    "reference_demand",
    "backup_action",
    "ratp_action",
    "BackupPolicy",
    "RatpPolicy",
]

DEMAND_RULES = ("myopic_retail", "reference_trace")


@dataclass(frozen=True)
class BaselineConfig:
    demand_rule: str = "myopic_retail"
    backup_target_soc: Optional[float] = None  # defaults to capacity

    def __post_init__(self):
        if self.demand_rule not in DEMAND_RULES:
            raise ValueError(f"unknown demand rule {self.demand_rule!r}")
        if self.backup_target_soc is not None and self.backup_target_soc < 0:
            raise ValueError("backup target must be non-negative")

    def target(self, spec: BatterySpec) -> float:
        if self.backup_target_soc is None:
            return spec.capacity
        if self.backup_target_soc > spec.capacity:
            raise ValueError("backup target exceeds capacity")
        return float(self.backup_target_soc)


def myopic_demand(t: int, tariff: TariffSchedule, fleet: DeviceFleet) -> np.ndarray:
    """Consumption where marginal utility equals the retail rate."""
    d = (fleet.alpha[t] - tariff.buy[t]) / fleet.beta[t]
    return fleet.clip(d, t)


def reference_demand(t: int, trace: ExogenousTrace, fleet: DeviceFleet) -> np.ndarray:
    """Recorded total demand split across devices in proportion to ``d_max``."""
    if trace.reference_demand is None:
        raise ValueError("trace has no recorded demand")
    cap = fleet.d_max[t]
    total = cap.sum()
    if total <= 0:
        return fleet.clip(np.zeros_like(cap), t)
    return fleet.clip(trace.reference_demand[t] * cap / total, t)


def backup_action(state: SystemState, demand: np.ndarray, spec: BatterySpec,
                  target: Optional[float] = None) -> float:
    """Charge from renewable surplus up to ``target``; never discharge."""
    target = spec.capacity if target is None else target
    surplus = max(state.generation - float(np.sum(demand)), 0.0)
    room = max(target - state.soc, 0.0) / spec.eff_charge
    return float(min(spec.charge_limit, room, surplus))


def ratp_action(state: SystemState, d_hat: float, spec: BatterySpec) -> float:
    """Renewable-adjusted threshold rule on ``d_hat - g``."""
    d_tilde = float(d_hat) - state.generation
    if d_tilde > 0:
        return float(max(-spec.discharge_limit, -spec.eff_discharge * state.soc, -d_tilde))
    room = (spec.capacity - state.soc) / spec.eff_charge
    return float(max(min(spec.charge_limit, room, -d_tilde), 0.0))


class _DemandRule:
    def __init__(self, tariff: TariffSchedule, fleet: DeviceFleet, spec: BatterySpec,
                 config: Optional[BaselineConfig] = None,
                 trace: Optional[ExogenousTrace] = None):
        self.tariff = tariff
        self.fleet = fleet
        self.spec = spec
        self.config = config or BaselineConfig()
        self.trace = trace
        if self.config.demand_rule == "reference_trace" and (
                trace is None or trace.reference_demand is None):
            raise ValueError("reference_trace demand rule needs a trace with recorded demand")

    def demand(self, t: int) -> np.ndarray:
        if self.config.demand_rule == "reference_trace":
            return reference_demand(t, self.trace, self.fleet)
        return myopic_demand(t, self.tariff, self.fleet)


class BackupPolicy(_DemandRule):
    """Backup-mode battery with the configured demand rule."""

    def __call__(self, state: SystemState, t: int) -> ControlAction:
        d = self.demand(t)
        e = backup_action(state, d, self.spec, self.config.target(self.spec))
        return ControlAction(e, d)


class RatpPolicy(_DemandRule):
    """Renewable-adjusted threshold policy with the configured demand rule."""

    def __call__(self, state: SystemState, t: int) -> ControlAction:
        d = self.demand(t)
        return ControlAction(ratp_action(state, float(np.sum(d)), self.spec), d)
