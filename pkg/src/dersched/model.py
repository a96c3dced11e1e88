"""Domain types, system dynamics and reward accounting.

All quantities are per decision step. With the default one-hour step, kW and
kWh coincide numerically, so battery power, device consumption and net
consumption share a unit and the demand charge is levied on the largest
per-step net consumption.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "TariffSchedule",
    "BatterySpec",
    "DeviceFleet",
    "ExogenousTrace",
    "SystemState",
    "ControlAction",
    "EpisodeLedger",
    "payment",
    "energy_cost",
    "soc_step",
    "feasible_battery_interval",
    "peak_step",
    "simulate_episode",
    "check_horizon",
]

_EPS = 1e-9


def _as_vector(x, name: str, length: Optional[int] = None) -> np.ndarray:
    arr = np.array(x, dtype=float)
    if arr.ndim == 0:
        if length is None:
            raise ValueError(f"{name} must be a sequence when no horizon is given")
        arr = np.full(length, float(arr))
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if length is not None and arr.shape[0] != length:
        raise ValueError(f"{name} has length {arr.shape[0]}, expected {length}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TariffSchedule:
    """NEM tariff with a non-coincident demand charge.

    ``buy`` and ``sell`` are per-step import and export rates ($/kWh),
    ``demand_price`` is charged once on the horizon peak ($/kW) and
    ``salvage`` values energy left in the battery at the end ($/kWh).
    """

    buy: np.ndarray
    sell: np.ndarray
    demand_price: float
    salvage: float
    fixed_charge: float = 0.0

    def __post_init__(self):
        buy = _as_vector(self.buy, "buy")
        sell = _as_vector(self.sell, "sell", len(buy))
        object.__setattr__(self, "buy", buy)
        object.__setattr__(self, "sell", sell)
        if np.any(sell < 0):
            raise ValueError("sell rates must be non-negative")
        if np.any(buy < sell):
            raise ValueError("buy rate must be at least the sell rate at every step")
        if self.demand_price < 0:
            raise ValueError("demand_price must be non-negative")
        if not self.salvage > 0:
            raise ValueError("salvage must be positive")

    @classmethod
    def flat(cls, horizon: int, buy: float, sell: float, demand_price: float,
             salvage: float, fixed_charge: float = 0.0) -> "TariffSchedule":
        return cls(np.full(horizon, buy), np.full(horizon, sell),
                   demand_price, salvage, fixed_charge)

    @property
    def horizon(self) -> int:
        return len(self.buy)

    def slice(self, start: int, stop: int) -> "TariffSchedule":
        return TariffSchedule(self.buy[start:stop], self.sell[start:stop],
                              self.demand_price, self.salvage, self.fixed_charge)


@dataclass(frozen=True)
class BatterySpec:
    capacity: float
    charge_limit: float
    discharge_limit: float
    eff_charge: float = 1.0
    eff_discharge: float = 1.0

    def __post_init__(self):
        if self.capacity < 0 or self.charge_limit < 0 or self.discharge_limit < 0:
            raise ValueError("capacity and power limits must be non-negative")
        for name in ("eff_charge", "eff_discharge"):
            eff = getattr(self, name)
            if not 0.0 < eff <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {eff}")


@dataclass(frozen=True)
class DeviceFleet:
    """Quadratic-utility flexible devices, ``U(d) = alpha*d - beta*d**2/2``.

    Arrays have shape ``(T, K)``. ``d_min`` defaults to zero; an inflexible
    device is one with ``d_min == d_max``.
    """

    alpha: np.ndarray
    beta: np.ndarray
    d_max: np.ndarray
    d_min: Optional[np.ndarray] = None

    def __post_init__(self):
        alpha = np.array(self.alpha, dtype=float)
        if alpha.ndim == 1:
            alpha = alpha[:, None]
        if alpha.ndim != 2:
            raise ValueError("alpha must have shape (T, K)")
        shape = alpha.shape
        arrays = {"alpha": alpha}
        for name in ("beta", "d_max", "d_min"):
            raw = getattr(self, name)
            if raw is None:
                raw = 0.0
            arr = np.array(raw, dtype=float)
            if arr.ndim == 1 and shape[1] == 1 and arr.shape[0] == shape[0]:
                arr = arr[:, None]
            arr = np.broadcast_to(arr, shape).copy()
            arrays[name] = arr
        for name, arr in arrays.items():
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if np.any(self.beta <= 0):
            raise ValueError("beta must be strictly positive")
        if np.any(self.alpha < 0):
            raise ValueError("alpha must be non-negative")
        if np.any(self.d_min < 0) or np.any(self.d_max < self.d_min):
            raise ValueError("device bounds must satisfy 0 <= d_min <= d_max")

    @classmethod
    def constant(cls, horizon: int, alpha, beta, d_max, d_min=None) -> "DeviceFleet":
        """Time-invariant fleet; scalar arguments give a single device."""
        row = lambda x: np.atleast_1d(np.asarray(x, dtype=float))
        a = np.tile(row(alpha), (horizon, 1))
        kw = {} if d_min is None else {"d_min": np.tile(row(d_min), (horizon, 1))}
        return cls(a, np.tile(row(beta), (horizon, 1)), np.tile(row(d_max), (horizon, 1)), **kw)

    @classmethod
    def empty(cls, horizon: int) -> "DeviceFleet":
        z = np.zeros((horizon, 0))
        return cls(z, z, z)

    @property
    def horizon(self) -> int:
        return self.alpha.shape[0]

    @property
    def n_devices(self) -> int:
        return self.alpha.shape[1]

    def utility(self, d, t: int) -> float:
        d = np.asarray(d, dtype=float)
        return float(np.sum(self.alpha[t] * d - 0.5 * self.beta[t] * d * d))

    def clip(self, d, t: int) -> np.ndarray:
        return np.clip(np.asarray(d, dtype=float), self.d_min[t], self.d_max[t])

    def slice(self, start: int, stop: int) -> "DeviceFleet":
        return DeviceFleet(self.alpha[start:stop], self.beta[start:stop],
                           self.d_max[start:stop], self.d_min[start:stop])


@dataclass(frozen=True)
class ExogenousTrace:
    generation: np.ndarray
    reference_demand: Optional[np.ndarray] = None
    step_hours: float = 1.0
    timestamps: Optional[tuple] = field(default=None, compare=False)

    def __post_init__(self):
        gen = _as_vector(self.generation, "generation")
        if np.any(gen < 0):
            raise ValueError("generation must be non-negative")
        object.__setattr__(self, "generation", gen)
        if self.reference_demand is not None:
            ref = _as_vector(self.reference_demand, "reference_demand", len(gen))
            if np.any(ref < 0):
                raise ValueError("reference_demand must be non-negative")
            object.__setattr__(self, "reference_demand", ref)
        if self.timestamps is not None and len(self.timestamps) != len(gen):
            raise ValueError("timestamps length does not match generation")

    @property
    def horizon(self) -> int:
        return len(self.generation)

    def slice(self, start: int, stop: int) -> "ExogenousTrace":
        ref = None if self.reference_demand is None else self.reference_demand[start:stop]
        ts = None if self.timestamps is None else self.timestamps[start:stop]
        return ExogenousTrace(self.generation[start:stop], ref, self.step_hours, ts)

    def with_generation(self, generation) -> "ExogenousTrace":
        return ExogenousTrace(generation, self.reference_demand, self.step_hours, self.timestamps)


@dataclass(frozen=True)
class SystemState:
    soc: float
    generation: float
    peak: float = 0.0


@dataclass(frozen=True)
class ControlAction:
    battery: float
    demand: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "demand", np.atleast_1d(np.asarray(self.demand, dtype=float)))


@dataclass(frozen=True)
class EpisodeLedger:
    """Realized trajectory of one episode.

    ``soc`` and ``peak`` have ``T + 1`` entries (states before each step plus
    the terminal state); the remaining per-step arrays have ``T`` entries.
    """

    soc: np.ndarray
    peak: np.ndarray
    generation: np.ndarray
    battery: np.ndarray
    demand: np.ndarray
    net: np.ndarray
    payment: np.ndarray
    utility: np.ndarray
    reward: np.ndarray
    battery_clipped: np.ndarray
    demand_clipped: np.ndarray
    terminal_reward: float

    @property
    def horizon(self) -> int:
        return len(self.reward)

    @property
    def stage_total(self) -> float:
        return float(np.sum(self.reward))

    @property
    def total_reward(self) -> float:
        return self.stage_total + self.terminal_reward

    @property
    def realized_peak(self) -> float:
        return float(self.peak[-1])

    @property
    def clip_events(self) -> int:
        return int(np.sum(self.battery_clipped) + np.sum(self.demand_clipped))


def check_horizon(trace: ExogenousTrace, tariff: TariffSchedule, fleet: DeviceFleet) -> int:
    T = trace.horizon
    if tariff.horizon != T or fleet.horizon != T:
        raise ValueError(
            f"horizon mismatch: trace {T}, tariff {tariff.horizon}, fleet {fleet.horizon}")
    if T < 1:
        raise ValueError("empty trace")
    return T


def energy_cost(z, buy, sell):
    """Volumetric NEM cost ``buy*[z]^+ - sell*[z]^-`` (vectorized)."""
    z = np.asarray(z, dtype=float)
    return np.where(z > 0, buy * z, sell * z)


def payment(z: float, c: float, t: int, tariff: TariffSchedule) -> float:
    """Stage payment with the rolling demand-charge increment."""
    if not 0 <= t < tariff.horizon:
        raise IndexError(f"step {t} outside horizon {tariff.horizon}")
    if c < 0:
        raise ValueError("peak must be non-negative")
    buy, sell = tariff.buy[t], tariff.sell[t]
    cost = buy * max(z, 0.0) - sell * max(-z, 0.0)
    return float(cost + tariff.demand_price * max(z - c, 0.0) + tariff.fixed_charge)


def soc_step(s: float, e: float, spec: BatterySpec) -> float:
    if e >= 0:
        return s + spec.eff_charge * e
    return s + e / spec.eff_discharge


def feasible_battery_interval(s: float, spec: BatterySpec) -> tuple[float, float]:
    """Battery powers that keep the next state of charge inside ``[0, B]``."""
    if s < -_EPS or s > spec.capacity + _EPS:
        raise ValueError(f"state of charge {s} outside [0, {spec.capacity}]")
    s = min(max(s, 0.0), spec.capacity)
    lo = max(-spec.discharge_limit, -spec.eff_discharge * s)
    hi = min(spec.charge_limit, (spec.capacity - s) / spec.eff_charge)
    return min(lo, 0.0), max(hi, 0.0)


def peak_step(z: float, c: float) -> float:
    return max(z, c)


Policy = Callable[[SystemState, int], ControlAction]


def simulate_episode(policy: Policy, trace: ExogenousTrace, tariff: TariffSchedule,
                     fleet: DeviceFleet, spec: BatterySpec, s0: float,
                     c0: float = 0.0, terminal: bool = True) -> EpisodeLedger:
    """Roll ``policy`` forward over the realized trace.

    Infeasible actions are clipped to the battery interval and the device
    boxes before they are applied; clipping is flagged per step. Pass
    ``terminal=False`` to omit the salvage reward (e.g. when chaining
    partial horizons with ``s0``/``c0`` carried over).
    """
    T = check_horizon(trace, tariff, fleet)
    if not -_EPS <= s0 <= spec.capacity + _EPS:
        raise ValueError(f"initial state of charge {s0} outside [0, {spec.capacity}]")
    K = fleet.n_devices
    soc = np.empty(T + 1)
    peak = np.empty(T + 1)
    battery = np.empty(T)
    demand = np.empty((T, K))
    net = np.empty(T)
    pay = np.empty(T)
    util = np.empty(T)
    b_clip = np.zeros(T, dtype=bool)
    d_clip = np.zeros(T, dtype=bool)
    soc[0] = min(max(s0, 0.0), spec.capacity)
    peak[0] = c0
    g = trace.generation

    for t in range(T):
        action = policy(SystemState(soc[t], g[t], peak[t]), t)
        lo, hi = feasible_battery_interval(soc[t], spec)
        e = float(action.battery)
        if e < lo - _EPS or e > hi + _EPS:
            b_clip[t] = True
        e = min(max(e, lo), hi)
        d_raw = np.broadcast_to(action.demand, (K,))
        d = fleet.clip(d_raw, t)
        if np.any(np.abs(d - d_raw) > _EPS):
            d_clip[t] = True
        z = float(np.sum(d)) + e - g[t]
        battery[t] = e
        demand[t] = d
        net[t] = z
        pay[t] = payment(z, peak[t], t, tariff)
        util[t] = fleet.utility(d, t)
        soc[t + 1] = min(max(soc_step(soc[t], e, spec), 0.0), spec.capacity)
        peak[t + 1] = peak_step(z, peak[t])

    reward = util - pay
    term = tariff.salvage * soc[-1] if terminal else 0.0
    return EpisodeLedger(soc, peak, g.copy(), battery, demand, net, pay, util, reward,
                         b_clip, d_clip, float(term))
