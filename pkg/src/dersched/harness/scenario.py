"""Scenario definitions, policy comparison runs, sweeps and studies."""
from __future__ import annotations

import dataclasses
import gc
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import yaml

from ..baselines import DEMAND_RULES, BackupPolicy, BaselineConfig, RatpPolicy
from ..lsps import LspsPlanner, schedule
from ..model import (BatterySpec, ControlAction, DeviceFleet, ExogenousTrace,
                     TariffSchedule, simulate_episode)
from ..oracle import deterministic_upper_bound, solution_value
from .data import calibrate_fleet, load_trace, synthetic_trace

__all__ = [
    "POLICIES",
    "SWEEP_AXES",
    "TariffConfig",
    "BatteryConfig",
    "FleetConfig",
    "TraceConfig",
    "SweepConfig",
    "NoiseConfig",
    "ScenarioSpec",
    "load_config",
    "GapRow",
    "GapReport",
    "run_scenario",
    "sweep",
    "summarize",
    "inject_noise",
    "NoiseRow",
    "noise_study",
    "TimingRow",
    "timing_benchmark",
    "build_instance",
]

POLICIES = ("backup", "ratp", "lsps")
SWEEP_AXES = ("battery_capacity", "salvage", "export_rate", "peak_price")
CROSS_CHECK_TOL = 1e-9


def _take(cls, raw, where):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ValueError(f"{where}: expected a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    extra = set(raw) - names
    if extra:
        raise ValueError(f"{where}: unknown keys {sorted(extra)}")
    return cls(**raw)


@dataclass(frozen=True)
class TariffConfig:
    buy: float = 0.12
    sell: float = 0.06
    demand_price: float = 10.0
    salvage: float = 0.09
    fixed_charge: float = 0.0

    def build(self, horizon: int) -> TariffSchedule:
        return TariffSchedule.flat(horizon, self.buy, self.sell, self.demand_price,
                                   self.salvage, self.fixed_charge)


@dataclass(frozen=True)
class BatteryConfig:
    capacity: float = 5.0
    charge_limit: float = 1.0
    discharge_limit: float = 1.0
    eff_charge: float = 0.95
    eff_discharge: float = 0.95
    initial_soc_fraction: float = 1.0

    def __post_init__(self):
        if not 0 <= self.initial_soc_fraction <= 1:
            raise ValueError("initial_soc_fraction must lie in [0, 1]")

    def build(self) -> BatterySpec:
        return BatterySpec(self.capacity, self.charge_limit, self.discharge_limit,
                           self.eff_charge, self.eff_discharge)

    @property
    def initial_soc(self) -> float:
        return self.initial_soc_fraction * self.capacity


@dataclass(frozen=True)
class FleetConfig:
    baseline_demand: Union[float, list] = 1.0
    baseline_price: float = 0.12
    elasticity: float = -0.1
    headroom: float = 2.0
    shares: Optional[list] = None

    def build(self, horizon: int, recorded=None) -> DeviceFleet:
        d0 = self.baseline_demand
        if d0 == "trace":
            if recorded is None:
                raise ValueError("fleet.baseline_demand 'trace' needs recorded demand")
            d0 = np.maximum(np.asarray(recorded, dtype=float), 1e-3)
        elif isinstance(d0, list) and len(d0) != horizon:
            raise ValueError("fleet.baseline_demand length does not match the horizon")
        return calibrate_fleet(d0, self.baseline_price, self.elasticity, self.headroom,
                               self.shares, horizon)


@dataclass(frozen=True)
class TraceConfig:
    path: Optional[str] = None
    horizon: int = 24
    peak_generation: float = 3.0
    base_demand: float = 1.0
    jitter: float = 0.0

    def build(self, seed: int) -> ExogenousTrace:
        if self.path is not None:
            return load_trace(self.path)
        if self.horizon < 1:
            raise ValueError("trace.horizon must be positive")
        return synthetic_trace(self.horizon, self.peak_generation, self.base_demand,
                               self.jitter, seed)

    @property
    def synthetic(self) -> bool:
        return self.path is None


@dataclass(frozen=True)
class SweepConfig:
    axis: str = "battery_capacity"
    values: tuple = ()

    def __post_init__(self):
        if self.axis not in SWEEP_AXES:
            raise ValueError(f"unknown sweep axis {self.axis!r}")
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))


@dataclass(frozen=True)
class NoiseConfig:
    sigma: float = 0.0
    levels: tuple = (0.0, 0.1, 0.2, 0.4)
    seeds: int = 30

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(float(v) for v in self.levels))
        if self.sigma < 0 or any(v < 0 for v in self.levels):
            raise ValueError("noise levels must be non-negative")
        if self.seeds < 1:
            raise ValueError("noise.seeds must be positive")


@dataclass(frozen=True)
class ScenarioSpec:
    name: str = "scenario"
    tariff: TariffConfig = field(default_factory=TariffConfig)
    battery: BatteryConfig = field(default_factory=BatteryConfig)
    fleet: FleetConfig = field(default_factory=FleetConfig)
    trace: TraceConfig = field(default_factory=TraceConfig)
    policies: tuple = POLICIES
    demand_rule: str = "myopic_retail"
    oracle_method: str = "clarabel"
    sweep: Optional[SweepConfig] = None
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "policies", tuple(self.policies))
        unknown = set(self.policies) - set(POLICIES)
        if unknown:
            raise ValueError(f"unknown policies {sorted(unknown)}")
        if self.demand_rule not in DEMAND_RULES:
            raise ValueError(f"unknown demand rule {self.demand_rule!r}")
        if self.oracle_method not in ("clarabel", "pdhg"):
            raise ValueError(f"unknown oracle method {self.oracle_method!r}")
        if self.sweep is not None:
            for v in self.sweep.values:
                _check_axis_value(self, self.sweep.axis, v)

    @classmethod
    def from_dict(cls, raw: dict) -> "ScenarioSpec":
        if not isinstance(raw, dict):
            raise ValueError("config root must be a mapping")
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(raw) - known
        if extra:
            raise ValueError(f"unknown top-level keys {sorted(extra)}")
        kw = dict(raw)
        kw["tariff"] = _take(TariffConfig, raw.get("tariff"), "tariff")
        kw["battery"] = _take(BatteryConfig, raw.get("battery"), "battery")
        kw["fleet"] = _take(FleetConfig, raw.get("fleet"), "fleet")
        kw["trace"] = _take(TraceConfig, raw.get("trace"), "trace")
        kw["noise"] = _take(NoiseConfig, raw.get("noise"), "noise")
        if raw.get("sweep") is not None:
            kw["sweep"] = _take(SweepConfig, raw["sweep"], "sweep")
        return cls(**kw)

    def with_value(self, axis: str, value: float) -> "ScenarioSpec":
        """Copy with one sweep axis set to ``value``."""
        _check_axis_value(self, axis, value)
        if axis == "battery_capacity":
            return dataclasses.replace(self, battery=dataclasses.replace(self.battery, capacity=value))
        key = {"salvage": "salvage", "export_rate": "sell", "peak_price": "demand_price"}[axis]
        return dataclasses.replace(self, tariff=dataclasses.replace(self.tariff, **{key: value}))


def _check_axis_value(spec: ScenarioSpec, axis: str, value: float):
    if axis == "battery_capacity" and value < 0:
        raise ValueError("battery capacity must be non-negative")
    if axis == "salvage" and not value > 0:
        raise ValueError("salvage must be positive")
    if axis == "export_rate" and not 0 <= value <= spec.tariff.buy:
        raise ValueError("export rate must lie in [0, buy rate]")
    if axis == "peak_price" and value < 0:
        raise ValueError("peak price must be non-negative")


def load_config(path: Union[str, Path]) -> ScenarioSpec:
    with open(path, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    return ScenarioSpec.from_dict(raw or {})


# ----------------------------------------------------------------------------
# single scenario


@dataclass(frozen=True)
class GapRow:
    scenario: str
    axis: str
    value: Optional[float]
    policy: str
    surplus: float
    gap_abs: float
    gap_pct: Optional[float]
    computed_peak: float
    realized_peak: float
    clip_events: int
    demand_rule: str
    trace: str
    wall_time: float = field(default=0.0, compare=False)

    def record(self, timings: bool = False) -> dict:
        rec = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        if not timings:
            rec.pop("wall_time")
        return rec


@dataclass
class GapReport:
    rows: list

    def policy(self, name: str) -> list:
        return [r for r in self.rows if r.policy == name]

    def cell(self, value, policy: str) -> GapRow:
        for r in self.rows:
            if r.policy == policy and r.value == value:
                return r
        raise KeyError((value, policy))

    def __add__(self, other: "GapReport") -> "GapReport":
        return GapReport(self.rows + other.rows)


def build_instance(spec: ScenarioSpec, trace: Optional[ExogenousTrace] = None):
    """Concrete (trace, tariff, fleet, battery, s0) for a scenario."""
    trace = spec.trace.build(spec.seed) if trace is None else trace
    T = trace.horizon
    tariff = spec.tariff.build(T)
    fleet = spec.fleet.build(T, trace.reference_demand)
    battery = spec.battery.build()
    return trace, tariff, fleet, battery, spec.battery.initial_soc


def _replay(battery, demand):
    return lambda state, t: ControlAction(battery[t], demand[t])


def _cross_check(ledger, trace, tariff, fleet, spec, s0, name):
    again = simulate_episode(_replay(ledger.battery, ledger.demand), trace, tariff, fleet, spec, s0)
    if abs(again.total_reward - ledger.total_reward) > CROSS_CHECK_TOL or again.clip_events:
        raise RuntimeError(f"{name}: ledger recomputation mismatch")


def _gap(oracle: float, value: float):
    gap = oracle - value
    return gap, (100.0 * gap / abs(oracle) if oracle != 0 else None)


def run_scenario(spec: ScenarioSpec, trace: Optional[ExogenousTrace] = None,
                 axis: str = "", value: Optional[float] = None,
                 forecast: Optional[ExogenousTrace] = None) -> GapReport:
    """Run every configured policy and the perfect-foresight bound.

    Policies see the realized trace except LSPS, which plans on
    ``forecast`` when one is given, or else on the trace perturbed by
    ``spec.noise.sigma``. Each reported surplus is recomputed from the raw
    actions before it is emitted.
    """
    trace, tariff, fleet, battery, s0 = build_instance(spec, trace)
    if forecast is None and spec.noise.sigma > 0:
        forecast = inject_noise(trace, spec.noise.sigma, spec.seed)
    cfg = BaselineConfig(spec.demand_rule)
    results = []
    for name in spec.policies:
        t0 = time.perf_counter()
        if name == "lsps":
            sched = schedule(forecast or trace, tariff, fleet, battery, s0, realized=trace)
            ledger, computed = sched.ledger, sched.c_star
            clips = sched.clip_events
        else:
            cls = BackupPolicy if name == "backup" else RatpPolicy
            ledger = simulate_episode(cls(tariff, fleet, battery, cfg, trace), trace, tariff,
                                      fleet, battery, s0)
            computed, clips = ledger.realized_peak, ledger.clip_events
        wall = time.perf_counter() - t0
        _cross_check(ledger, trace, tariff, fleet, battery, s0, name)
        results.append((name, ledger.total_reward, computed, ledger.realized_peak, clips, wall))

    t0 = time.perf_counter()
    sol = deterministic_upper_bound(trace, tariff, fleet, battery, s0, method=spec.oracle_method)
    wall = time.perf_counter() - t0
    check = solution_value(sol.e_plus, sol.e_minus, sol.demand, trace, tariff, fleet, battery, s0)
    if abs(check - sol.objective) > CROSS_CHECK_TOL * max(1.0, abs(check)):
        raise RuntimeError("oracle objective recomputation mismatch")
    best = sol.objective
    label = "synthetic" if spec.trace.synthetic and trace.timestamps is None else "file"
    rows = []
    for name, total, computed, realized, clips, w in results:
        gap, pct = _gap(best, total)
        rows.append(GapRow(spec.name, axis, value, name, total, gap, pct, computed, realized,
                           clips, spec.demand_rule, label, w))
    rows.append(GapRow(spec.name, axis, value, "oracle", best, 0.0, 0.0 if best != 0 else None,
                       sol.peak, sol.peak, sol.simultaneous_steps, spec.demand_rule, label, wall))
    return GapReport(rows)


def _run_cell(args):
    spec, axis, value = args
    return run_scenario(spec.with_value(axis, value), axis=axis, value=value)


def sweep(spec: ScenarioSpec, axis: Optional[str] = None,
          values: Optional[Sequence[float]] = None, workers: int = 1) -> GapReport:
    """One :func:`run_scenario` per sweep value, in value order."""
    axis = axis or (spec.sweep.axis if spec.sweep else None)
    values = values if values is not None else (spec.sweep.values if spec.sweep else ())
    if axis is None or len(values) == 0:
        raise ValueError("sweep needs an axis and at least one value")
    jobs = [(spec, axis, float(v)) for v in values]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_cell, jobs))
    else:
        parts = [_run_cell(j) for j in jobs]
    return GapReport([r for p in parts for r in p.rows])


def summarize(report: GapReport) -> list:
    """Mean gap percentage per (axis, policy), as in a per-axis summary table."""
    out = {}
    for r in report.rows:
        if r.gap_pct is None:
            continue
        out.setdefault((r.axis, r.policy), []).append(r.gap_pct)
    return [{"axis": a, "policy": p, "mean_gap_pct": float(np.mean(v)), "cells": len(v)}
            for (a, p), v in sorted(out.items())]


# ----------------------------------------------------------------------------
# forecast noise


def inject_noise(trace: ExogenousTrace, sigma: float, seed: Optional[int]) -> ExogenousTrace:
    """Multiplicative Gaussian noise on generation, floored at zero."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return trace
    rng = np.random.default_rng(seed)
    xi = rng.standard_normal(trace.horizon)
    return trace.with_generation(np.maximum(0.0, trace.generation * (1.0 + sigma * xi)))


@dataclass(frozen=True)
class NoiseRow:
    scenario: str
    sigma: float
    seeds: int
    mean_surplus: float
    std_error: float
    mean_computed_peak: float
    mean_realized_peak: float
    mean_peak_error: float
    mean_clip_events: float

    def record(self) -> dict:
        return dataclasses.asdict(self)


def noise_study(spec: ScenarioSpec, levels: Optional[Sequence[float]] = None,
                seeds: Optional[int] = None) -> list:
    """LSPS planned on noisy forecasts and evaluated on the true trace.

    Seed ``k`` of a study uses ``spec.seed + k``, so every noise level sees
    the same draws scaled by its own sigma.
    """
    levels = spec.noise.levels if levels is None else tuple(levels)
    seeds = spec.noise.seeds if seeds is None else seeds
    trace, tariff, fleet, battery, s0 = build_instance(spec)
    rows = []
    for sigma in levels:
        vals, comp, real, clips = [], [], [], []
        for k in range(seeds):
            fc = inject_noise(trace, sigma, spec.seed + k)
            sched = schedule(fc, tariff, fleet, battery, s0, realized=trace)
            vals.append(sched.ledger.total_reward)
            comp.append(sched.c_star)
            real.append(sched.realized_peak)
            clips.append(sched.clip_events)
        vals, comp, real = np.array(vals), np.array(comp), np.array(real)
        se = float(np.std(vals, ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0
        rows.append(NoiseRow(spec.name, float(sigma), seeds, float(vals.mean()), se,
                             float(comp.mean()), float(real.mean()),
                             float(np.mean(np.abs(real - comp))), float(np.mean(clips))))
    return rows


# ----------------------------------------------------------------------------
# timing


@dataclass(frozen=True)
class TimingRow:
    horizon: int
    lsps_seconds: float
    oracle_seconds: Optional[float]
    c_star: float

    def record(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class TimingReport:
    rows: list
    slope: float
    intercept: float
    r_squared: float

    def ratios(self) -> list:
        t = [r.lsps_seconds for r in self.rows]
        return [b / a for a, b in zip(t, t[1:])]


def timing_benchmark(horizons: Sequence[int] = (24, 240, 2400, 24000), repeats: int = 3,
                     oracle_max_horizon: int = 0, seed: int = 0,
                     spec: Optional[ScenarioSpec] = None) -> TimingReport:
    """Wall-clock of LSPS full-horizon planning (best of ``repeats``).

    The oracle is timed for horizons up to ``oracle_max_horizon``. The linear
    fit of LSPS time against T reports slope, intercept and R^2.
    """
    spec = spec or ScenarioSpec()
    rows = []
    for T in horizons:
        trace = synthetic_trace(T, spec.trace.peak_generation, spec.trace.base_demand,
                                max(spec.trace.jitter, 0.1), seed)
        tariff = spec.tariff.build(T)
        fleet = spec.fleet.build(T)
        battery = spec.battery.build()
        s0 = spec.battery.initial_soc
        best, c_star = np.inf, 0.0
        # garbage collection is paused while timing, as timeit does
        enabled = gc.isenabled()
        gc.collect()
        gc.disable()
        try:
            for _ in range(repeats):
                t0 = time.perf_counter()
                planner = LspsPlanner(tariff, fleet, battery, trace.generation)
                sched = planner.plan(s0)
                best = min(best, time.perf_counter() - t0)
                c_star = sched.c_star
        finally:
            if enabled:
                gc.enable()
        oracle = None
        if T <= oracle_max_horizon:
            t0 = time.perf_counter()
            deterministic_upper_bound(trace, tariff, fleet, battery, s0, method=spec.oracle_method)
            oracle = time.perf_counter() - t0
        rows.append(TimingRow(int(T), float(best), oracle, float(c_star)))
    x = np.array([r.horizon for r in rows], dtype=float)
    y = np.array([r.lsps_seconds for r in rows])
    if len(rows) >= 2:
        slope, intercept = np.polyfit(x, y, 1)
        pred = slope * x + intercept
        ss_tot = float(np.sum((y - y.mean()) ** 2))
        r2 = 1.0 - float(np.sum((y - pred) ** 2)) / ss_tot if ss_tot > 0 else 1.0
    else:
        slope, intercept, r2 = float("nan"), float("nan"), float("nan")
    return TimingReport(rows, float(slope), float(intercept), float(r2))
