"""Randomized validation suites behind the ``validate`` subcommand."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..dp_validator import (LatticeGrids, backward_induction, check_concavity,
                            check_monotonicity, extract_thresholds,
                            nonmyopia_counterexamples, random_instance)
from ..model import BatterySpec, DeviceFleet, ExogenousTrace, TariffSchedule
from ..oracle import brute_force_dp, deterministic_upper_bound

__all__ = [
    "StructuralRow",
    "structural_suite",
    "CrossOracleRow",
    "random_tiny_instance",
    "cross_oracle_suite",
    "nonmyopia_rows",
]


@dataclass(frozen=True)
class StructuralRow:
    instance: int
    stochastic: bool
    concavity_worst: float
    concavity_tol: float
    concavity_violations: int
    monotonicity_worst: float
    monotonicity_violations: int
    threshold_slices: int
    threshold_monotone: int
    passed: bool

    def record(self) -> dict:
        return asdict(self)


def structural_suite(n: int = 20, seed: int = 0, horizon: int = 3, n_states: int = 3,
                     soc_levels: int = 21, peak_levels: int = 21,
                     demand_levels: int = 11) -> list:
    """Concavity, monotonicity and threshold checks on random tiny instances.

    Even instances draw a stochastic generation chain, odd ones a
    deterministic trace.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for k in range(n):
        stochastic = k % 2 == 0
        tariff, fleet, spec, chain = random_instance(rng, horizon, 1, n_states, stochastic)
        grids = LatticeGrids.build(list(chain.states), fleet, spec, soc_levels, peak_levels,
                                   demand_levels)
        table = backward_induction(tariff, fleet, spec, chain, grids)
        conc = check_concavity(table)
        mono = check_monotonicity(table)
        thr = extract_thresholds(table)
        rows.append(StructuralRow(k, stochastic, conc.worst, conc.tolerance, conc.violations,
                                  mono.worst, mono.violations, thr.slices,
                                  min(thr.monotone_action, thr.monotone_next_soc),
                                  conc.passed and mono.passed and thr.passed))
    return rows


@dataclass(frozen=True)
class CrossOracleRow:
    instance: int
    horizon: int
    devices: int
    upper_bound: float
    dp_value: float
    difference: float
    lattice_bound: float
    passed: bool

    def record(self) -> dict:
        return asdict(self)


def random_tiny_instance(rng: np.random.Generator, max_horizon: int = 4):
    """Random deterministic instance small enough for the lattice DP."""
    T = int(rng.integers(1, max_horizon + 1))
    K = int(rng.integers(0, 3))
    tariff = TariffSchedule(rng.uniform(0.1, 0.3, T), rng.uniform(0.0, 0.1, T),
                            float(rng.uniform(0.0, 0.5)), float(rng.uniform(0.05, 0.2)), 0.01)
    if K:
        fleet = DeviceFleet(rng.uniform(0.3, 1.0, (T, K)), rng.uniform(0.2, 1.0, (T, K)),
                            rng.uniform(0.5, 1.5, (T, K)))
    else:
        fleet = DeviceFleet.empty(T)
    spec = BatterySpec(float(rng.uniform(1.0, 3.0)), 1.0, 1.0, 0.95, 0.95)
    trace = ExogenousTrace(rng.uniform(0.0, 2.0, T))
    s0 = float(rng.uniform(0.0, spec.capacity))
    return trace, tariff, fleet, spec, s0


def cross_oracle_suite(n: int = 20, seed: int = 0, max_horizon: int = 4,
                       rel_tol: float = 1e-6) -> list:
    """Convex upper bound against the lattice DP on random tiny instances.

    A row passes when the bound sits above the DP value (up to ``rel_tol``
    relative) and no further above it than the lattice discretization bound.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for k in range(n):
        trace, tariff, fleet, spec, s0 = random_tiny_instance(rng, max_horizon)
        ub = deterministic_upper_bound(trace, tariff, fleet, spec, s0)
        dp = brute_force_dp(trace, tariff, fleet, spec, s0)
        diff = ub.objective - dp.value
        ok = diff >= -rel_tol * max(1.0, abs(ub.objective)) and diff <= dp.bound
        rows.append(CrossOracleRow(k, trace.horizon, fleet.n_devices, ub.objective, dp.value,
                                   diff, dp.bound, bool(ok)))
    return rows


def nonmyopia_rows() -> list:
    rep = nonmyopia_counterexamples()
    out = []
    for s in (rep.scenario_a, rep.scenario_b):
        out.append({"scenario": s.name, "first_stage": list(s.first_stage),
                    "actions": [list(a) for a in s.actions],
                    "depends_on_future": bool(s.depends_on_future)})
    return out
