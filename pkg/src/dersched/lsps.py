"""Large storage peak searching (LSPS).

The battery capacity constraint is relaxed so that each step only sees the
helper value ``h_t(v)``; with the peak bounded by a fixed ``c`` the problem
decomposes into per-step projections of an unconstrained optimum. The total
objective ``J(c)`` is concave in ``c``, so the best peak is the sign change
of the nonincreasing derivative ``J'(c)``. Actions derived at that peak are
split between devices and battery, then clipped forward in time so the state
of charge stays in ``[0, B]``.
"""
from __future__ import annotations

import logging
from bisect import bisect_left
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .allocation import HelperFunction
from .model import (BatterySpec, ControlAction, DeviceFleet, EpisodeLedger,
                    ExogenousTrace, SystemState, TariffSchedule, check_horizon,
                    energy_cost, simulate_episode)

__all__ = ["PeakSearchReport", "LspsSchedule", "LspsPlanner", "schedule"]

log = logging.getLogger(__name__)

BISECTION_TOL = 1e-9
BISECTION_MAX_ITER = 200


@dataclass(frozen=True)
class PeakSearchReport:
    candidates: np.ndarray
    c1: float
    c2: float
    c_star: float
    J_star: float
    active_set: np.ndarray
    iterations: int


@dataclass
class LspsSchedule:
    v_star: np.ndarray
    v_dagger: np.ndarray
    battery: np.ndarray
    demand: np.ndarray
    battery_clip: np.ndarray
    soc: np.ndarray
    c_star: float
    report: PeakSearchReport
    ledger: Optional[EpisodeLedger] = field(default=None, repr=False)

    @property
    def computed_peak(self) -> float:
        return self.c_star

    @property
    def realized_peak(self) -> float:
        if self.ledger is None:
            raise ValueError("schedule has not been evaluated on a realized trace")
        return self.ledger.realized_peak

    @property
    def clip_events(self) -> int:
        return int(np.count_nonzero(self.battery_clip))


class LspsPlanner:
    """Peak search and per-step policy for one instance.

    ``generation`` is the forecast used for planning.
    """

    def __init__(self, tariff: TariffSchedule, fleet: DeviceFleet, spec: BatterySpec,
                 generation):
        g = np.asarray(generation, dtype=float)
        if g.ndim != 1 or len(g) != tariff.horizon or fleet.horizon != tariff.horizon:
            raise ValueError("generation, tariff and fleet must share the horizon")
        if len(g) == 0:
            raise ValueError("empty trace")
        if np.any(g < 0):
            raise ValueError("generation must be non-negative")
        self.tariff = tariff
        self.fleet = fleet
        self.spec = spec
        self.helper = HelperFunction(fleet, spec, tariff.salvage)
        self.generation = g
        self.steps = np.arange(len(g))
        self.a_plus = np.asarray(self.helper.h_prime_inv(tariff.buy, self.steps))
        self.a_minus = np.asarray(self.helper.h_prime_inv(tariff.sell, self.steps))
        self.v_dag = np.clip(g, self.a_plus, self.a_minus)
        self._cand = np.minimum(self.v_dag - g, self.helper.v_max - g)
        # plain-list copies for the scalar search loop
        self._kv = self.helper._knot_v.tolist()
        self._kl = self.helper._knot_lam.tolist()
        self._cand_list = self._cand.tolist()
        self._g = g.tolist()
        self._vmin = self.helper.v_min.tolist()
        self._buy = tariff.buy.tolist()
        self._sell = tariff.sell.tolist()

    @property
    def horizon(self) -> int:
        return len(self.generation)

    # per-step pieces

    def v_dagger(self, g, t):
        """Unconstrained per-step optimum for generation ``g``."""
        g = np.asarray(g, dtype=float)
        if np.any(g < 0):
            raise ValueError("generation must be non-negative")
        out = np.clip(g, self.a_plus[t], self.a_minus[t])
        return out if out.ndim else float(out)

    def fixed_peak_policy(self, g, t, c):
        """Projection of the unconstrained optimum onto ``[v_min, min(c+g, v_max)]``.

        With inflexible devices ``c + g`` can fall below the smallest feasible
        net quantity; the lower bound wins in that case.
        """
        if np.any(np.asarray(c) < 0):
            raise ValueError("peak bound must be non-negative")
        g = np.asarray(g, dtype=float)
        upper = np.minimum(c + g, self.helper.v_max[t])
        out = np.maximum(np.minimum(self.v_dagger(g, t), upper), self.helper.v_min[t])
        return out if np.ndim(out) else float(out)

    def candidate_set(self) -> np.ndarray:
        """Per-step candidate peaks, in step order (duplicates kept)."""
        return self._cand.copy()

    # peak objective

    def J_value(self, c: float) -> float:
        v = self.fixed_peak_policy(self.generation, self.steps, c)
        e, d = self.helper.split_many(v, self.steps)
        return self._J_split(v, e, d, c)

    def _J_split(self, v, e, d, c: float) -> float:
        f = self.fleet
        util = np.sum(f.alpha * d - 0.5 * f.beta * d * d) + self.helper.salvage * np.sum(e)
        cost = np.sum(energy_cost(v - self.generation, self.tariff.buy, self.tariff.sell))
        return float(util - cost - self.tariff.demand_price * c)

    def _active(self, c: float) -> np.ndarray:
        return (self._cand > c) & (c + self.generation >= self.helper.v_min)

    def _marginal(self, t: int, v: float) -> float:
        # scalar h'_t(v): binary search over the step's sorted breakpoints
        kv, kl = self._kv[t], self._kl[t]
        i = bisect_left(kv, v)
        if i >= len(kv):
            i = len(kv) - 1
        if i == 0 or kv[i] <= v:
            return kl[i]
        j = i - 1
        return kl[j] + (kl[i] - kl[j]) * (v - kv[j]) / (kv[i] - kv[j])

    def J_prime(self, c: float, steps=None) -> float:
        """Derivative of ``J`` at ``c`` (``h'`` taken as its left limit).

        ``steps`` optionally restricts the sum to a subset of steps known to
        contain every active one.
        """
        if steps is None:
            steps = range(self.horizon)
        rates = self._buy if c >= 0 else self._sell
        cand, g, vmin = self._cand_list, self._g, self._vmin
        total = -self.tariff.demand_price
        for t in steps:
            if cand[t] > c and c + g[t] >= vmin[t]:
                total += self._marginal(t, c + g[t]) - rates[t]
        return total

    def find_c_star(self) -> PeakSearchReport:
        c_star, iters = self._search()
        return self._report(c_star, iters, self.J_value(c_star))

    def _search(self) -> tuple[float, int]:
        cand = self._cand
        p = self.tariff.demand_price
        top = float(np.max(cand))
        iters = 0
        if p == 0 or top <= 0:
            c_star = max(0.0, top)
        else:
            idx = [t for t, x in enumerate(self._cand_list) if x > 0]
            if self.J_prime(0.0, idx) <= 0:
                c_star = 0.0
            else:
                lo, hi = 0.0, top
                while hi - lo > BISECTION_TOL and iters < BISECTION_MAX_ITER:
                    mid = 0.5 * (lo + hi)
                    iters += 1
                    if self.J_prime(mid, idx) > 0:
                        lo = mid
                        idx = [t for t in idx if self._cand_list[t] > mid]
                    else:
                        hi = mid
                c_star = 0.5 * (lo + hi)
        return float(c_star), iters

    def _report(self, c_star: float, iters: int, J: float) -> PeakSearchReport:
        cand = self._cand
        below = cand[cand <= c_star]
        above = cand[cand >= c_star]
        c1 = float(np.max(below)) if below.size else c_star
        c2 = float(np.min(above)) if above.size else c_star
        active = np.flatnonzero(self._active(c_star))
        return PeakSearchReport(np.unique(cand), c1, c2, float(c_star), J, active, iters)

    # actions

    def plan(self, s0: float, c_star: Optional[float] = None,
             generation=None) -> LspsSchedule:
        """Actions for the whole horizon at peak bound ``c_star``.

        ``generation`` overrides the planning trace for the per-step
        projection (the peak search always uses the forecast).
        """
        searched = c_star is None
        c, iters = self._search() if searched else (float(c_star), 0)
        g = self.generation if generation is None else np.asarray(generation, dtype=float)
        v_dag = self.v_dagger(g, self.steps)
        v = self.fixed_peak_policy(g, self.steps, c)
        e, d = self.helper.split_many(v, self.steps)
        if generation is None:
            J = self._J_split(v, e, d, c)
        else:
            J = self.J_value(c)
        report = self._report(c, iters, J)
        if not searched:
            report = replace(report, c1=c, c2=c)
        e_plan = e.tolist()
        spec = self.spec
        B, tau, rho = spec.capacity, spec.eff_charge, spec.eff_discharge
        e_dis, e_chg = spec.discharge_limit, spec.charge_limit
        s = min(max(float(s0), 0.0), B)
        soc = [s]
        out = []
        for x in e_plan:
            lo = max(-e_dis, -rho * s)
            hi = min(e_chg, (B - s) / tau)
            x = lo if x < lo else hi if x > hi else x
            out.append(x)
            s = s + tau * x if x >= 0 else s + x / rho
            s = 0.0 if s < 0 else B if s > B else s
            soc.append(s)
        e_clipped = np.array(out)
        return LspsSchedule(v, v_dag, e_clipped, d, e - e_clipped, np.array(soc), c, report)

    def step_action(self, t: int, g: float, soc: float, c_star: float) -> ControlAction:
        """One-step action at a cached peak bound; constant time."""
        v = self.fixed_peak_policy(g, t, c_star)
        e, d = self.helper.split_many(v, t)
        spec = self.spec
        lo = max(-spec.discharge_limit, -spec.eff_discharge * soc)
        hi = min(spec.charge_limit, (spec.capacity - soc) / spec.eff_charge)
        return ControlAction(min(max(float(e), lo), hi), d)


def schedule(trace: ExogenousTrace, tariff: TariffSchedule, fleet: DeviceFleet,
             spec: BatterySpec, s0: float,
             realized: Optional[ExogenousTrace] = None) -> LspsSchedule:
    """Plan on ``trace`` and evaluate the actions on ``realized``.

    The peak bound is searched once on the forecast. When a separate
    realization is supplied the per-step projection uses the realized
    generation at that step together with the forecast peak bound.
    """
    check_horizon(trace, tariff, fleet)
    planner = LspsPlanner(tariff, fleet, spec, trace.generation)
    report = planner.find_c_star()
    actual = trace if realized is None else realized
    check_horizon(actual, tariff, fleet)
    sched = planner.plan(s0, report.c_star, generation=actual.generation)
    sched.report = report
    replay = lambda state, t: ControlAction(sched.battery[t], sched.demand[t])
    sched.ledger = simulate_episode(replay, actual, tariff, fleet, spec, s0)
    log.debug("lsps c*=%.6f realized peak=%.6f clips=%d", report.c_star,
              sched.ledger.realized_peak, sched.clip_events)
    return sched
