"""Reference solvers used to score policies and to test LSPS.

* :func:`deterministic_upper_bound` solves the perfect-foresight convex
  program with split charge/discharge variables (simultaneous charging and
  discharging is not excluded), either with an interior point solver or
  with a restarted primal-dual hybrid gradient method whose dual iterate
  certifies a bound on the optimum.
* :func:`brute_force_dp` is backward induction on a state/action lattice.
* :func:`relaxed_grid_scan` evaluates the fixed-peak relaxed objective on a
  grid of peak bounds by per-step concave maximization.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .allocation import HelperFunction
from .model import (BatterySpec, DeviceFleet, ExogenousTrace, TariffSchedule,
                    check_horizon, energy_cost)

__all__ = [
    "SolverError",
    "DeterministicSolution",
    "deterministic_upper_bound",
    "solution_value",
    "DPResult",
    "brute_force_dp",
    "GridScan",
    "relaxed_grid_scan",
]

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Raised when an iterative solver stops without meeting its tolerances."""

    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


@dataclass
class DeterministicSolution:
    e_plus: np.ndarray
    e_minus: np.ndarray
    demand: np.ndarray
    soc: np.ndarray
    net: np.ndarray
    peak: float
    objective: float
    dual_bound: float
    iterations: int
    primal_residual: float
    gap: float
    converged: bool
    method: str = "pdhg"
    history: list = field(default_factory=list, repr=False)

    @property
    def upper_bound(self) -> float:
        """Largest of the attained objective and the certified dual bound."""
        return max(self.objective, self.dual_bound)

    @property
    def simultaneous_steps(self) -> int:
        """Steps where both split variables are active (relaxation diagnostic)."""
        return int(np.sum((self.e_plus > 1e-7) & (self.e_minus > 1e-7)))

    @property
    def battery(self) -> np.ndarray:
        return self.e_plus - self.e_minus


def solution_value(e_plus, e_minus, demand, trace: ExogenousTrace, tariff: TariffSchedule,
                   fleet: DeviceFleet, spec: BatterySpec, s0: float) -> float:
    """Objective of a split-variable schedule, recomputed from raw actions."""
    d = np.asarray(demand, dtype=float).reshape(fleet.alpha.shape)
    z = d.sum(axis=1) + e_plus - e_minus - trace.generation
    util = np.sum(fleet.alpha * d - 0.5 * fleet.beta * d * d)
    s_T = s0 + np.sum(spec.eff_charge * e_plus - e_minus / spec.eff_discharge)
    cost = np.sum(energy_cost(z, tariff.buy, tariff.sell))
    return float(util - cost - tariff.demand_price * max(0.0, np.max(z))
                 - tariff.fixed_charge * len(z) + tariff.salvage * s_T)


class _SplitProgram:
    """Minimization form of the split-variable program for PDHG.

    Primal ``x = (d, e_plus, e_minus, c)``; the linear map stacks ``u - c``,
    ``u`` and the cumulative state-of-charge change, where
    ``u_t = sum_k d_tk + e_plus_t - e_minus_t``.
    """

    def __init__(self, trace, tariff, fleet, spec, s0):
        self.T = trace.horizon
        self.K = fleet.n_devices
        self.g = trace.generation
        self.buy, self.sell = tariff.buy, tariff.sell
        self.p = tariff.demand_price
        self.gamma = tariff.salvage
        self.alpha, self.beta = fleet.alpha, fleet.beta
        self.d_lo, self.d_hi = fleet.d_min, fleet.d_max
        self.tau, self.rho = spec.eff_charge, spec.eff_discharge
        self.e_chg, self.e_dis = spec.charge_limit, spec.discharge_limit
        self.B = spec.capacity
        self.s0 = s0
        # any optimal peak is at most the largest attainable net consumption
        self.c_hi = max(0.0, float(np.max(self.d_hi.sum(axis=1) + self.e_chg - self.g)))
        self.lin_ep = -self.gamma * self.tau
        self.lin_em = self.gamma / self.rho
        self.fixed = tariff.fixed_charge * self.T
        self.const = -self.gamma * s0 + self.fixed

    def zeros(self):
        T = self.T
        return [np.zeros((T, self.K)), np.zeros(T), np.zeros(T), 0.0]

    def apply(self, d, ep, em, c):
        u = d.sum(axis=1) + ep - em
        return u - c, u, np.cumsum(self.tau * ep - em / self.rho)

    def adjoint(self, y1, y2, y3):
        w = y1 + y2
        r = np.cumsum(y3[::-1])[::-1]
        return (np.repeat(w[:, None], self.K, axis=1), w + self.tau * r,
                -w - r / self.rho, -np.sum(y1))

    def steps(self):
        """Diagonal step sizes from absolute row and column sums."""
        T, K = self.T, self.K
        tail = np.arange(T, 0, -1, dtype=float)
        col = [np.full((T, K), 2.0), 2.0 + self.tau * tail, 2.0 + tail / self.rho, float(T)]
        row_c = np.arange(1, T + 1) * max(self.tau, 1.0 / self.rho)
        row = [K + 3.0, K + 2.0, row_c]
        return [1.0 / a for a in col], [1.0 / a for a in row]

    def prox_primal(self, d, ep, em, c, step):
        sd, se, sm, sc = step
        d = np.clip((d + sd * self.alpha) / (1.0 + sd * self.beta), self.d_lo, self.d_hi)
        ep = np.clip(ep - se * self.lin_ep, 0.0, self.e_chg)
        em = np.clip(em - sm * self.lin_em, 0.0, self.e_dis)
        c = min(max(c - sc * self.p, 0.0), self.c_hi)
        return d, ep, em, c

    def prox_dual(self, y1, y2, y3, step):
        s1, s2, s3 = step
        y1 = np.maximum(y1 - s1 * self.g, 0.0)
        lam = 1.0 / s2
        w = y2 / s2 - self.g
        w = np.where(w > lam * self.buy, w - lam * self.buy,
                     np.where(w < lam * self.sell, w - lam * self.sell, 0.0))
        y2 = y2 - s2 * (self.g + w)
        y3 = y3 - s3 * np.clip(y3 / s3, -self.s0, self.B - self.s0)
        return y1, y2, y3

    def primal_value(self, d, ep, em):
        """Minimization objective with the peak set to its tightest value."""
        z = d.sum(axis=1) + ep - em - self.g
        val = (np.sum(-self.alpha * d + 0.5 * self.beta * d * d) + self.lin_ep * ep.sum()
               + self.lin_em * em.sum() + np.sum(energy_cost(z, self.buy, self.sell))
               + self.p * max(0.0, float(np.max(z))))
        return float(val + self.const)

    def residual(self, d, ep, em):
        s = self.s0 + np.cumsum(self.tau * ep - em / self.rho)
        return float(max(0.0, -np.min(s), np.max(s) - self.B))

    def dual_value(self, y1, y2, y3):
        """Lower bound on the minimization optimum (weak duality)."""
        y1 = np.maximum(y1, 0.0)
        y2 = np.clip(y2, self.sell, self.buy)
        gd, gep, gem, gc = self.adjoint(y1, y2, y3)
        dd = np.clip((self.alpha - gd) / self.beta, self.d_lo, self.d_hi)
        val = np.sum(-self.alpha * dd + 0.5 * self.beta * dd * dd + gd * dd)
        val += np.sum(np.minimum(0.0, (self.lin_ep + gep) * self.e_chg))
        val += np.sum(np.minimum(0.0, (self.lin_em + gem) * self.e_dis))
        val += min(0.0, (self.p + gc) * self.c_hi)
        conj = (np.sum(self.g * y1) + np.sum(self.g * y2)
                + np.sum(np.maximum(y3 * (self.B - self.s0), -y3 * self.s0)))
        return float(val - conj + self.const)


def _copy(v):
    return [a.copy() if isinstance(a, np.ndarray) else a for a in v]


def _dist(u, v):
    return float(np.sqrt(sum(np.sum(np.square(np.asarray(a) - np.asarray(b)))
                             for a, b in zip(u, v))))


def _pdhg(prog: _SplitProgram, tol, max_iter, check_every=64):
    """Restarted PDHG with adaptive primal weight.

    Every ``check_every`` iterations the current and averaged iterates are
    scored by their duality gap; the run restarts from the better one once
    the gap has dropped by a constant factor since the last restart.
    """
    tx0, ty0 = prog.steps()
    omega = 1.0
    x = prog.zeros()
    y = [np.zeros(prog.T), np.clip(np.zeros(prog.T), prog.sell, prog.buy), np.zeros(prog.T)]
    x_sum, y_sum = [0.0 * a for a in x], [0.0 * a for a in y]
    n_avg = 0
    last_restart_gap = np.inf
    x_anchor, y_anchor = _copy(x), _copy(y)
    history = []
    best = None
    it = 0

    def score(xc, yc):
        pv = prog.primal_value(*xc[:3])
        dv = prog.dual_value(*yc)
        return pv, dv, prog.residual(*xc[:3]), pv - dv

    while it < max_iter:
        tx = [omega * a for a in tx0]
        ty = [a / omega for a in ty0]
        gx = prog.adjoint(*y)
        x_new = prog.prox_primal(*[a - s * b for a, s, b in zip(x, tx, gx)], tx)
        ax = prog.apply(*[2 * a - b for a, b in zip(x_new, x)])
        y = list(prog.prox_dual(*[a + s * b for a, s, b in zip(y, ty, ax)], ty))
        x = list(x_new)
        it += 1
        n_avg += 1
        x_sum = [s + a for s, a in zip(x_sum, x)]
        y_sum = [s + a for s, a in zip(y_sum, y)]
        if it % check_every:
            continue

        x_avg = [s / n_avg for s in x_sum]
        y_avg = [s / n_avg for s in y_sum]
        cur, avg = score(x, y), score(x_avg, y_avg)
        scale = 1.0 + abs(cur[0])
        merit = lambda sc: sc[3] / scale + sc[2]
        sc, xc, yc = min((cur, x, y), (avg, x_avg, y_avg), key=lambda c: merit(c[0]))
        history.append((it, -sc[0], -sc[1], sc[2], sc[3]))
        if best is None or merit(sc) < merit(best[0]):
            best = (sc, _copy(xc), _copy(yc))
        if sc[3] <= tol * scale and sc[2] <= 1e-7:
            return best, it, history, True
        if sc[3] <= 0.2 * last_restart_gap or n_avg >= 64 * check_every:
            dx, dy = _dist(xc, x_anchor), _dist(yc, y_anchor)
            if dx > 1e-12 and dy > 1e-12:
                omega = float(np.exp(0.5 * np.log(dy / dx) + 0.5 * np.log(omega)))
            x, y = _copy(xc), _copy(yc)
            x_anchor, y_anchor = _copy(x), _copy(y)
            x_sum, y_sum = [0.0 * a for a in x], [0.0 * a for a in y]
            n_avg = 0
            last_restart_gap = sc[3]
    if best is None:
        best = (score(x, y), _copy(x), _copy(y))
    return best, it, history, False


def _solve_cvxpy(prog: _SplitProgram):
    import cvxpy as cp

    T, K = prog.T, prog.K
    ep = cp.Variable(T, nonneg=True)
    em = cp.Variable(T, nonneg=True)
    c = cp.Variable(nonneg=True)
    imp = cp.Variable(T, nonneg=True)
    exp = cp.Variable(T, nonneg=True)
    cons = [ep <= prog.e_chg, em <= prog.e_dis]
    u = ep - em
    util = 0.0
    if K:
        d = cp.Variable((T, K))
        u = u + cp.sum(d, axis=1)
        util = cp.sum(cp.multiply(prog.alpha, d) - 0.5 * cp.multiply(prog.beta, cp.square(d)))
        cons += [d >= prog.d_lo, d <= prog.d_hi]
    flow = prog.tau * ep - em / prog.rho
    s = prog.s0 + cp.cumsum(flow)
    obj = (util - prog.buy @ imp + prog.sell @ exp - prog.p * c
           + prog.gamma * (prog.s0 + cp.sum(flow)))
    cons += [u - prog.g == imp - exp, u - prog.g <= c, s >= 0, s <= prog.B]
    problem = cp.Problem(cp.Maximize(obj), cons)
    problem.solve(solver=cp.CLARABEL)
    if problem.status not in ("optimal", "optimal_inaccurate"):
        raise SolverError(f"cvxpy status {problem.status}")
    dv = np.asarray(d.value).reshape(T, K) if K else np.zeros((T, 0))
    return (dv, np.maximum(ep.value, 0.0), np.maximum(em.value, 0.0),
            float(problem.value) - prog.fixed, problem.status == "optimal")


def deterministic_upper_bound(trace: ExogenousTrace, tariff: TariffSchedule,
                              fleet: DeviceFleet, spec: BatterySpec, s0: float,
                              method: str = "clarabel", tol: float = 1e-9,
                              max_iter: int = 100_000, strict: bool = True
                              ) -> DeterministicSolution:
    """Perfect-foresight optimum of the co-optimization program.

    ``method="clarabel"`` (default) hands the program to cvxpy's interior
    point solver. ``method="pdhg"`` runs the built-in first-order solver,
    whose dual iterate certifies ``dual_bound``; with ``strict`` a run that
    hits ``max_iter`` raises :class:`SolverError` carrying the best iterate.
    """
    T = check_horizon(trace, tariff, fleet)
    if not 0 <= s0 <= spec.capacity:
        raise ValueError("initial state of charge outside [0, B]")
    prog = _SplitProgram(trace, tariff, fleet, spec, s0)
    if method == "clarabel":
        d, ep, em, val, ok = _solve_cvxpy(prog)
        d = np.clip(d, prog.d_lo, prog.d_hi)
        ep, em = np.clip(ep, 0, prog.e_chg), np.clip(em, 0, prog.e_dis)
        sol = _make_solution(prog, d, ep, em, dual=val, iters=0, hist=[], ok=ok,
                             method=method, trace=trace, tariff=tariff, fleet=fleet, spec=spec)
        if not ok:
            log.warning("interior point solve reported %s", "optimal_inaccurate")
            if strict:
                raise SolverError("interior point solve inaccurate", sol)
        return sol
    if method != "pdhg":
        raise ValueError(f"unknown method {method!r}")
    best, iters, hist, ok = _pdhg(prog, tol, max_iter)
    (pv, dv, res, gap), xc, yc = best
    sol = _make_solution(prog, *xc[:3], dual=-dv, iters=iters, hist=hist, ok=ok,
                         method=method, trace=trace, tariff=tariff, fleet=fleet, spec=spec)
    if not ok:
        msg = f"PDHG stopped after {iters} iterations (gap {gap:.3e}, residual {res:.3e})"
        log.warning(msg)
        if strict:
            raise SolverError(msg, sol)
    return sol


def _make_solution(prog, d, ep, em, dual, iters, hist, ok, method, trace, tariff, fleet, spec):
    # tiny state-of-charge violations are removed by trimming the offending flow
    s = prog.s0 + np.cumsum(prog.tau * ep - em / prog.rho)
    if np.max(s) > prog.B or np.min(s) < 0:
        ep, em = _repair(prog, ep.copy(), em.copy())
        s = prog.s0 + np.cumsum(prog.tau * ep - em / prog.rho)
    soc = np.concatenate([[prog.s0], s])
    z = d.sum(axis=1) + ep - em - prog.g
    obj = solution_value(ep, em, d, trace, tariff, fleet, spec, prog.s0)
    res = prog.residual(d, ep, em)
    return DeterministicSolution(ep, em, d, soc, z, max(0.0, float(np.max(z))), obj,
                                 float(dual), iters, res, float(dual - obj), ok, method, hist)


def _repair(prog, ep, em):
    s = prog.s0
    for t in range(prog.T):
        nxt = s + prog.tau * ep[t] - em[t] / prog.rho
        if nxt > prog.B:
            ep[t] = max(0.0, ep[t] - (nxt - prog.B) / prog.tau)
        elif nxt < 0:
            em[t] = max(0.0, em[t] + nxt * prog.rho)
        s = min(max(s + prog.tau * ep[t] - em[t] / prog.rho, 0.0), prog.B)
    return ep, em


# ----------------------------------------------------------------------------
# lattice dynamic programming


@dataclass
class DPResult:
    value: float
    bound: float
    soc_grid: np.ndarray
    peak_grid: np.ndarray
    demand_grid: list
    values: np.ndarray
    policy_soc: np.ndarray
    policy_demand: np.ndarray


def brute_force_dp(trace: ExogenousTrace, tariff: TariffSchedule, fleet: DeviceFleet,
                   spec: BatterySpec, s0: float, soc_levels: int = 41,
                   peak_levels: int = 41, demand_levels: int = 21) -> DPResult:
    """Exact optimum over a state/action lattice by backward induction.

    Battery actions move the state of charge between lattice levels (the
    initial SoC is inserted into the lattice), device consumption takes
    ``demand_levels`` evenly spaced values per device and the running peak
    is rounded up onto its lattice, so the lattice value never exceeds the
    continuous optimum. ``bound`` is a Lipschitz-times-cell estimate of how
    far below the continuous optimum the lattice value can sit.
    """
    from .dp_validator import GenerationChain, LatticeGrids, backward_induction

    T = check_horizon(trace, tariff, fleet)
    if T > 6 or fleet.n_devices > 2:
        raise ValueError("brute_force_dp is limited to T <= 6 and at most 2 devices")
    if max(soc_levels, peak_levels, demand_levels) > 50:
        raise ValueError("lattice levels are limited to 50 per axis")
    grids = LatticeGrids.build([trace.generation], fleet, spec, soc_levels, peak_levels,
                               demand_levels, extra_soc=[s0])
    chain = GenerationChain.deterministic(trace.generation)
    table = backward_induction(tariff, fleet, spec, chain, grids)
    i0 = int(np.argmin(np.abs(grids.soc - s0)))
    value = float(table.values[0][0, i0, 0])
    bound = lattice_bound(tariff, fleet, spec, grids)
    return DPResult(value, bound, grids.soc, grids.peak, grids.demand, table.values,
                    table.policy_soc, table.policy_demand)


def lattice_bound(tariff: TariffSchedule, fleet: DeviceFleet, spec: BatterySpec,
                  grids) -> float:
    """Lipschitz-times-cell bound on the lattice optimality loss.

    Rounding a continuous schedule onto the lattice moves each step's battery
    action by at most one SoC cell (converted to power at the worst
    efficiency) and each device by at most one demand cell; the peak moves by
    the sum of those plus one peak cell. Each unit of shift in net
    consumption is worth at most the largest marginal rate involved.
    """
    T = tariff.horizon
    ds = float(np.max(np.diff(grids.soc))) if len(grids.soc) > 1 else 0.0
    de = ds / min(spec.eff_charge, spec.eff_discharge)
    # reachability: the largest lattice move inside the power limits may fall
    # short of the limit itself
    de = max(de, _limit_shortfall(grids.soc, spec))
    dc = float(np.max(np.diff(grids.peak))) if len(grids.peak) > 1 else 0.0
    rate = float(np.max(tariff.buy))
    l_batt = rate + tariff.salvage / spec.eff_discharge
    total = 0.0
    dd_peak = 0.0
    for t, levels in enumerate(grids.demand):
        dd_t = 0.0
        for k, lev in enumerate(levels):
            dd = float(np.max(np.diff(lev))) if len(lev) > 1 else 0.0
            dd_t += dd
            lip = abs(fleet.alpha[t, k]) + fleet.beta[t, k] * fleet.d_max[t, k]
            total += (lip + rate) * dd
        dd_peak = max(dd_peak, dd_t)
    total += T * l_batt * de
    total += tariff.demand_price * (dc + de + dd_peak)
    return float(total)


def _limit_shortfall(soc, spec):
    worst = 0.0
    for s in soc:
        up = soc[soc >= s] - s
        up = up[up / spec.eff_charge <= spec.charge_limit + 1e-12]
        dn = s - soc[soc <= s]
        dn = dn[dn * spec.eff_discharge <= spec.discharge_limit + 1e-12]
        reach_up = min(spec.charge_limit, (spec.capacity - s) / spec.eff_charge)
        reach_dn = min(spec.discharge_limit, spec.eff_discharge * s)
        worst = max(worst, reach_up - up.max() / spec.eff_charge,
                    reach_dn - dn.max() * spec.eff_discharge)
    return worst


# ----------------------------------------------------------------------------
# relaxed problem with a fixed peak bound


@dataclass
class GridScan:
    c_grid: np.ndarray
    J: np.ndarray
    best_c: float
    best_J: float
    v_hat: np.ndarray
    refined_c: float
    refined_J: float
    J_at: Callable[[float], float] = field(repr=False, default=None)


def _stage_objective(helper: HelperFunction, tariff: TariffSchedule, g, t):
    def f(v):
        v = np.asarray(v, dtype=float)
        out = np.asarray(helper.h_value(v, np.full(v.shape, t))) \
            - energy_cost(v - g, tariff.buy[t], tariff.sell[t])
        return out if out.ndim else float(out)
    return f


def relaxed_grid_scan(trace: ExogenousTrace, tariff: TariffSchedule, fleet: DeviceFleet,
                      spec: BatterySpec, c_grid: Sequence[float]) -> GridScan:
    """Fixed-peak relaxed objective ``J(c)`` on ``c_grid``.

    Each step's stage objective ``h(v) - cost(v - g)`` is concave, so its
    maximum over ``v <= c + g`` is attained at the projection of its
    unconstrained maximizer. The maximizer is found numerically (dense grid
    then golden-section refinement), independently of the closed-form policy
    used by LSPS. ``best_c`` is the grid argmax; ``refined_c`` refines it
    between the neighbouring grid points, using concavity of ``J``.
    """
    T = check_horizon(trace, tariff, fleet)
    c_grid = np.asarray(c_grid, dtype=float)
    if c_grid.size == 0:
        raise ValueError("empty peak grid")
    helper = HelperFunction(fleet, spec, tariff.salvage)
    g = trace.generation
    v_hat = np.empty(T)
    for t in range(T):
        v_hat[t] = _stage_argmax(_stage_objective(helper, tariff, g[t], t),
                                 helper.v_min[t], helper.v_max[t])
    J = np.concatenate([_J_many(helper, tariff, g, v_hat, chunk)
                        for chunk in np.array_split(c_grid, max(1, len(c_grid) // 256))])
    k = int(np.argmax(J))
    J_at = lambda c: _J_at(helper, tariff, g, v_hat, c)
    lo, hi = c_grid[max(k - 1, 0)], c_grid[min(k + 1, len(c_grid) - 1)]
    ref_J, ref_c = max((float(J[k]), float(c_grid[k])), _golden_max(J_at, lo, hi))
    return GridScan(c_grid, J, float(c_grid[k]), float(J[k]), v_hat, ref_c, ref_J, J_at)


def _J_many(helper, tariff, g, v_hat, cs):
    cs = np.asarray(cs, dtype=float)[:, None]
    steps = np.broadcast_to(np.arange(len(g)), (cs.shape[0], len(g)))
    upper = np.minimum(cs + g, helper.v_max)
    v = np.maximum(np.minimum(v_hat, upper), helper.v_min)
    stage = helper.h_value(v, steps) - energy_cost(v - g, tariff.buy, tariff.sell)
    return np.sum(stage, axis=1) - tariff.demand_price * cs[:, 0]


def _J_at(helper, tariff, g, v_hat, c):
    return float(_J_many(helper, tariff, g, v_hat, [c])[0])


_GOLD = (np.sqrt(5.0) - 1.0) / 2.0


def _golden_max(f, a, b, iters=100):
    """Golden-section maximization of a concave function on ``[a, b]``.

    Runs a fixed number of shrink steps, which takes the bracket to
    floating-point resolution; bounded Brent stops near ``sqrt(eps)``.
    """
    x1, x2 = b - _GOLD * (b - a), a + _GOLD * (b - a)
    f1, f2 = f(x1), f(x2)
    for _ in range(iters):
        if b - a <= 1e-15 * max(1.0, abs(a)):
            break
        if f1 < f2:
            a, x1, f1 = x1, x2, f2
            x2 = a + _GOLD * (b - a)
            f2 = f(x2)
        else:
            b, x2, f2 = x2, x1, f1
            x1 = b - _GOLD * (b - a)
            f1 = f(x1)
    cands = [(f(a), a), (f1, x1), (f2, x2), (f(b), b)]
    return max(cands)


def _stage_argmax(f, lo, hi, n=2001):
    """Maximizer of a concave scalar function on ``[lo, hi]``.

    A dense grid locates the peak cell, then golden-section search on the
    neighbouring cells refines it.
    """
    if hi - lo <= 0:
        return lo
    xs = np.linspace(lo, hi, n)
    vals = f(xs)
    k = int(np.argmax(vals))
    fine = _golden_max(f, xs[max(k - 1, 0)], xs[min(k + 1, n - 1)])
    return max((float(vals[k]), float(xs[k])), fine)[1]
