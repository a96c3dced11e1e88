"""Lattice dynamic programming and structural certification.

The co-optimization problem is solved exactly on a lattice: the state of
charge moves between grid levels, each device picks one of a few evenly
spaced consumption levels, and the running peak is rounded up onto its grid
(so the lattice charges at least the true demand charge and every lattice
schedule is feasible for the continuous problem). Generation follows a finite
Markov chain, possibly with a different state set at every step.

On the resulting value tables we check concavity in (s, c), monotonicity in
s, g and c, and the threshold shape of the greedy battery action.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .model import BatterySpec, DeviceFleet, TariffSchedule, energy_cost

__all__ = [
    "GenerationChain",
    "LatticeGrids",
    "ValueTable",
    "backward_induction",
    "CheckReport",
    "check_concavity",
    "check_monotonicity",
    "ThresholdReport",
    "extract_thresholds",
    "ScenarioOutcome",
    "NonmyopiaReport",
    "nonmyopia_counterexamples",
    "random_instance",
]

_TIE = 1e-12
SCENARIO_SALVAGE = 1e-6


@dataclass(frozen=True)
class GenerationChain:
    """Finite Markov chain for generation.

    ``states[t]`` holds the generation values available at step ``t`` (sorted
    ascending), ``transitions[t]`` is the ``(n_t, n_{t+1})`` row-stochastic
    matrix from step ``t`` to ``t + 1`` and ``initial`` the distribution over
    ``states[0]``.
    """

    states: tuple
    transitions: tuple
    initial: np.ndarray

    def __post_init__(self):
        T = len(self.states)
        if T == 0:
            raise ValueError("empty chain")
        if len(self.transitions) != T - 1:
            raise ValueError("need one transition matrix per step boundary")
        for t, g in enumerate(self.states):
            g = np.asarray(g, dtype=float)
            if g.ndim != 1 or g.size == 0 or np.any(g < 0) or np.any(np.diff(g) <= 0):
                raise ValueError("generation states must be non-negative and increasing")
        for t, P in enumerate(self.transitions):
            P = np.asarray(P, dtype=float)
            if P.shape != (len(self.states[t]), len(self.states[t + 1])):
                raise ValueError(f"transition {t} has shape {P.shape}")
            if np.any(P < 0) or not np.allclose(P.sum(axis=1), 1.0):
                raise ValueError("transition rows must be probability vectors")
        init = np.asarray(self.initial, dtype=float)
        if init.shape != (len(self.states[0]),) or not np.isclose(init.sum(), 1.0):
            raise ValueError("initial distribution does not match the first state set")

    @classmethod
    def deterministic(cls, generation: Sequence[float]) -> "GenerationChain":
        g = np.asarray(generation, dtype=float)
        return cls(tuple(np.array([x]) for x in g),
                   tuple(np.ones((1, 1)) for _ in range(len(g) - 1)), np.ones(1))

    @classmethod
    def stationary(cls, levels, matrix, horizon: int, initial=None) -> "GenerationChain":
        levels = np.asarray(levels, dtype=float)
        P = np.asarray(matrix, dtype=float)
        init = np.full(len(levels), 1.0 / len(levels)) if initial is None else initial
        return cls(tuple(levels for _ in range(horizon)),
                   tuple(P for _ in range(horizon - 1)), np.asarray(init, dtype=float))

    @property
    def horizon(self) -> int:
        return len(self.states)


@dataclass(frozen=True)
class LatticeGrids:
    soc: np.ndarray
    peak: np.ndarray
    demand: tuple  # demand[t][k]: levels for device k at step t

    @classmethod
    def build(cls, generation_levels, fleet: DeviceFleet, spec: BatterySpec,
              soc_levels: int = 21, peak_levels: int = 21, demand_levels: int = 11,
              extra_soc: Sequence[float] = ()) -> "LatticeGrids":
        """Even grids covering every reachable state.

        ``generation_levels`` is any array of generation values the instance
        can take; the peak grid spans ``[0, max possible net consumption]``.
        """
        if min(soc_levels, peak_levels, demand_levels) < 1:
            raise ValueError("grids need at least one level")
        soc = np.linspace(0.0, spec.capacity, soc_levels) if spec.capacity > 0 else np.zeros(1)
        if len(extra_soc):
            soc = np.unique(np.concatenate([soc, np.clip(extra_soc, 0, spec.capacity)]))
        g_min = float(np.min(np.concatenate([np.ravel(np.asarray(x, dtype=float))
                                             for x in generation_levels])))
        top = float(np.max(fleet.d_max.sum(axis=1))) + spec.charge_limit - g_min
        peak = np.linspace(0.0, max(top, 0.0), peak_levels) if top > 0 else np.zeros(1)
        demand = tuple(
            tuple(np.linspace(fleet.d_min[t, k], fleet.d_max[t, k], demand_levels)
                  if fleet.d_max[t, k] > fleet.d_min[t, k] else np.array([fleet.d_min[t, k]])
                  for k in range(fleet.n_devices))
            for t in range(fleet.horizon))
        return cls(soc, peak, demand)

    @property
    def size(self) -> int:
        return int(max(len(self.soc), len(self.peak),
                       max((len(l) for lv in self.demand for l in lv), default=1)))


@dataclass
class ValueTable:
    """Lattice values ``values[t][i, a, b]`` at generation state ``i``, SoC
    index ``a`` and peak index ``b``; ``values[T]`` is the terminal reward."""

    grids: LatticeGrids
    chain: GenerationChain
    tariff: TariffSchedule
    fleet: DeviceFleet
    spec: BatterySpec
    values: list
    policy_soc: list
    policy_demand: list
    policy_battery: list
    policy_net: list
    combos: list = field(repr=False)

    @property
    def horizon(self) -> int:
        return self.chain.horizon

    def value(self, s_index: int, c_index: int = 0, t: int = 0) -> float:
        """Expected value under the chain's initial distribution (at ``t=0``)."""
        v = self.values[t][:, s_index, c_index]
        if t == 0:
            return float(self.chain.initial @ v)
        return float(np.mean(v))


def _guard(T, K, grids):
    if T > 6 or K > 2:
        raise ValueError("lattice DP is limited to T <= 6 and at most 2 devices")
    if grids.size > 51:  # one inserted initial-SoC level on top of 50
        raise ValueError("lattice grids are limited to 50 levels per axis")


def _battery_moves(soc, spec):
    """Battery power for each (from, to) SoC pair; NaN when not allowed."""
    ds = soc[None, :] - soc[:, None]
    e = np.where(ds >= 0, ds / spec.eff_charge, ds * spec.eff_discharge)
    ok = (e <= spec.charge_limit + 1e-12) & (e >= -spec.discharge_limit - 1e-12)
    return np.where(ok, e, np.nan)


def _snap_up(grid, x):
    idx = np.searchsorted(grid, x - 1e-12, side="left")
    return np.minimum(idx, len(grid) - 1)


def backward_induction(tariff: TariffSchedule, fleet: DeviceFleet, spec: BatterySpec,
                       chain: GenerationChain, grids: LatticeGrids) -> ValueTable:
    """Exact lattice optimum with expectation over generation transitions.

    Ties among maximizing actions are broken toward the smallest battery
    magnitude, then toward the lowest demand combination.
    """
    T = chain.horizon
    if tariff.horizon != T or fleet.horizon != T:
        raise ValueError("tariff, fleet and chain must share the horizon")
    _guard(T, fleet.n_devices, grids)
    soc, peak = grids.soc, grids.peak
    S, C = len(soc), len(peak)
    moves = _battery_moves(soc, spec)
    moves_ok = ~np.isnan(moves)
    moves0 = np.where(moves_ok, moves, 0.0)
    p = tariff.demand_price

    values = [None] * (T + 1)
    values[T] = np.broadcast_to(tariff.salvage * soc[None, :, None],
                                (len(chain.states[T - 1]), S, C)).copy()
    pol_s, pol_d, pol_e, pol_z, combos = [None] * T, [None] * T, [None] * T, [None] * T, [None] * T

    for t in range(T - 1, -1, -1):
        levels = grids.demand[t]
        combo = np.array(list(itertools.product(*levels))) if levels else np.zeros((1, 0))
        combos[t] = combo
        util = (combo @ fleet.alpha[t] - 0.5 * (combo * combo) @ fleet.beta[t]) if levels else np.zeros(1)
        dsum = combo.sum(axis=1)
        if t == T - 1:
            cont = values[T][0]  # (S, C), the terminal reward does not depend on g
            ev = np.broadcast_to(cont, (len(chain.states[t]), S, C))
        else:
            ev = np.einsum("ij,jac->iac", np.asarray(chain.transitions[t]), values[t + 1])
        G = len(chain.states[t])
        V = np.empty((G, S, C))
        Ps = np.zeros((G, S, C), dtype=int)
        Pd = np.zeros((G, S, C), dtype=int)
        Pe = np.zeros((G, S, C))
        Pz = np.zeros((G, S, C))
        for i, g in enumerate(chain.states[t]):
            # z[a, a2, m]
            z = moves0[:, :, None] + dsum[None, None, :] - g
            stage = (util[None, None, :] - energy_cost(z, tariff.buy[t], tariff.sell[t])
                     - tariff.fixed_charge)
            for b in range(C):
                cn = _snap_up(peak, np.maximum(z, peak[b]))
                tot = stage - p * (peak[cn] - peak[b]) + ev[i][np.arange(S)[None, :, None], cn]
                tot = np.where(moves_ok[:, :, None], tot, -np.inf)
                flat = tot.reshape(S, -1)
                best = flat.max(axis=1)
                near = flat >= best[:, None] - _TIE * (1.0 + np.abs(best[:, None]))
                mag = np.abs(np.repeat(moves0, len(dsum), axis=1))
                key = np.where(near, mag, np.inf)
                pick = np.argmin(key, axis=1)
                a2, m = np.divmod(pick, len(dsum))
                V[i, :, b] = best
                Ps[i, :, b], Pd[i, :, b] = a2, m
                Pe[i, :, b] = moves0[np.arange(S), a2]
                Pz[i, :, b] = z[np.arange(S), a2, m]
        values[t], pol_s[t], pol_d[t], pol_e[t], pol_z[t] = V, Ps, Pd, Pe, Pz
    return ValueTable(grids, chain, tariff, fleet, spec, values, pol_s, pol_d, pol_e, pol_z, combos)


# ----------------------------------------------------------------------------
# structural checks


@dataclass
class CheckReport:
    name: str
    worst: float
    tolerance: float
    violations: int
    checked: int
    location: Optional[tuple] = None

    @property
    def passed(self) -> bool:
        return self.violations == 0


def _slack(table: ValueTable, deterministic_tol: float, slack: Optional[float]) -> float:
    if slack is not None:
        return deterministic_tol + slack
    return deterministic_tol + discretization_slack(table)


def discretization_slack(table: ValueTable) -> float:
    """Rounding allowance for lattice effects.

    The peak is rounded up to its grid, so one peak cell of demand charge
    can separate neighbouring lattice values from their continuous
    counterparts; the SoC lattice restricts battery power to multiples of one
    cell, worth at most the largest marginal rate per cell. Both are zero
    when the corresponding axis is unused.
    """
    g = table.grids
    dc = float(np.max(np.diff(g.peak))) if len(g.peak) > 1 else 0.0
    ds = float(np.max(np.diff(g.soc))) if len(g.soc) > 1 else 0.0
    spec, tar = table.spec, table.tariff
    rate = float(np.max(tar.buy)) + tar.salvage
    eff = min(spec.eff_charge, spec.eff_discharge)
    return tar.demand_price * dc + rate * ds / eff


def check_concavity(table: ValueTable, tol: float = 1e-9,
                    slack: Optional[float] = None) -> CheckReport:
    """Midpoint concavity of ``V_t(., g, .)`` along s, c and both diagonals.

    Only equally spaced triples are tested. ``slack`` defaults to
    :func:`discretization_slack`; pass ``0.0`` for the bare tolerance.
    """
    allow = _slack(table, tol, slack)
    soc, peak = table.grids.soc, table.grids.peak
    worst, bad, n, where = 0.0, 0, 0, None
    for t in range(table.horizon):
        V = table.values[t]
        for da, db in ((1, 0), (0, 1), (1, 1), (1, -1)):
            for step in (1, 2):
                ha, hb = da * step, db * step
                S, C = V.shape[1], V.shape[2]
                a = np.arange(ha, S - ha) if ha else np.arange(S)
                b = np.arange(abs(hb), C - abs(hb)) if hb else np.arange(C)
                if a.size == 0 or b.size == 0:
                    continue
                A, Bi = np.meshgrid(a, b, indexing="ij")
                even_s = np.isclose(soc[A + ha] - soc[A], soc[A] - soc[A - ha])
                even_c = np.isclose(peak[Bi + hb] - peak[Bi], peak[Bi] - peak[Bi - hb])
                mask = even_s & even_c
                mid = V[:, A, Bi]
                viol = 0.5 * (V[:, A + ha, Bi + hb] + V[:, A - ha, Bi - hb]) - mid
                viol = np.where(mask[None], viol, -np.inf)
                n += int(mask.sum()) * V.shape[0]
                m = float(np.max(viol))
                if m > worst:
                    worst = m
                    where = (t, da, db, step) + tuple(int(x) for x in np.unravel_index(np.argmax(viol), viol.shape))
                bad += int(np.sum(viol > allow))
    return CheckReport("concavity", worst, allow, bad, n, where)


def check_monotonicity(table: ValueTable, tol: float = 1e-9) -> CheckReport:
    """``V_t`` nondecreasing along the s, g and c axes.

    The g axis is meaningful only for stochastically monotone chains; it is
    skipped at steps with a single generation state.
    """
    worst, bad, n, where = 0.0, 0, 0, None
    for t in range(table.horizon):
        V = table.values[t]
        for axis, name in ((1, "s"), (0, "g"), (2, "c")):
            if V.shape[axis] < 2:
                continue
            drop = -np.diff(V, axis=axis)
            n += drop.size
            m = float(np.max(drop))
            if m > worst:
                worst, where = m, (t, name)
            bad += int(np.sum(drop > tol * (1.0 + np.abs(V).max())))
    return CheckReport("monotonicity", worst, tol, bad, n, where)


@dataclass
class ThresholdReport:
    slices: int
    monotone_action: int
    monotone_next_soc: int
    faces: int
    interior: int
    worst_action_rise: float
    worst_soc_drop: float
    tolerance: float
    bands: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.monotone_action == self.slices and self.monotone_next_soc == self.slices


def _classify(table: ValueTable, t, i, a, b) -> str:
    spec, soc, peak = table.spec, table.grids.soc, table.grids.peak
    e = table.policy_battery[t][i, a, b]
    z = table.policy_net[t][i, a, b]
    s = soc[a]
    hi = min(spec.charge_limit, (spec.capacity - s) / spec.eff_charge)
    lo = max(-spec.discharge_limit, -spec.eff_discharge * s)
    cell = float(np.max(np.diff(soc))) if len(soc) > 1 else 0.0
    if e >= hi - cell / spec.eff_charge - 1e-12:
        return "charge_face"
    if e <= lo + cell * spec.eff_discharge + 1e-12:
        return "discharge_face"
    if table.tariff.demand_price > 0 and z >= peak[b] - 1e-12 and z > 0:
        return "peak_face"
    return "interior"


def extract_thresholds(table: ValueTable, cells: float = 1.0) -> ThresholdReport:
    """Shape of the greedy battery action as a function of s.

    For every (t, g, c) slice the action ``e*(s)`` must be nonincreasing and
    the post-decision SoC ``s'*(s)`` nondecreasing, which is what a threshold
    rule looks like on a lattice: a charge region at low s, a band where the
    post-decision SoC is held at a target, and a discharge region at high s.
    Each action is also classified as sitting on a face of the feasible set
    or in the interior.

    Lattice rounding is allowed for: ``cells`` SoC cells of battery power, and
    one cell per device plus one peak cell, since the battery absorbs jumps
    between neighbouring consumption levels when net consumption is pinned.
    """
    g = table.grids
    spec = table.spec
    soc = g.soc
    ds = float(np.max(np.diff(soc))) if len(soc) > 1 else 0.0
    dd = max((sum(float(np.max(np.diff(l))) if len(l) > 1 else 0.0 for l in lv)
              for lv in g.demand), default=0.0)
    dc = float(np.max(np.diff(g.peak))) if len(g.peak) > 1 and table.tariff.demand_price > 0 else 0.0
    coupled = dd + dc if dd > 0 else 0.0
    tol = cells * ds / min(spec.eff_charge, spec.eff_discharge) + coupled + 1e-12
    tol_s = cells * ds + coupled * max(spec.eff_charge, 1.0 / spec.eff_discharge) + 1e-12
    slices = mono_e = mono_s = faces = interior = 0
    worst_e = worst_s = 0.0
    bands = {}
    for t in range(table.horizon):
        E, Sn = table.policy_battery[t], table.policy_soc[t]
        G, S, C = E.shape
        for i in range(G):
            for b in range(C):
                slices += 1
                e = E[i, :, b]
                rise = float(np.max(np.diff(e))) if S > 1 else 0.0
                drop = float(np.max(-np.diff(soc[Sn[i, :, b]]))) if S > 1 else 0.0
                worst_e, worst_s = max(worst_e, rise), max(worst_s, drop)
                mono_e += rise <= tol
                mono_s += drop <= tol_s
                kinds = [_classify(table, t, i, a, b) for a in range(S)]
                faces += sum(k != "interior" for k in kinds)
                interior += sum(k == "interior" for k in kinds)
                bands[(t, i, b)] = _runs(kinds)
    return ThresholdReport(slices, mono_e, mono_s, faces, interior, worst_e, worst_s, tol, bands)


def _runs(kinds):
    out = []
    for k in kinds:
        if not out or out[-1] != k:
            out.append(k)
    return tuple(out)


# ----------------------------------------------------------------------------
# non-myopia counterexamples


@dataclass
class ScenarioOutcome:
    name: str
    first_stage: tuple
    actions: tuple
    depends_on_future: bool
    details: dict = field(default_factory=dict)


@dataclass
class NonmyopiaReport:
    scenario_a: ScenarioOutcome
    scenario_b: ScenarioOutcome

    @property
    def passed(self) -> bool:
        return self.scenario_a.depends_on_future and self.scenario_b.depends_on_future


def _scenario_b(sell):
    """Battery-only, two steps, no demand charge, s0 = discharge limit = 1.

    Salvage must be positive, so a negligible rate stands in for zero.
    """
    tariff = TariffSchedule(np.array([0.2, 0.2]), np.asarray(sell, dtype=float), 0.0,
                            SCENARIO_SALVAGE)
    spec = BatterySpec(1.0, 1.0, 1.0)
    fleet = DeviceFleet.empty(2)
    grids = LatticeGrids(np.linspace(0.0, 1.0, 11), np.array([0.0, 1.0]), ((), ()))
    table = backward_induction(tariff, fleet, spec, GenerationChain.deterministic([0.0, 0.0]), grids)
    a0 = len(grids.soc) - 1
    e0 = float(table.policy_battery[0][0, a0, 0])
    a1 = int(table.policy_soc[0][0, a0, 0])
    b1 = int(_snap_up(grids.peak, max(table.policy_net[0][0, a0, 0], 0.0)))
    e1 = float(table.policy_battery[1][0, a1, b1])
    return (e0, e1), float(table.values[0][0, a0, 0])


def _scenario_a(g0, g1, alpha=1.0, beta=1.0, buy=0.12, sell=0.06, p=0.2, levels=2001):
    """No storage, one device, demand charge: exhaustive search over (d0, d1)."""
    d = np.linspace(0.0, 1.0, levels)
    D0, D1 = np.meshgrid(d, d, indexing="ij")
    z0, z1 = D0 - g0, D1 - g1
    util = alpha * (D0 + D1) - 0.5 * beta * (D0 ** 2 + D1 ** 2)
    obj = util - energy_cost(z0, buy, sell) - energy_cost(z1, buy, sell) \
        - p * np.maximum(np.maximum(z0, z1), 0.0)
    k = np.unravel_index(np.argmax(obj), obj.shape)
    return float(d[k[0]]), float(d[k[1]])


def nonmyopia_counterexamples() -> NonmyopiaReport:
    """Two-step instances whose first-stage optimum depends on step-2 data.

    Scenario A removes the SoC coupling (no storage) and keeps the demand
    charge: the first-stage net consumption changes when only ``g_1`` moves.
    Scenario B removes the demand charge and keeps the SoC coupling: the
    optimal step-0 discharge flips when only the step-1 export rate moves.
    """
    g = 0.2
    same = _scenario_a(g, g)
    lower = _scenario_a(g, 0.0)
    a = ScenarioOutcome("soc_relaxed", (same[0], lower[0]), (same, lower),
                        abs(same[0] - lower[0]) > 1e-3,
                        {"g0": g, "g1": (g, 0.0), "shift": lower[0] - same[0]})
    first, v1 = _scenario_b([0.1, 0.05])
    second, v2 = _scenario_b([0.05, 0.1])
    b = ScenarioOutcome("peak_relaxed", (first[0], second[0]), (first, second),
                        abs(first[0] - second[0]) > 1e-9, {"values": (v1, v2)})
    return NonmyopiaReport(a, b)


# ----------------------------------------------------------------------------
# random tiny instances


def random_instance(rng: np.random.Generator, horizon: int = 3, n_devices: int = 1,
                    n_states: int = 2, stochastic: bool = True):
    """Random valid tiny instance with a stochastically monotone chain."""
    buy = rng.uniform(0.1, 0.3, horizon)
    sell = buy * rng.uniform(0.2, 0.9, horizon)
    tariff = TariffSchedule(buy, sell, float(rng.choice([0.0, rng.uniform(0.05, 0.5)])),
                            float(rng.uniform(0.05, 0.25)))
    spec = BatterySpec(float(rng.uniform(1.0, 3.0)), float(rng.uniform(0.5, 1.5)),
                       float(rng.uniform(0.5, 1.5)))
    if n_devices:
        fleet = DeviceFleet(rng.uniform(0.3, 1.0, (horizon, n_devices)),
                            rng.uniform(0.2, 1.0, (horizon, n_devices)),
                            rng.uniform(0.5, 1.5, (horizon, n_devices)))
    else:
        fleet = DeviceFleet.empty(horizon)
    if stochastic and n_states > 1:
        levels = np.sort(rng.uniform(0.0, 2.0, n_states))
        levels[0] = 0.0
        # upper-triangular mass shift keeps rows ordered in the stochastic sense
        base = rng.dirichlet(np.ones(n_states))
        P = np.array([np.roll(base, 0) for _ in range(n_states)])
        for r in range(n_states):
            w = rng.uniform(0.0, 0.5) * (r / max(n_states - 1, 1))
            P[r] = (1 - w) * base + w * np.eye(n_states)[-1]
        chain = GenerationChain.stationary(levels, P, horizon)
    else:
        chain = GenerationChain.deterministic(rng.uniform(0.0, 2.0, horizon))
    return tariff, fleet, spec, chain
