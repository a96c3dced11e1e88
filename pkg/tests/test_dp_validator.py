import itertools

import numpy as np
import pytest

from dersched.dp_validator import (GenerationChain, LatticeGrids, backward_induction,
                                   check_concavity, check_monotonicity, extract_thresholds,
                                   nonmyopia_counterexamples, random_instance)
from dersched.model import BatterySpec, DeviceFleet, TariffSchedule, energy_cost


def _battery_grids(capacity, levels, peak):
    return LatticeGrids(np.linspace(0.0, capacity, levels), np.asarray(peak, float),
                        tuple(() for _ in range(8)))


def test_single_step_closed_form():
    tariff = TariffSchedule.flat(1, 0.3, 0.1, 0.0, 0.09)
    fleet = DeviceFleet.constant(1, [1.0], [1.0], [1.0])
    spec = BatterySpec(2.0, 1.0, 1.0)
    chain = GenerationChain.deterministic([0.4])
    grids = LatticeGrids.build([[0.4]], fleet, spec, 5, 3, 11)
    table = backward_induction(tariff, fleet, spec, chain, grids)
    d = np.linspace(0.0, 1.0, 11)
    for a, s in enumerate(grids.soc):
        best = -np.inf
        for s2 in grids.soc:
            e = s2 - s
            if abs(e) > 1.0 + 1e-12:
                continue
            z = d + e - 0.4
            val = d - 0.5 * d * d - energy_cost(z, 0.3, 0.1) + 0.09 * s2
            best = max(best, float(val.max()))
        assert table.values[0][0, a, 0] == pytest.approx(best, abs=1e-12)


def _enumerate_two_step(tariff, spec, chain, soc, peak, a0, b0=0):
    """Expected value of every lattice policy, battery only, T = 2."""
    p = tariff.demand_price

    def snap(x):
        return peak[min(np.searchsorted(peak, x - 1e-12), len(peak) - 1)]

    def move(s, s2):
        ds = s2 - s
        e = ds / spec.eff_charge if ds >= 0 else ds * spec.eff_discharge
        ok = -spec.discharge_limit - 1e-12 <= e <= spec.charge_limit + 1e-12
        return e if ok else None

    def stage(t, g, s, s2, c):
        e = move(s, s2)
        if e is None:
            return None
        z = e - g
        c2 = snap(max(z, c))
        return -energy_cost(z, tariff.buy[t], tariff.sell[t]) - p * (c2 - c), c2

    best = {}
    for i, g0 in enumerate(chain.states[0]):
        top = -np.inf
        n1 = len(chain.states[1])
        for s1 in soc:
            r0 = stage(0, g0, soc[a0], s1, peak[b0])
            if r0 is None:
                continue
            for plan in itertools.product(soc, repeat=n1):
                total = r0[0]
                feasible = True
                for j, g1 in enumerate(chain.states[1]):
                    r1 = stage(1, g1, s1, plan[j], r0[1])
                    if r1 is None:
                        feasible = False
                        break
                    total += chain.transitions[0][i, j] * (r1[0] + tariff.salvage * plan[j])
                if feasible:
                    top = max(top, total)
        best[i] = top
    return best


def test_two_point_chain_matches_enumeration():
    tariff = TariffSchedule(np.array([0.2, 0.3]), np.array([0.05, 0.1]), 0.4, 0.09)
    spec = BatterySpec(2.0, 1.0, 1.0, 0.9, 0.9)
    chain = GenerationChain.stationary([0.0, 1.0], [[0.7, 0.3], [0.2, 0.8]], 2)
    soc = np.linspace(0.0, 2.0, 5)
    peak = np.linspace(0.0, 1.0, 5)
    grids = LatticeGrids(soc, peak, ((), ()))
    table = backward_induction(tariff, DeviceFleet.empty(2), spec, chain, grids)
    for a0 in range(len(soc)):
        expect = _enumerate_two_step(tariff, spec, chain, soc, peak, a0)
        for i, v in expect.items():
            assert table.values[0][i, a0, 0] == pytest.approx(v, abs=1e-12)


def test_empty_battery_no_devices_is_zero():
    tariff = TariffSchedule.flat(3, 0.12, 0.06, 1.0, 1e-6)
    spec = BatterySpec(0.0, 0.0, 0.0)
    chain = GenerationChain.deterministic([0.0, 0.0, 0.0])
    grids = LatticeGrids.build([[0.0]], DeviceFleet.empty(3), spec, 5, 5, 5)
    table = backward_induction(tariff, DeviceFleet.empty(3), spec, chain, grids)
    for t in range(3):
        assert np.all(table.values[t] == 0.0)


def test_linear_instance_concavity_exact():
    tariff = TariffSchedule.flat(3, 0.09, 0.09, 0.0, 0.09)
    spec = BatterySpec(2.0, 1.0, 1.0)
    chain = GenerationChain.deterministic([0.0, 0.0, 0.0])
    grids = _battery_grids(2.0, 9, [0.0, 1.0])
    table = backward_induction(tariff, DeviceFleet.empty(3), spec, chain, grids)
    rep = check_concavity(table, slack=0.0)
    assert rep.passed
    assert rep.worst <= 1e-12


def test_invalid_tariff_rejected_before_check():
    with pytest.raises(ValueError):
        TariffSchedule.flat(2, 0.05, 0.1, 0.0, 0.09)


def test_battery_only_strictly_increasing_in_soc():
    tariff = TariffSchedule.flat(3, 0.2, 0.05, 0.0, 0.09)
    spec = BatterySpec(2.0, 1.0, 1.0, 0.95, 0.95)
    chain = GenerationChain.deterministic([0.5, 0.0, 1.0])
    grids = _battery_grids(2.0, 11, [0.0, 1.0])
    table = backward_induction(tariff, DeviceFleet.empty(3), spec, chain, grids)
    assert check_monotonicity(table).passed
    for t in range(3):
        assert np.all(np.diff(table.values[t], axis=1) > 0)


def test_value_flat_in_peak_beyond_reachable_net():
    tariff = TariffSchedule.flat(2, 0.2, 0.05, 2.0, 0.09)
    fleet = DeviceFleet.constant(2, [1.0], [1.0], [1.0])
    spec = BatterySpec(2.0, 1.0, 1.0)
    chain = GenerationChain.deterministic([0.0, 0.0])
    base = LatticeGrids.build([[0.0]], fleet, spec, 5, 5, 5)
    peak = np.concatenate([base.peak, base.peak[-1] + np.array([0.5, 1.0])])
    grids = LatticeGrids(base.soc, peak, base.demand)
    table = backward_induction(tariff, fleet, spec, chain, grids)
    top = int(np.searchsorted(peak, base.peak[-1]))
    for t in range(2):
        V = table.values[t]
        assert np.allclose(V[:, :, top:], V[:, :, top:top + 1], atol=1e-12)


def test_two_price_bands():
    # cheap first step below salvage, dear second step above it
    tariff = TariffSchedule(np.array([0.05, 0.3]), np.array([0.02, 0.25]), 0.0, 0.09)
    spec = BatterySpec(2.0, 1.0, 1.0)
    chain = GenerationChain.deterministic([0.0, 0.0])
    grids = _battery_grids(2.0, 9, [0.0, 1.0])
    table = backward_induction(tariff, DeviceFleet.empty(2), spec, chain, grids)
    rep = extract_thresholds(table)
    assert rep.passed
    e0 = table.policy_battery[0][0, :, 0]
    e1 = table.policy_battery[1][0, :, 0]
    assert np.all(np.diff(e0) <= 1e-12) and np.all(np.diff(e1) <= 1e-12)
    # step 0 charges up to the limit or to capacity; step 1 discharges
    assert e0[0] == pytest.approx(1.0) and e0[-1] == pytest.approx(0.0)
    assert np.all(e1[grids.soc >= 1.0] == pytest.approx(-1.0))
    assert rep.bands[(0, 0, 0)][0] == "charge_face"


def test_zero_price_instance_ties_toward_idle():
    tariff = TariffSchedule.flat(2, 0.09, 0.09, 0.0, 0.09)
    spec = BatterySpec(2.0, 1.0, 1.0)
    chain = GenerationChain.deterministic([0.0, 0.0])
    grids = _battery_grids(2.0, 9, [0.0, 1.0])
    table = backward_induction(tariff, DeviceFleet.empty(2), spec, chain, grids)
    for t in range(2):
        assert np.all(table.policy_battery[t] == 0.0)
    assert extract_thresholds(table).passed


def test_demand_charge_dominant_keeps_net_at_peak():
    tariff = TariffSchedule.flat(2, 0.12, 0.06, 50.0, 0.09)
    fleet = DeviceFleet.constant(2, [1.0], [0.1], [1.0], d_min=[1.0])
    spec = BatterySpec(2.0, 1.0, 1.0)
    chain = GenerationChain.deterministic([0.0, 0.0])
    grids = LatticeGrids.build([[0.0]], fleet, spec, 9, 9, 3)
    table = backward_induction(tariff, fleet, spec, chain, grids)
    b = 0
    for a, s in enumerate(grids.soc):
        if s >= 1.0:
            # inflexible unit load: discharge to hold net at the current peak
            assert table.policy_net[1][0, a, b] <= grids.peak[b] + 1e-12
            assert table.policy_battery[1][0, a, b] == pytest.approx(-1.0)


def test_random_instances_certify(rng):
    for k in range(4):
        tariff, fleet, spec, chain = random_instance(rng, 3, 1, 3, stochastic=k % 2 == 0)
        grids = LatticeGrids.build(list(chain.states), fleet, spec, 15, 15, 7)
        table = backward_induction(tariff, fleet, spec, chain, grids)
        assert check_concavity(table).passed
        assert check_monotonicity(table).passed
        assert extract_thresholds(table).passed


def test_nonmyopia_pairs():
    rep = nonmyopia_counterexamples()
    assert rep.passed
    assert rep.scenario_b.actions[0] == pytest.approx((-1.0, 0.0))
    assert rep.scenario_b.actions[1] == pytest.approx((0.0, -1.0))
    # first-stage consumption shifts by (g0 - g1) / 2 = 0.1
    assert rep.scenario_a.details["shift"] == pytest.approx(0.1, abs=1e-3)


def test_chain_validation():
    with pytest.raises(ValueError):
        GenerationChain.stationary([0.0, 1.0], [[0.5, 0.4], [0.5, 0.5]], 2)
    with pytest.raises(ValueError):
        GenerationChain.stationary([1.0, 0.0], [[0.5, 0.5], [0.5, 0.5]], 2)
    with pytest.raises(ValueError):
        GenerationChain((np.array([0.0]),), (np.ones((1, 1)),), np.ones(1))


def test_lattice_guard():
    tariff = TariffSchedule.flat(7, 0.12, 0.06, 0.0, 0.09)
    grids = _battery_grids(1.0, 5, [0.0, 1.0])
    with pytest.raises(ValueError):
        backward_induction(tariff, DeviceFleet.empty(7), BatterySpec(1.0, 1.0, 1.0),
                           GenerationChain.deterministic(np.zeros(7)), grids)
