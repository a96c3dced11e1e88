import numpy as np
import pytest

from dersched.lsps import LspsPlanner, schedule
from dersched.model import BatterySpec, DeviceFleet, ExogenousTrace, TariffSchedule
from dersched.oracle import brute_force_dp, deterministic_upper_bound, relaxed_grid_scan

from conftest import random_instance
from oracles import stage_objective


def _planner(T=1, g=None, buy=0.12, sell=0.06, p=10.0, charge=1.0, discharge=1.0, fleet=None):
    g = np.zeros(T) if g is None else np.asarray(g, float)
    tariff = TariffSchedule.flat(T, buy, sell, p, 0.09)
    fleet = fleet or DeviceFleet.constant(T, [1.0], [1.0], [1.0])
    return LspsPlanner(tariff, fleet, BatterySpec(5.0, charge, discharge), g)


def _single_step_argmax(planner, g, n=40001):
    h = planner.helper
    v = np.linspace(h.v_min[0], h.v_max[0], n)
    obj = stage_objective(h.h_value(v, np.zeros(n, int)), planner.tariff.buy[0],
                          planner.tariff.sell[0], g, v)
    return v[np.argmax(obj)], v[1] - v[0]


@pytest.mark.parametrize("g,expected", [(3.0, 1.94), (1.0, 1.0)])
def test_v_dagger_examples(g, expected):
    pl = _planner()
    assert pl.v_dagger(g, 0) == pytest.approx(expected, abs=1e-12)
    v, cell = _single_step_argmax(pl, g)
    assert v == pytest.approx(expected, abs=cell)


def test_v_dagger_without_discharge():
    pl = _planner(buy=0.5, sell=0.06, discharge=0.0)
    assert pl.helper.h_prime_inv(0.5, 0) == pytest.approx(0.5, abs=1e-12)
    assert pl.v_dagger(0.2, 0) == pytest.approx(0.5, abs=1e-12)
    v, cell = _single_step_argmax(pl, 0.2)
    assert v == pytest.approx(0.5, abs=cell)


def test_fixed_peak_policy_examples():
    pl = _planner()
    assert pl.fixed_peak_policy(3.0, 0, 10.0) == pytest.approx(1.94)
    # a buy rate of 0.06 puts v_dagger at 1.94 for g = 0
    pl = _planner(buy=0.06)
    assert pl.v_dagger(0.0, 0) == pytest.approx(1.94)
    assert pl.fixed_peak_policy(0.0, 0, 0.5) == pytest.approx(0.5)
    # buy = sell = 0.12 pins v_dagger at -0.12, above the discharge floor of -1
    pl = _planner(buy=0.12, sell=0.12)
    assert pl.v_dagger(0.0, 0) == pytest.approx(-0.12)
    assert pl.fixed_peak_policy(0.0, 0, 10.0) == pytest.approx(-0.12)
    with pytest.raises(ValueError):
        pl.fixed_peak_policy(0.0, 0, -1.0)


def test_candidate_set_examples():
    # g = 0 gives v_dagger = -0.12, so a positive candidate needs the sell-side band
    pl = _planner(T=1, g=[0.0], buy=0.06)
    assert pl.candidate_set() == pytest.approx([1.94])
    pl = _planner(T=2, g=[0.0, 3.0], buy=0.06)
    # step 1: min(1.94 - 3, 2 - 3) = -1.06
    assert pl.candidate_set() == pytest.approx([1.94, -1.06])


def test_candidate_set_matches_recomputation(rng):
    trace, tariff, fleet, spec = random_instance(rng)
    pl = LspsPlanner(tariff, fleet, spec, trace.generation)
    g = trace.generation
    v_max = fleet.d_max.sum(axis=1) + spec.charge_limit
    expected = []
    for t in range(len(g)):
        a_plus = pl.helper.h_prime_inv(tariff.buy[t], t)
        a_minus = pl.helper.h_prime_inv(tariff.sell[t], t)
        vd = min(max(g[t], a_plus), a_minus)
        expected.append(min(vd - g[t], v_max[t] - g[t]))
    assert np.allclose(pl.candidate_set(), expected, atol=1e-12)


def test_J_prime_beyond_candidates(rng):
    trace, tariff, fleet, spec = random_instance(rng)
    pl = LspsPlanner(tariff, fleet, spec, trace.generation)
    c = float(np.max(pl.candidate_set())) + 1.0
    assert pl.J_prime(c) == pytest.approx(-tariff.demand_price)


def test_J_prime_nonnegative_without_demand_charge(rng):
    trace, tariff, fleet, spec = random_instance(rng)
    tariff = TariffSchedule(tariff.buy, tariff.sell, 0.0, tariff.salvage)
    pl = LspsPlanner(tariff, fleet, spec, trace.generation)
    for c in np.linspace(0, float(np.max(pl.candidate_set())), 20):
        assert pl.J_prime(c) >= -1e-12


def test_J_prime_matches_finite_difference():
    tariff = TariffSchedule.flat(2, 0.12, 0.06, 0.5, 0.09)
    fleet = DeviceFleet.constant(2, [1.0], [1.0], [1.0])
    pl = LspsPlanner(tariff, fleet, BatterySpec(5.0, 1.0, 1.0), np.array([0.0, 0.4]))
    grid = np.linspace(0.0, 2.0, 20001)
    scan = relaxed_grid_scan(ExogenousTrace(pl.generation), tariff, fleet, pl.spec, grid)
    h = grid[1] - grid[0]
    for c in (0.2, 0.7, 1.1):
        i = int(round(c / h))
        fd = (scan.J[i] - scan.J[i - 1]) / h
        assert pl.J_prime(c) == pytest.approx(fd, abs=1e-3)


def test_J_prime_nonincreasing(rng):
    for _ in range(10):
        trace, tariff, fleet, spec = random_instance(rng)
        pl = LspsPlanner(tariff, fleet, spec, trace.generation)
        cs = np.sort(np.concatenate([[0.0], np.maximum(pl.candidate_set(), 0.0)]))
        vals = [pl.J_prime(c) for c in cs]
        assert np.all(np.diff(vals) <= 1e-9)


def test_c_star_without_demand_charge(rng):
    trace, tariff, fleet, spec = random_instance(rng)
    tariff = TariffSchedule(tariff.buy, tariff.sell, 0.0, tariff.salvage)
    pl = LspsPlanner(tariff, fleet, spec, trace.generation)
    rep = pl.find_c_star()
    assert rep.c_star == pytest.approx(max(0.0, float(np.max(pl.candidate_set()))))
    grid = np.linspace(0.0, rep.c_star + 1.0, 10001)
    scan = relaxed_grid_scan(trace, tariff, fleet, spec, grid)
    assert scan.J_at(rep.c_star) >= scan.best_J - 1e-9


def test_c_star_single_step_closed_form():
    # one device alpha = 3, beta = 1, d_max = 3; no battery room
    tariff = TariffSchedule.flat(1, 0.12, 0.06, 1.5, 0.09)
    fleet = DeviceFleet.constant(1, [3.0], [1.0], [3.0])
    pl = LspsPlanner(tariff, fleet, BatterySpec(0.0, 0.0, 0.0), np.array([0.5]))
    rep = pl.find_c_star()
    # h'(c + g) = p + p_plus  =>  3 - (c + 0.5) = 1.62
    assert rep.c_star == pytest.approx(3.0 - 1.62 - 0.5, abs=1e-8)
    assert pl.helper.h_prime(rep.c_star + 0.5, 0) == pytest.approx(1.62, abs=1e-8)


def test_c_star_against_grid_scan(rng):
    trace, tariff, fleet, spec = random_instance(rng)
    pl = LspsPlanner(tariff, fleet, spec, trace.generation)
    rep = pl.find_c_star()
    top = max(float(np.max(pl.candidate_set())), 0.0) + 0.5
    scan = relaxed_grid_scan(trace, tariff, fleet, spec, np.linspace(0.0, top, 2001))
    assert abs(rep.J_star - scan.refined_J) <= 1e-6 * abs(scan.refined_J)


def _sine_instance(T=24, capacity=100.0, eff=1.0):
    t = np.arange(T)
    g = 3.0 * np.maximum(0.0, np.sin(np.pi * (t - 6) / 12.0))
    tariff = TariffSchedule.flat(T, 0.12, 0.06, 10.0, 0.09)
    fleet = DeviceFleet.constant(T, [0.42], [1.2], [0.6])
    return ExogenousTrace(g), tariff, fleet, BatterySpec(capacity, 1.0, 1.0, eff, eff)


def test_large_lossy_battery_near_oracle():
    trace, tariff, fleet, spec = _sine_instance(eff=0.95)
    sched = schedule(trace, tariff, fleet, spec, 50.0)
    ub = deterministic_upper_bound(trace, tariff, fleet, spec, 50.0)
    assert sched.clip_events == 0
    assert sched.ledger.total_reward <= ub.objective + 1e-6
    assert sched.ledger.total_reward >= ub.objective - 0.01 * abs(ub.objective)


def test_large_lossless_battery_matches_oracle():
    trace, tariff, fleet, spec = _sine_instance(eff=1.0)
    sched = schedule(trace, tariff, fleet, spec, 50.0)
    ub = deterministic_upper_bound(trace, tariff, fleet, spec, 50.0)
    top = float(np.max(sched.report.candidates)) + 1.0
    scan = relaxed_grid_scan(trace, tariff, fleet, spec, np.linspace(0.0, top, 2001))
    assert sched.clip_events == 0
    assert sched.ledger.total_reward == pytest.approx(ub.objective, rel=1e-6)
    assert sched.ledger.total_reward == pytest.approx(scan.refined_J + 0.09 * 50.0, rel=1e-6)


def test_battery_only_arbitrage_matches_dp():
    # room on both sides, so the lattice optimum is the per-step
    # salvage-versus-price rule
    T = 4
    tariff = TariffSchedule(np.array([0.3, 0.05, 0.1, 0.3]), np.array([0.25, 0.02, 0.05, 0.2]),
                            0.0, 0.09)
    fleet = DeviceFleet.empty(T)
    spec = BatterySpec(8.0, 1.0, 1.0)
    trace = ExogenousTrace(np.zeros(T))
    sched = schedule(trace, tariff, fleet, spec, 4.0)
    dp = brute_force_dp(trace, tariff, fleet, spec, 4.0, soc_levels=41, peak_levels=5)
    assert sched.ledger.total_reward == pytest.approx(dp.value, abs=1e-9)
    assert np.allclose(sched.battery, [-1.0, 1.0, 0.0, -1.0])


def test_schedule_feasible_and_clipped_forward(rng):
    for _ in range(10):
        trace, tariff, fleet, spec = random_instance(rng, capacity=float(rng.uniform(0.5, 3.0)))
        s0 = float(rng.uniform(0, spec.capacity))
        sched = schedule(trace, tariff, fleet, spec, s0)
        assert np.all(sched.soc >= -1e-12) and np.all(sched.soc <= spec.capacity + 1e-12)
        assert np.all(sched.battery <= spec.charge_limit + 1e-12)
        assert np.all(sched.battery >= -spec.discharge_limit - 1e-12)
        assert np.all(sched.demand <= fleet.d_max + 1e-12)
        assert sched.ledger.clip_events == 0


def test_noisy_forecast_bookkeeping(rng):
    trace, tariff, fleet, spec = random_instance(rng)
    noisy = trace.with_generation(trace.generation * rng.uniform(0.5, 1.5, trace.horizon))
    sched = schedule(noisy, tariff, fleet, spec, spec.capacity, realized=trace)
    assert sched.computed_peak == sched.c_star
    assert sched.realized_peak == pytest.approx(max(0.0, float(np.max(sched.ledger.net))))


def test_step_action_matches_plan(rng):
    trace, tariff, fleet, spec = random_instance(rng, capacity=50.0)
    pl = LspsPlanner(tariff, fleet, spec, trace.generation)
    plan = pl.plan(25.0)
    s = 25.0
    for t in range(trace.horizon):
        act = pl.step_action(t, trace.generation[t], s, plan.c_star)
        assert act.battery == pytest.approx(plan.battery[t], abs=1e-12)
        assert np.allclose(act.demand, plan.demand[t])
        s = plan.soc[t + 1]
