import numpy as np
import pytest

from dersched.model import BatterySpec, DeviceFleet, ExogenousTrace, TariffSchedule


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def unit_fleet():
    """One device with alpha = beta = d_max = 1 at a single step."""
    return DeviceFleet.constant(1, [1.0], [1.0], [1.0])


@pytest.fixture
def unit_battery():
    return BatterySpec(5.0, 1.0, 1.0)


@pytest.fixture
def nem_tariff():
    return TariffSchedule.flat(1, 0.12, 0.06, 10.0, 0.09)


def random_instance(rng, T=24, K=2, capacity=None):
    """Random valid instance with a daily-shaped generation trace."""
    t = np.arange(T)
    g = rng.uniform(1.0, 4.0) * np.maximum(0.0, np.sin(np.pi * ((t % 24) - 6) / 12.0))
    g = np.maximum(0.0, g * rng.uniform(0.7, 1.3, T))
    buy = rng.uniform(0.08, 0.3, T)
    sell = buy * rng.uniform(0.1, 0.9, T)
    tariff = TariffSchedule(buy, sell, float(rng.uniform(0.0, 10.0)), float(rng.uniform(0.03, 0.25)))
    fleet = DeviceFleet(rng.uniform(0.2, 1.5, (T, K)), rng.uniform(0.2, 2.0, (T, K)),
                        rng.uniform(0.3, 1.5, (T, K)))
    cap = float(rng.uniform(1.0, 10.0)) if capacity is None else capacity
    spec = BatterySpec(cap, float(rng.uniform(0.5, 1.5)), float(rng.uniform(0.5, 1.5)),
                       float(rng.uniform(0.85, 1.0)), float(rng.uniform(0.85, 1.0)))
    return ExogenousTrace(g), tariff, fleet, spec


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
