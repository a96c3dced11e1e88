"""Trace ingestion, synthetic instances and utility calibration."""
from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd

from ..model import DeviceFleet, ExogenousTrace

__all__ = [
    "TraceError",
    "MAX_FILL_STEPS",
    "BETA_MIN",
    "load_trace",
    "synthetic_generation",
    "synthetic_trace",
    "calibrate_fleet",
]

MAX_FILL_STEPS = 3
BETA_MIN = 1e-6

_REQUIRED = ("timestamp", "generation_kwh")


class TraceError(ValueError):
    """Raised when a trace file does not satisfy the CSV schema."""


def load_trace(path: Union[str, Path]) -> ExogenousTrace:
    """Read ``timestamp,generation_kwh[,demand_kwh]`` and resample to hours.

    Timestamps are ISO-8601 and must be strictly increasing. Rows finer than
    an hour are mean-aggregated (values are average rates over their
    interval). Missing hours are forward-filled when the gap spans at most
    ``MAX_FILL_STEPS`` hourly steps; longer gaps are rejected.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    df = pd.read_csv(path)
    missing = [c for c in _REQUIRED if c not in df.columns]
    if missing:
        raise TraceError(f"{path.name}: missing columns {missing}")
    if df.empty:
        raise TraceError(f"{path.name}: no rows")
    try:
        ts = pd.to_datetime(df["timestamp"], format="ISO8601")
    except (ValueError, TypeError) as exc:
        raise TraceError(f"{path.name}: unparseable timestamp ({exc})") from None
    if not ts.is_monotonic_increasing or ts.duplicated().any():
        raise TraceError(f"{path.name}: timestamps must be strictly increasing")
    cols = ["generation_kwh"] + (["demand_kwh"] if "demand_kwh" in df.columns else [])
    values = df[cols].apply(pd.to_numeric, errors="coerce")
    if values.isna().any().any():
        raise TraceError(f"{path.name}: non-numeric or empty values")
    if (values < 0).any().any():
        raise TraceError(f"{path.name}: negative values")
    frame = values.set_index(pd.DatetimeIndex(ts))
    hourly = frame.resample("1h").mean()
    gap = _longest_gap(hourly["generation_kwh"].isna().to_numpy())
    if gap > MAX_FILL_STEPS:
        raise TraceError(f"{path.name}: gap of {gap} hours exceeds {MAX_FILL_STEPS}")
    hourly = hourly.ffill()
    demand = hourly["demand_kwh"].to_numpy() if "demand_kwh" in hourly else None
    stamps = tuple(t.isoformat() for t in hourly.index)
    return ExogenousTrace(hourly["generation_kwh"].to_numpy(), demand, 1.0, stamps)


def _longest_gap(mask: np.ndarray) -> int:
    best = run = 0
    for m in mask:
        run = run + 1 if m else 0
        best = max(best, run)
    return best


def synthetic_generation(horizon: int, peak: float = 3.0, jitter: float = 0.0,
                         seed: Optional[int] = None) -> np.ndarray:
    """Daily sine profile ``peak * max(0, sin(pi (t - 6) / 12))``.

    ``jitter`` scales each step by an independent factor drawn uniformly from
    ``[1 - jitter, 1 + jitter]``.
    """
    t = np.arange(horizon)
    g = peak * np.maximum(0.0, np.sin(np.pi * (t - 6) / 12.0))
    if jitter > 0:
        rng = np.random.default_rng(seed)
        g = g * rng.uniform(1.0 - jitter, 1.0 + jitter, horizon)
    return np.maximum(g, 0.0)


def synthetic_trace(horizon: int, peak: float = 3.0, base_demand: float = 1.0,
                    jitter: float = 0.0, seed: Optional[int] = None) -> ExogenousTrace:
    """Synthetic trace with constant recorded baseline demand."""
    return ExogenousTrace(synthetic_generation(horizon, peak, jitter, seed),
                          np.full(horizon, float(base_demand)))


def calibrate_fleet(baseline_demand: Union[float, Sequence[float]], baseline_price: float,
                    elasticity: float, headroom: float = 2.0,
                    shares: Optional[Sequence[float]] = None,
                    horizon: Optional[int] = None) -> DeviceFleet:
    """Quadratic utilities matching a linear demand curve at a baseline point.

    At baseline price ``p0`` and demand ``d0`` with price elasticity ``eps``
    the slope is ``beta = -p0 / (eps d0)`` and ``alpha = p0 + beta d0``, so
    that ``U'(d0) = p0``. Baseline demand is split across devices by
    ``shares`` (one device by default); each device may consume up to
    ``headroom * d0``.
    """
    d0 = np.asarray(baseline_demand, dtype=float)
    if d0.ndim == 0:
        if horizon is None:
            raise ValueError("horizon is required with a scalar baseline demand")
        d0 = np.full(horizon, float(d0))
    if d0.ndim != 1 or d0.size == 0:
        raise ValueError("baseline demand must be a non-empty sequence")
    if np.any(d0 <= 0):
        raise ValueError("baseline demand must be positive")
    if not elasticity < 0:
        raise ValueError("elasticity must be negative")
    if not baseline_price > 0:
        raise ValueError("baseline price must be positive")
    if headroom < 1:
        raise ValueError("headroom must be at least 1")
    w = np.ones(1) if shares is None else np.asarray(shares, dtype=float)
    if w.ndim != 1 or np.any(w <= 0):
        raise ValueError("shares must be positive")
    w = w / w.sum()
    dk = d0[:, None] * w[None, :]
    beta = -baseline_price / (elasticity * dk)
    if np.any(beta < BETA_MIN):
        raise ValueError(f"calibrated beta below {BETA_MIN}; elasticity too large in magnitude")
    alpha = baseline_price + beta * dk
    return DeviceFleet(alpha, beta, headroom * dk)
