"""Optimal split of a net quantity between the battery and flexible devices.

For each step the helper value is

    h(v) = max  sum_k U_k(d_k) + salvage * e
           s.t. sum_k d_k + e = v,  d_min <= d <= d_max,  -e_dis <= e <= e_chg

It is solved by water-filling on the common marginal value ``lam``: each
device sits at ``clip((alpha - lam) / beta, d_min, d_max)`` and the battery
is a flat segment at ``lam == salvage`` spanning its full power range. The
inverse map ``lam -> v`` is piecewise linear with at most ``2K + 2``
breakpoints, which are sorted once per step at construction.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .model import BatterySpec, DeviceFleet

__all__ = ["MarginalSegment", "AllocationResult", "HelperFunction"]

_TOL = 1e-9

IndexLike = Union[int, np.ndarray]


@dataclass(frozen=True)
class MarginalSegment:
    source: str
    price_high: float
    price_low: float
    width: float


@dataclass(frozen=True)
class AllocationResult:
    battery: float
    demand: np.ndarray
    value: float
    marginal: float


class HelperFunction:
    """Per-step helper value, its derivative and inverse derivative.

    Methods accept a scalar step index or an integer array of steps; ``v`` and
    ``price`` broadcast against it.
    """

    def __init__(self, fleet: DeviceFleet, spec: BatterySpec, salvage: float):
        self.fleet = fleet
        self.spec = spec
        self.salvage = float(salvage)
        alpha, beta = fleet.alpha, fleet.beta
        d_lo, d_hi = fleet.d_min, fleet.d_max
        T = fleet.horizon
        gam = np.full((T, 2), self.salvage)
        lam = np.concatenate([alpha - beta * d_lo, alpha - beta * d_hi, gam], axis=1)
        lam = -np.sort(-lam, axis=1)
        dev = np.clip((alpha[:, None, :] - lam[:, :, None]) / beta[:, None, :],
                      d_lo[:, None, :], d_hi[:, None, :]).sum(axis=2)
        at_gamma = lam == self.salvage
        first = at_gamma & ~np.concatenate([np.zeros((T, 1), bool), at_gamma[:, :-1]], axis=1)
        batt = np.where(lam > self.salvage, -spec.discharge_limit, spec.charge_limit)
        batt = np.where(first, -spec.discharge_limit, batt)
        knots = dev + batt
        # guard against rounding in the device sums
        knots = np.maximum.accumulate(knots, axis=1)
        self.v_min = d_lo.sum(axis=1) - spec.discharge_limit
        self.v_max = d_hi.sum(axis=1) + spec.charge_limit
        knots[:, 0] = self.v_min
        knots[:, -1] = self.v_max
        self._knot_v = knots
        self._knot_lam = lam

    @property
    def horizon(self) -> int:
        return self.fleet.horizon

    def _domain(self, v, t) -> tuple[np.ndarray, np.ndarray]:
        t = np.asarray(t)
        v = np.asarray(v, dtype=float)
        v, t = np.broadcast_arrays(v, t)
        lo, hi = self.v_min[t], self.v_max[t]
        if np.any(v < lo - _TOL) or np.any(v > hi + _TOL):
            raise ValueError("net quantity outside the helper domain")
        return np.clip(v, lo, hi), t

    def h_prime(self, v, t: IndexLike):
        """Marginal value at ``v``; left limit at kinks."""
        v, t = self._domain(v, t)
        kv = self._knot_v[t]
        kl = self._knot_lam[t]
        M = kv.shape[-1]
        idx = np.minimum(np.sum(kv < v[..., None], axis=-1), M - 1)
        hi_v = np.take_along_axis(kv, idx[..., None], -1)[..., 0]
        hi_l = np.take_along_axis(kl, idx[..., None], -1)[..., 0]
        prev = np.maximum(idx - 1, 0)
        lo_v = np.take_along_axis(kv, prev[..., None], -1)[..., 0]
        lo_l = np.take_along_axis(kl, prev[..., None], -1)[..., 0]
        width = hi_v - lo_v
        exact = (hi_v <= v) | (width <= 0)
        frac = np.where(exact, 0.0, (v - lo_v) / np.where(width > 0, width, 1.0))
        out = np.where(exact, hi_l, lo_l + frac * (hi_l - lo_l))
        return out if out.ndim else float(out)

    def h_prime_inv(self, price, t: IndexLike):
        """Largest ``v`` with ``h'(v) >= price``, clipped to the domain."""
        t = np.asarray(t)
        price = np.asarray(price, dtype=float)
        price, t = np.broadcast_arrays(price, t)
        f = self.fleet
        dev = np.clip((f.alpha[t] - price[..., None]) / f.beta[t], f.d_min[t], f.d_max[t])
        batt = np.where(price <= self.salvage, self.spec.charge_limit, -self.spec.discharge_limit)
        out = dev.sum(axis=-1) + batt
        return out if out.ndim else float(out)

    def split_many(self, v, t: IndexLike) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized optimal split; returns ``(battery, demand)``."""
        v, t = self._domain(v, t)
        lam = np.asarray(self.h_prime(v, t))
        f = self.fleet
        d = np.clip((f.alpha[t] - lam[..., None]) / f.beta[t], f.d_min[t], f.d_max[t])
        e = np.clip(v - d.sum(axis=-1), -self.spec.discharge_limit, self.spec.charge_limit)
        return e, d

    def h_value(self, v, t: IndexLike):
        e, d = self.split_many(v, t)
        t = np.broadcast_to(np.asarray(t), np.shape(e))
        f = self.fleet
        util = np.sum(f.alpha[t] * d - 0.5 * f.beta[t] * d * d, axis=-1)
        out = util + self.salvage * e
        return out if np.ndim(out) else float(out)

    def split_allocation(self, v: float, t: int) -> AllocationResult:
        e, d = self.split_many(v, t)
        return AllocationResult(float(e), np.asarray(d), float(self.h_value(v, t)),
                                float(self.h_prime(v, t)))

    def segments(self, t: int) -> list[MarginalSegment]:
        """Marginal-value segments at step ``t`` (devices then battery)."""
        f = self.fleet
        segs = []
        for k in range(f.n_devices):
            top = f.alpha[t, k] - f.beta[t, k] * f.d_min[t, k]
            bottom = f.alpha[t, k] - f.beta[t, k] * f.d_max[t, k]
            segs.append(MarginalSegment(f"device{k}", float(top), float(bottom),
                                        float(f.d_max[t, k] - f.d_min[t, k])))
        width = self.spec.charge_limit + self.spec.discharge_limit
        segs.append(MarginalSegment("battery", self.salvage, self.salvage, width))
        return segs
