"""Independent brute-force oracles used by the tests."""
import itertools

import numpy as np


def brute_h(alpha, beta, d_min, d_max, charge, discharge, salvage, v, levels=61, rounds=4):
    """Grid maximization of ``sum U_k(d_k) + salvage * e`` with ``sum d + e = v``.

    The grid over device consumption is refined around the incumbent
    ``rounds`` times. Returns ``(value, d)``; ``value`` is ``-inf`` when no
    grid point is feasible.
    """
    alpha, beta = np.asarray(alpha, float), np.asarray(beta, float)
    lo, hi = np.asarray(d_min, float).copy(), np.asarray(d_max, float).copy()
    K = len(alpha)
    best, arg = -np.inf, None
    if K == 0:
        if -discharge - 1e-12 <= v <= charge + 1e-12:
            return salvage * v, np.zeros(0)
        return -np.inf, np.zeros(0)
    for _ in range(rounds):
        axes = [np.linspace(a, b, levels) for a, b in zip(lo, hi)]
        D = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, K)
        e = v - D.sum(axis=1)
        ok = (e >= -discharge - 1e-12) & (e <= charge + 1e-12)
        val = (D * alpha - 0.5 * beta * D * D).sum(axis=1) + salvage * e
        val = np.where(ok, val, -np.inf)
        i = int(np.argmax(val))
        if val[i] > best:
            best, arg = float(val[i]), D[i].copy()
        if arg is None:
            return -np.inf, None
        width = (hi - lo) / (levels - 1)
        lo = np.maximum(np.asarray(d_min, float), arg - 2 * width)
        hi = np.minimum(np.asarray(d_max, float), arg + 2 * width)
    return best, arg


def stage_objective(h, buy, sell, g, v):
    z = v - g
    return h - (buy * np.maximum(z, 0.0) - sell * np.maximum(-z, 0.0))


def enumerate_policies(values, horizon):
    return itertools.product(values, repeat=horizon)
