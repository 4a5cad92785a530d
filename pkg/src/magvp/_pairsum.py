"""Direct-summation field kernels.

Each target accumulates its sources in index order, so the result does not
depend on how targets are distributed over threads.
"""

import math
import os

import numba
import numpy as np

_TWO_PI = 2.0 * math.pi
_FOUR_PI = 4.0 * math.pi


def configure_threads() -> int:
    n = os.environ.get("MAGVP_NUM_THREADS")
    if n:
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
    return numba.get_num_threads()


def _pair_field(targets, sources, weights, orient, kappa, delta2, three_d):
    nt = targets.shape[0]
    ns = sources.shape[0]
    out = np.zeros((nt, targets.shape[1]))
    for i in numba.prange(nt):
        a0 = 0.0
        a1 = 0.0
        a2 = 0.0
        t0 = targets[i, 0]
        t1 = targets[i, 1]
        t2 = targets[i, 2] if three_d else 0.0
        for j in range(ns):
            d0 = t0 - sources[j, 0]
            d1 = t1 - sources[j, 1]
            d2 = t2 - sources[j, 2] if three_d else 0.0
            r2 = d0 * d0 + d1 * d1 + d2 * d2 + delta2
            if r2 == 0.0:
                continue  # coincident unsoftened pair: self-skip
            if three_d:
                rd = math.sqrt(r2)
                s = weights[j] * math.exp(-kappa * rd) * (1.0 + kappa * rd) / (_FOUR_PI * r2 * rd)
            else:
                s = weights[j] / (_TWO_PI * r2)
            a0 += s * d0
            a1 += s * d1
            a2 += s * d2
        out[i, 0] = orient * a0
        out[i, 1] = orient * a1
        if three_d:
            out[i, 2] = orient * a2
    return out


_serial = numba.njit(cache=True)(_pair_field)
_parallel = numba.njit(cache=True, parallel=True)(_pair_field)


def pair_field(targets, sources, weights, orient, kappa, delta2, parallel=False):
    """Sum_j weights_j * orient * s(|t - x_j|) (t - x_j) at every target."""
    targets = np.ascontiguousarray(targets, dtype=np.float64)
    sources = np.ascontiguousarray(sources, dtype=np.float64)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    fn = _parallel if parallel else _serial
    return fn(targets, sources, weights, float(orient), float(kappa), float(delta2), targets.shape[1] == 3)
