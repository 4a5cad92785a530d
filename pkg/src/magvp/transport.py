"""Exact optimal transport between weighted point clouds.

Ground cost in phase space is |x - y|^p + |v - w|^p.  Equal-size clouds with
equal weights are solved as an assignment problem; everything else by the
network simplex on the complete bipartite graph.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .core import PhaseEnsemble

DEFAULT_CAP = 4_000_000
MASS_TOL = 1e-10
NETWORK_SIMPLEX_ITERS = 100_000_000


class TransportError(ValueError):
    pass


@dataclass
class CouplingPlan:
    """Sparse coupling: pi[k] >= 0 between rows[k] of the first and cols[k] of the second cloud."""

    rows: np.ndarray
    cols: np.ndarray
    mass: np.ndarray

    def marginal_error(self, w1: np.ndarray, w2: np.ndarray) -> float:
        m1 = np.bincount(self.rows, weights=self.mass, minlength=len(w1))
        m2 = np.bincount(self.cols, weights=self.mass, minlength=len(w2))
        return float(max(np.abs(m1 - w1).max(), np.abs(m2 - w2).max()))

    @classmethod
    def identity(cls, weights: np.ndarray) -> "CouplingPlan":
        idx = np.arange(len(weights))
        return cls(idx, idx, np.asarray(weights, dtype=float).copy())


@dataclass
class TransportResult:
    W: float
    Wpp: float
    plan: CouplingPlan
    method: str


def cost_matrix(z1: tuple, z2: tuple, p: float) -> np.ndarray:
    """sum over blocks of |block_1 - block_2|^p; each z is a tuple of (N, k) arrays."""
    C = np.zeros((len(z1[0]), len(z2[0])))
    for a, b in zip(z1, z2):
        C += cdist(a, b) ** p
    return C


def _network_simplex():
    # POT probes every array backend on import; only numpy is needed here
    for name in ("PYTORCH", "JAX", "TENSORFLOW", "CUPY"):
        os.environ.setdefault(f"POT_BACKEND_DISABLE_{name}", "1")
    import ot

    return ot.emd


def _solve(C: np.ndarray, w1: np.ndarray, w2: np.ndarray) -> tuple[CouplingPlan, str]:
    n1, n2 = C.shape
    if n1 == n2 and np.all(w1 == w1[0]) and np.all(w2 == w1[0]):
        r, c = linear_sum_assignment(C)
        return CouplingPlan(r, c, w1[r].copy()), "assignment"
    w2 = w2 * (w1.sum() / w2.sum())
    G, log = _network_simplex()(w1, w2, C, numItermax=NETWORK_SIMPLEX_ITERS, log=True)
    if log["result_code"] != 1:
        raise TransportError(f"transport solver failed: {log['warning']}")
    rows, cols = np.nonzero(G > 0)
    return CouplingPlan(rows, cols, G[rows, cols]), "network-simplex"


def _plan_cost(C: np.ndarray, plan: CouplingPlan) -> float:
    return math.fsum(C[plan.rows, plan.cols] * plan.mass)


def transport(z1: tuple, w1: np.ndarray, z2: tuple, w2: np.ndarray, p: float, cap: int = DEFAULT_CAP) -> TransportResult:
    if p < 1:
        raise TransportError("p must be >= 1")
    w1 = np.asarray(w1, dtype=float)
    w2 = np.asarray(w2, dtype=float)
    if abs(w1.sum() - w2.sum()) > MASS_TOL * max(1.0, w1.sum()):
        raise TransportError(f"mass mismatch: {w1.sum()!r} vs {w2.sum()!r}")
    if len(w1) * len(w2) > cap:
        raise TransportError(f"problem size {len(w1)}x{len(w2)} exceeds the cap of {cap}")
    # solve in a canonical orientation so that swapping the arguments is bitwise symmetric
    key1 = b"".join(np.ascontiguousarray(a, dtype=float).tobytes() for a in z1) + w1.tobytes()
    key2 = b"".join(np.ascontiguousarray(a, dtype=float).tobytes() for a in z2) + w2.tobytes()
    if key2 < key1:
        res = transport(z2, w2, z1, w1, p, cap)
        plan = CouplingPlan(res.plan.cols, res.plan.rows, res.plan.mass)
        return TransportResult(res.W, res.Wpp, plan, res.method)
    C = cost_matrix(z1, z2, p)
    plan, method = _solve(C, w1, w2)
    wpp = max(_plan_cost(C, plan), 0.0)
    return TransportResult(wpp ** (1 / p), wpp, plan, method)


def wasserstein_p(e1: PhaseEnsemble, e2: PhaseEnsemble, p: float = 2.0, cap: int = DEFAULT_CAP) -> TransportResult:
    """Exact W_p between two marker ensembles in phase space."""
    return transport((e1.positions, e1.velocities), e1.weights, (e2.positions, e2.velocities), e2.weights, p, cap)


def aggregate_positions(ens: PhaseEnsemble) -> tuple[np.ndarray, np.ndarray]:
    """Spatial marginal: distinct positions with summed weights."""
    pts, inv = np.unique(ens.positions, axis=0, return_inverse=True)
    return pts, np.bincount(inv.ravel(), weights=ens.weights, minlength=len(pts))


def wasserstein_p_positions(e1: PhaseEnsemble, e2: PhaseEnsemble, p: float = 2.0, cap: int = DEFAULT_CAP) -> TransportResult:
    """Exact W_p between the spatial densities of two ensembles."""
    x1, w1 = aggregate_positions(e1)
    x2, w2 = aggregate_positions(e2)
    return transport((x1,), w1, (x2,), w2, p, cap)
