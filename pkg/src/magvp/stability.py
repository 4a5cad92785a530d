"""Twin-run stability: the kinetic Wasserstein functional D_p and its envelope.

Two ensembles share weights and marker indexing.  The initial coupling is the
identity pairing when the perturbation is a marker-wise map; the pairing is
then carried along both flows, so no transport problem is solved for t > 0.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .core import PhaseEnsemble
from .diagnostics import cic_deposit, deposit_density, grid_for, lp_norm_density, moment_v
from .dynamics import NumericalError, electric_field, field_from_sources, step_boris, step_schedule
from .fields import MagneticFieldSpec, lipschitz_estimate, sup_estimate
from .inequalities import EnvelopeReport
from .kernels import KernelSpec
from .transport import DEFAULT_CAP, CouplingPlan, TransportError, wasserstein_p, wasserstein_p_positions

INV_E = math.exp(-1.0)
TRACE_SCHEMA = "magvp.stability/1"

ANCHORS = {
    "stability": "kinetic Wasserstein stability estimate",
    "nowork": "no-work identity",
    "loglip": "log-Lipschitz estimate of the force field",
    "lp-field": "L^p estimate on the difference of force fields",
    "dp-control": "D_p controls the p-Wasserstein distance",
}


class StabilityError(ValueError):
    pass


# --- D_p ----------------------------------------------------------------------


@dataclass
class DpResult:
    D: float
    lam: float
    status: str  # ok | degenerate | regime-exit
    residual: float
    x_part: float  # sum pi |dX|^p
    v_part: float  # sum pi |dV|^p


def _pair_parts(plan: CouplingPlan, dX: np.ndarray, dV: np.ndarray, p: float) -> tuple[float, float]:
    nx = np.sqrt(np.sum(dX * dX, axis=1)) ** p
    nv = np.sqrt(np.sum(dV * dV, axis=1)) ** p
    return math.fsum(plan.mass * nx), math.fsum(plan.mass * nv)


def solve_Dp(plan: CouplingPlan, dX: np.ndarray, dV: np.ndarray, p: float = 2.0) -> DpResult:
    """Unique D in (0, 1/e] with D = sum pi [ (-log D)^{p/2} |dX|^p + |dV|^p ].

    dX, dV are the paired displacements, one row per entry of ``plan``.
    """
    a, b = _pair_parts(plan, dX, dV, p)
    return solve_Dp_parts(a, b, p)


def solve_Dp_parts(a: float, b: float, p: float = 2.0) -> DpResult:
    if a == 0 and b == 0:
        return DpResult(0.0, math.nan, "degenerate", 0.0, a, b)
    if a + b > INV_E:
        return DpResult(math.nan, math.nan, "regime-exit", math.nan, a, b)
    if a == 0:
        D = b
    else:
        # D - g(D) is increasing in D, so u = log D has a single root
        phi = lambda u: math.exp(u) - a * (-u) ** (p / 2) - b  # noqa: E731
        # smallest positive double: every root with a > 0 lies above it
        lo = math.log(math.ulp(0.0))
        if phi(lo) >= 0:
            D = max(b, math.ulp(0.0))
        else:
            u = brentq(phi, lo, -1.0, xtol=1e-300, rtol=1e-15, maxiter=500)
            D = max(math.exp(u), b)  # the fixed point is never below the velocity part
    g = a * (-math.log(D)) ** (p / 2) + b
    return DpResult(D, abs(math.log(D)) ** (p / 2), "ok", abs(D - g), a, b)


# --- twin runs ----------------------------------------------------------------


@dataclass(frozen=True)
class Perturbation:
    dv: tuple = ()
    dx: tuple = ()
    mapping: Callable | None = None  # (positions, velocities) -> (positions, velocities)

    @staticmethod
    def _vec(val, dim: int) -> np.ndarray:
        arr = np.atleast_1d(np.asarray(val, dtype=float))
        if arr.size == 0:
            return np.zeros(dim)
        if arr.size == 1:
            out = np.zeros(dim)
            out[0] = arr[0]
            return out
        if arr.size != dim:
            raise StabilityError(f"shift needs 1 or {dim} components")
        return arr

    def apply(self, ens: PhaseEnsemble) -> PhaseEnsemble:
        out = ens.copy()
        out.positions = ens.positions + self._vec(self.dx, ens.dim)
        out.velocities = ens.velocities + self._vec(self.dv, ens.dim)
        if self.mapping is not None:
            out.positions, out.velocities = self.mapping(out.positions, out.velocities)
        return out

    def is_zero(self, dim: int) -> bool:
        return self.mapping is None and not np.any(self._vec(self.dx, dim)) and not np.any(self._vec(self.dv, dim))


@dataclass
class StabilityTrace:
    p: float
    times: list = field(default_factory=list)
    D: list = field(default_factory=list)
    lam: list = field(default_factory=list)
    Wpp: list = field(default_factory=list)
    Wpp_exact: list = field(default_factory=list)
    transported_cost: list = field(default_factory=list)
    rho1_inf: list = field(default_factory=list)
    rho2_inf: list = field(default_factory=list)
    A_tilde: list = field(default_factory=list)
    A: list = field(default_factory=list)
    regime: list = field(default_factory=list)
    status: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    work1: np.ndarray | None = None
    work2: np.ndarray | None = None

    COLUMNS = ("time", "D_p", "lambda", "W_pp", "W_pp_exact", "transported_cost", "rho1_inf", "rho2_inf", "A_tilde", "A", "regime")

    def rows(self):
        for k in range(len(self.times)):
            yield [
                self.times[k],
                self.D[k],
                self.lam[k],
                self.Wpp[k],
                int(self.Wpp_exact[k]),
                self.transported_cost[k],
                self.rho1_inf[k],
                self.rho2_inf[k],
                self.A_tilde[k],
                self.A[k],
                int(self.regime[k]),
            ]

    def to_csv(self, path: str | Path, config_hash: str = "") -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# {TRACE_SCHEMA} config_hash={config_hash} p={self.p!r}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.COLUMNS)
            for row in self.rows():
                w.writerow([repr(float(x)) if isinstance(x, float) else x for x in row])

    def wpp_below_dp(self, rtol: float = 1e-12) -> bool:
        """W_p^p <= D_p at every frame with a regime solution."""
        for w, d, s in zip(self.Wpp, self.D, self.status):
            if s == "ok" and w > d * (1 + rtol):
                return False
            if s == "degenerate" and w > 0:
                return False
        return True


def _upper_cumulative(t: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Cumulative integral using the larger endpoint on each interval."""
    if len(t) < 2:
        return np.zeros(len(t))
    return np.concatenate([[0.0], np.cumsum(np.maximum(y[1:], y[:-1]) * np.diff(t))])


def a_tilde(rho1_inf: float, rho2_inf: float, p: float) -> float:
    pp = math.inf if p == 1 else p / (p - 1)
    return max(1.0, rho2_inf + rho1_inf ** (1 / p) * max(rho1_inf, rho2_inf) ** (0.0 if math.isinf(pp) else 1 / pp))


def twin_run(
    ens: PhaseEnsemble,
    spec: KernelSpec,
    bfield: MagneticFieldSpec,
    dt: float,
    T: float,
    perturbation: Perturbation,
    p: float = 2.0,
    output_every: int = 1,
    h: float | None = None,
    ot_cap: int = DEFAULT_CAP,
    parallel: bool = False,
) -> tuple[StabilityTrace, CouplingPlan]:
    """Evolve an ensemble and its perturbed twin in lockstep, recording D_p and W_p^p."""
    e1 = ens
    e2 = perturbation.apply(ens)
    plan = CouplingPlan.identity(ens.weights)
    trace = StabilityTrace(p)
    if perturbation.is_zero(ens.dim):
        trace.notes.append("degenerate perturbation: D_p = 0 and log D_p is undefined; lambda skipped")
    h = h if h is not None else 2.0 * ens.mean_spacing()
    trace.work1 = np.zeros(ens.n_markers)
    trace.work2 = np.zeros(ens.n_markers)

    def record(a: PhaseEnsemble, b: PhaseEnsemble):
        for e in (a, b):
            if not (np.all(np.isfinite(e.positions)) and np.all(np.isfinite(e.velocities))):
                raise NumericalError(len(trace.times), e.time)
        dX = b.positions - a.positions
        dV = b.velocities - a.velocities
        res = solve_Dp(plan, dX, dV, p)
        if not trace.times and res.status == "regime-exit":
            raise StabilityError("initial perturbation too large: D_p(0) exceeds 1/e")
        cost = res.x_part + res.v_part
        try:
            ot = wasserstein_p(a, b, p, ot_cap)
            wpp, exact = min(ot.Wpp, cost), True
        except TransportError:
            wpp, exact = cost, False
        r1 = lp_norm_density(deposit_density(a, h), math.inf)
        r2 = lp_norm_density(deposit_density(b, h), math.inf)
        trace.times.append(float(a.time))
        trace.D.append(res.D)
        trace.lam.append(res.lam)
        trace.Wpp.append(wpp)
        trace.Wpp_exact.append(exact)
        trace.transported_cost.append(cost)
        trace.rho1_inf.append(r1)
        trace.rho2_inf.append(r2)
        trace.A_tilde.append(a_tilde(r1, r2, p))
        trace.regime.append(res.status == "ok" and res.D <= INV_E)
        trace.status.append(res.status)

    record(e1, e2)
    steps = step_schedule(dt, T)
    for k, step in enumerate(steps, start=1):
        E1 = electric_field(e1, spec, parallel)
        E2 = electric_field(e2, spec, parallel)
        trace.work1 += step * np.sqrt(np.sum(E1 * E1, axis=1))
        trace.work2 += step * np.sqrt(np.sum(E2 * E2, axis=1))
        t_next = k * dt if k < len(steps) else T
        e1 = step_boris(e1, spec, bfield, step, parallel, E=E1)
        e2 = step_boris(e2, spec, bfield, step, parallel, E=E2)
        e1.time = e2.time = t_next
        if k % output_every == 0 or k == len(steps):
            record(e1, e2)
    t = np.asarray(trace.times)
    At = np.asarray(trace.A_tilde)
    trace.A = list(At + _upper_cumulative(t, At))
    return trace, plan


# --- envelope -----------------------------------------------------------------


def envelope_log_start(W0: float, p: float) -> float:
    """sqrt|log(W0 |log W0|^{p/2})|."""
    return math.sqrt(abs(math.log(W0 * abs(math.log(W0)) ** (p / 2))))


def envelope_rhs(W0: float, p: float, C: float, intA: np.ndarray) -> np.ndarray:
    base = envelope_log_start(W0, p) - C * np.asarray(intA, dtype=float)
    return np.exp(-(base**2))


def admissible_window(W0: float, p: float, C: float, times: np.ndarray, A: np.ndarray) -> float:
    """Largest t with sqrt|log(W0|log W0|^{p/2})| - C int_0^t A >= 1 (linear in between frames)."""
    L0 = envelope_log_start(W0, p)
    times = np.asarray(times, dtype=float)
    intA = _upper_cumulative(times, np.asarray(A, dtype=float))
    g = L0 - C * intA - 1.0
    if g[0] < 0:
        return math.nan
    bad = np.nonzero(g < 0)[0]
    if len(bad) == 0:
        return float(times[-1])
    j = bad[0]
    t0, t1, g0, g1 = times[j - 1], times[j], g[j - 1], g[j]
    return float(t0 + (t1 - t0) * g0 / (g0 - g1))


@dataclass
class StabilityConstants:
    """Assembly C_{p,B} = (p/2)(1 + C_p + C~_{p,B}) from measured sub-constants."""

    p: float
    C_loglip: float
    C_HW: float
    C0: float
    grad_B: float
    sup_B: float

    @property
    def C_p(self) -> float:
        return self.C_loglip + self.C_HW

    @property
    def C_bar_p(self) -> float:
        return self.p * (2 + math.log(self.p / 2))

    @property
    def C_B1(self) -> float:
        return math.exp(-1) * max(self.grad_B, 2 * self.sup_B)

    @property
    def C_B2(self) -> float:
        return 2 * self.C_loglip * self.grad_B

    @property
    def C_tilde_pB(self) -> float:
        return self.C_bar_p * self.C0 * self.C_B1 + self.C_B2

    @property
    def C_pB(self) -> float:
        return self.p / 2 * (1 + self.C_p + self.C_tilde_pB)

    def as_dict(self) -> dict:
        keys = ("p", "C_loglip", "C_HW", "C0", "grad_B", "sup_B", "C_p", "C_bar_p", "C_B1", "C_B2", "C_tilde_pB", "C_pB")
        return {k: getattr(self, k) for k in keys}


def growth_constant_C0(ens: PhaseEnsemble, r_max: int = 40) -> float:
    """sup_r M_r^{1/r} / r over r = 1..r_max (moments normalised by the mass)."""
    m = ens.mass
    return max((moment_v(ens, r) / m) ** (1 / r) / r for r in range(1, r_max + 1))


def _envelope_pass(W0, p, C, t, intA, wpp) -> tuple[bool, np.ndarray, np.ndarray]:
    L0 = envelope_log_start(W0, p)
    window = L0 - C * intA >= 1.0
    rhs = envelope_rhs(W0, p, C, intA)
    ok = bool(np.all(wpp[window] <= rhs[window]))
    return ok, window, rhs


def fit_constant(W0: float, p: float, t: np.ndarray, intA: np.ndarray, wpp: np.ndarray, rtol: float = 1e-10) -> float:
    """Smallest C_{p,B} for which the envelope holds on its admissible window (bisection)."""
    if _envelope_pass(W0, p, 0.0, t, intA, wpp)[0]:
        return 0.0
    hi = 1.0
    while not _envelope_pass(W0, p, hi, t, intA, wpp)[0]:
        hi *= 2.0
        if hi > 1e12:
            raise StabilityError("no finite constant makes the envelope hold")
    lo = 0.0
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if _envelope_pass(W0, p, mid, t, intA, wpp)[0]:
            hi = mid
        else:
            lo = mid
    return hi


def stability_envelope(
    trace: StabilityTrace, mode: str = "fitted", constants: StabilityConstants | None = None, C: float | None = None
) -> EnvelopeReport:
    """Compare measured W_p^p(t) with exp{-(sqrt|log(W0|log W0|^{p/2})| - C int_0^t A)^2}."""
    p = trace.p
    t = np.asarray(trace.times)
    wpp = np.asarray(trace.Wpp)
    A = np.asarray(trace.A)
    W0 = float(wpp[0])
    params: dict = {"mode": mode, "p": p, "W0": W0}
    if constants is not None:
        params["constants"] = constants.as_dict()
    if not W0 > 0:
        return EnvelopeReport("stability", ANCHORS["stability"], status="no-claim", params=params, notes=["degenerate perturbation: W_p^p(0) = 0"])
    if W0 * abs(math.log(W0)) ** (p / 2) >= INV_E or envelope_log_start(W0, p) < 1.0:
        return EnvelopeReport("stability", ANCHORS["stability"], status="no-claim", params=params, notes=["regime condition fails at t = 0: no claim"])
    intA = _upper_cumulative(t, A)
    if mode == "fitted":
        C = fit_constant(W0, p, t, intA, wpp)
        notes = ["fitted-constant mode: C_{p,B} is the smallest value making the envelope hold (artifact convention)"]
    elif mode == "paper":
        if C is None:
            if constants is None:
                raise StabilityError("paper mode needs assembled constants")
            C = constants.C_pB
        notes = ["paper-form mode: C_{p,B} = (p/2)(1 + C_p + C~_{p,B}) assembled from measured sub-constants"]
    else:
        raise StabilityError(f"unknown envelope mode {mode!r}")
    ok, window, rhs = _envelope_pass(W0, p, C, t, intA, wpp)
    L0 = envelope_log_start(W0, p)
    params.update(
        C_pB=C,
        L0=L0,
        window_length=admissible_window(W0, p, C, t, A) if C > 0 else float(t[-1]),
        # budget of int_0^t A before the regime condition fails; not capped by the run horizon
        window_intA=(L0 - 1.0) / C if C > 0 else math.inf,
        regime_condition=[f"{L0!r} - {C!r} * {x!r} >= 1: {bool(w)}" for x, w in zip(intA, window)],
    )
    return EnvelopeReport(
        "stability",
        ANCHORS["stability"],
        list(t[window]),
        list(wpp[window]),
        list(rhs[window]),
        slack=0.0,
        abs_tol=0.0,
        params=params,
        notes=notes,
    )


def dp_control_report(trace: StabilityTrace) -> EnvelopeReport:
    """W_p^p(t) <= D_p(t) at every frame in the regime."""
    idx = [k for k, s in enumerate(trace.status) if s == "ok"]
    return EnvelopeReport(
        "dp-control",
        ANCHORS["dp-control"],
        [trace.times[k] for k in idx],
        [trace.Wpp[k] for k in idx],
        [trace.D[k] for k in idx],
        slack=1e-12,
        abs_tol=0.0,
    )


# --- field checks ---------------------------------------------------------------


def check_nowork(initial: PhaseEnsemble, final: PhaseEnsemble, work: np.ndarray, n_steps: int, dt: float = 0.0, C: float = 0.0) -> EnvelopeReport:
    """|V_i(T)| - |V_i(0)| <= sum_steps dt |E(X_i)| + tol for every marker; reports the worst one.

    The kick-rotate-kick step satisfies the discrete inequality exactly, so tol
    only absorbs rounding plus an optional C dt^2 T term.
    """
    v0 = np.sqrt(np.sum(initial.velocities**2, axis=1))
    v1 = np.sqrt(np.sum(final.velocities**2, axis=1))
    lhs = v1 - v0
    T = final.time - initial.time
    tol = 4 * np.finfo(float).eps * max(n_steps, 1) * (1.0 + np.maximum(v0, v1)) + C * dt * dt * T
    rhs = work + tol
    worst = int(np.argmax(lhs - rhs))
    return EnvelopeReport(
        "nowork",
        ANCHORS["nowork"],
        [final.time],
        [float(lhs[worst])],
        [float(rhs[worst])],
        slack=0.0,
        abs_tol=0.0,
        params={"worst_marker": worst, "n_markers": len(lhs), "max_violation": float(np.max(lhs - rhs))},
    )


def loglip_ratios(
    ens: PhaseEnsemble,
    spec: KernelSpec,
    grid_h: float,
    separations: np.ndarray,
    n_points: int = 32,
    seed: int = 0,
) -> tuple[np.ndarray, float]:
    """sup over random base points of |E(x)-E(y)| / ((1+||rho||_inf) s log(4 sqrt3 / s)) per separation s."""
    rng = np.random.default_rng(seed)
    rho_inf = lp_norm_density(deposit_density(ens, grid_h), math.inf)
    lo, hi = ens.positions.min(axis=0), ens.positions.max(axis=0)
    base = lo + (hi - lo) * rng.random((n_points, ens.dim))
    u = rng.normal(size=(n_points, ens.dim))
    u /= np.linalg.norm(u, axis=1)[:, None]
    Ex = field_from_sources(spec, ens.positions, ens.weights, base)
    out = []
    for s in separations:
        Ey = field_from_sources(spec, ens.positions, ens.weights, base + s * u)
        diff = np.linalg.norm(Ex - Ey, axis=1)
        out.append(float(np.max(diff)) / ((1 + rho_inf) * s * math.log(4 * math.sqrt(3) / s)))
    return np.asarray(out), rho_inf


def check_loglip_field(
    ens: PhaseEnsemble,
    spec: KernelSpec,
    grid_h: float,
    separations: np.ndarray | None = None,
    n_points: int = 32,
    seed: int = 0,
    growth: float = 2.0,
) -> EnvelopeReport:
    """Ratios must be finite and must not grow as the separation shrinks.

    Pass: the sup over the smallest third of separations is at most ``growth``
    times the sup over the largest third.
    """
    sep = np.logspace(-6, -1, 11) if separations is None else np.sort(np.asarray(separations, dtype=float))
    if np.any(sep >= INV_E):
        raise StabilityError("separations must stay below 1/e")
    ratios, rho_inf = loglip_ratios(ens, spec, grid_h, sep, n_points, seed)
    third = max(1, len(sep) // 3)
    small, large = float(ratios[:third].max()), float(ratios[-third:].max())
    finite = bool(np.all(np.isfinite(ratios)))
    return EnvelopeReport(
        "loglip",
        ANCHORS["loglip"],
        [ens.time],
        [small],
        [growth * large if large > 0 else 0.0],
        slack=0.0,
        abs_tol=1e-300,
        status="pass" if finite else "fail",
        params={"separations": list(sep), "ratios": list(ratios), "sup_ratio": float(ratios.max()), "rho_inf": rho_inf},
    )


def lp_field_ratio(e1: PhaseEnsemble, e2: PhaseEnsemble, spec: KernelSpec, grid_h: float, p: float = 2.0) -> dict:
    """||E1 - E2||_p / (max ||rho_i||_inf^{1/p'} W_p(rho1, rho2)) with fields of the deposited densities."""
    if not 1 < p < math.inf:
        raise StabilityError("L^p field estimate is supported for 1 < p < inf only")
    origin, shape = grid_for(np.vstack([e1.positions, e2.positions]), grid_h)
    g1 = cic_deposit(e1.positions, e1.weights, grid_h, origin, shape)
    g2 = cic_deposit(e2.positions, e2.weights, grid_h, origin, shape)
    centres = g1.centers()
    m1 = g1.values.ravel() * g1.cell_volume
    m2 = g2.values.ravel() * g2.cell_volume
    # the two fields share sources and targets; only the cell masses differ
    E = field_from_sources(spec, centres, m1 - m2, centres)
    lhs = float(g1.cell_volume * np.sum(np.sum(E * E, axis=1) ** (p / 2))) ** (1 / p)
    rho_inf = max(float(g1.values.max()), float(g2.values.max()))
    W = wasserstein_p_positions(e1, e2, p).W
    pp = p / (p - 1)
    denom = rho_inf ** (1 / pp) * W
    return {"lhs": lhs, "rho_inf": rho_inf, "W_p": W, "ratio": lhs / denom if denom > 0 else math.nan}


def check_lp_field_difference(
    ens: PhaseEnsemble,
    spec: KernelSpec,
    grid_h: float,
    deltas=(1e-2, 5e-3, 2.5e-3),
    p: float = 2.0,
    direction=None,
    spread: float = 2.0,
) -> EnvelopeReport:
    """Empirical C_HW over a spatial-shift sweep; pass if the ratios stay within ``spread`` of each other."""
    d = np.zeros(ens.dim)
    d[0] = 1.0
    if direction is not None:
        d = np.asarray(direction, dtype=float)
        d /= np.linalg.norm(d)
    rows = []
    for delta in deltas:
        e2 = Perturbation(dx=tuple(delta * d)).apply(ens)
        rows.append(lp_field_ratio(ens, e2, spec, grid_h, p))
    ratios = np.array([r["ratio"] for r in rows])
    finite = bool(np.all(np.isfinite(ratios)) and np.all(ratios > 0))
    return EnvelopeReport(
        "lp-field",
        ANCHORS["lp-field"],
        list(deltas),
        [float(ratios.max())] if finite else [],
        [spread * float(ratios.min())] if finite else [],
        slack=0.0,
        abs_tol=0.0,
        status="pass" if finite else "fail",
        params={"p": p, "ratios": list(ratios), "C_HW_estimate": float(np.nanmax(ratios)), "sweep": rows},
    )


def field_constants(bfield: MagneticFieldSpec, t_grid: np.ndarray, samples: np.ndarray) -> tuple[float, float]:
    """(||grad B||_inf, ||B||_inf) sampled on a time grid and point cloud."""
    return lipschitz_estimate(bfield, t_grid, samples), sup_estimate(bfield, t_grid, samples)
