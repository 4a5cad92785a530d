"""Drivers shared by the command line and the test-suite: build, run, verify."""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np

from .config import RunConfig
from .core import PhaseEnsemble, init_from_grid, sup_norm_f
from .diagnostics import moment_v, moment_x
from .dynamics import RunResult, simulate
from .fields import validate_hypothesis_B
from .inequalities import (
    ANCHORS,
    CheckError,
    EnvelopeReport,
    check_kinetic_interpolation,
    check_moment_ode,
    check_triangle_bound,
    check_weak_young,
    envelope_2d,
    envelope_3d_high_order,
    envelope_3d_short,
    envelope_eulerian,
    t_star,
    validate_smallness,
)
from .stability import check_nowork

CHECKS = {
    2: ("interpolation", "interpolation-lr", "weak-young", "moment-ode", "envelope-2d", "triangle", "nowork"),
    3: (
        "interpolation",
        "interpolation-lr",
        "weak-young",
        "moment-ode",
        "envelope-3d-short",
        "eulerian",
        "smallness",
        "high-order",
        "hypothesis-b",
        "triangle",
        "nowork",
    ),
}
ALL_CHECKS = tuple(dict.fromkeys(CHECKS[2] + CHECKS[3]))
INTERP_PAIRS = ((1, 0), (2, 0), (2, 1), (3, 2))
# (p, q, r) with 1 + 1/p = 1/q + 1/r and q the critical weak exponent
WEAK_YOUNG = {2: (6.0, 2.0, 1.5), 3: (2.0, 1.5, 1.2)}
HIGH_ORDER_N = 5


class DimensionError(ValueError):
    pass


def build_ensemble(cfg: RunConfig) -> PhaseEnsemble:
    return init_from_grid(cfg.initial, cfg.dim, cfg.nx, cfg.nv, cfg.weight_floor)


def run_config(
    cfg: RunConfig, keep_snapshots: bool = False, horizon: float | None = None, orders: tuple | None = None, on_frame=None
) -> RunResult:
    ens = build_ensemble(cfg)
    return simulate(
        ens,
        cfg.kernel,
        cfg.field,
        cfg.dt,
        cfg.T if horizon is None else horizon,
        output_every=cfg.output_every,
        orders=orders or cfg.orders,
        lp_orders=cfg.lp_orders,
        h=cfg.h,
        keep_snapshots=keep_snapshots,
        parallel=cfg.parallel,
        on_frame=on_frame,
    )


def resolve_checks(dim: int, requested) -> tuple:
    if not requested or requested == ["all"] or requested == "all":
        return CHECKS[dim]
    unknown = [c for c in requested if c not in ALL_CHECKS]
    if unknown:
        raise CheckError(f"unknown check(s): {', '.join(unknown)}")
    bad = [c for c in requested if c not in CHECKS[dim]]
    if bad:
        raise DimensionError(f"check(s) {', '.join(bad)} not valid for a {dim}D run")
    return tuple(requested)


def short_time(ens: PhaseEnsemble) -> float:
    return t_star(sup_norm_f(ens), moment_v(ens, 3), moment_v(ens, 4))


def required_orders(cfg: RunConfig, checks) -> tuple:
    need = set(cfg.orders)
    if "envelope-2d" in checks:
        need |= {1, 2, 3}
    if {"envelope-3d-short", "eulerian"} & set(checks):
        need |= {3, 4}
    return tuple(sorted(need))


def verification_horizon(cfg: RunConfig, checks) -> float:
    """Horizon long enough for the 3D checks that reference T_*."""
    T = cfg.T
    if cfg.dim == 3 and {"envelope-3d-short", "eulerian"} & set(checks):
        ts = short_time(build_ensemble(cfg))
        T = max(T, 5 * ts if "eulerian" in checks else ts)
    return T


def _merge(reports: list[EnvelopeReport], check: str, params: dict) -> EnvelopeReport:
    times, lhs, rhs, notes = [], [], [], []
    status = "pass"
    for r in reports:
        if r.status == "no-claim":
            notes += r.notes
            continue
        times += r.times
        lhs += r.lhs
        rhs += r.rhs
    if not lhs:
        status = "no-claim"
    p = dict(params)
    p["per_snapshot"] = [r.params for r in reports]
    return EnvelopeReport(check, ANCHORS[check], times, lhs, rhs, reports[0].slack, status=status, params=p, notes=sorted(set(notes)))


def _snapshot_sample(snapshots: list) -> list:
    if len(snapshots) <= 3:
        return list(snapshots)
    return [snapshots[0], snapshots[len(snapshots) // 2], snapshots[-1]]


def _field_decay(cfg: RunConfig, ens: PhaseEnsemble) -> tuple[float | None, EnvelopeReport]:
    """(B0 to use, hypothesis-b report); B0 is None when the hypothesis fails."""
    f = cfg.field
    lo, hi = ens.positions.min(axis=0), ens.positions.max(axis=0)
    R = max(float(np.abs(np.concatenate([lo, hi])).max()), 2 * f.radius)
    axis = np.linspace(-R, R, 21)
    grid = np.stack(np.meshgrid(*[axis] * cfg.dim, indexing="ij"), axis=-1).reshape(-1, cfg.dim)
    samples = np.vstack([grid, ens.positions])
    t_grid = np.geomspace(1e-2, 1e2, 41)
    hb = validate_hypothesis_B(f, t_grid, samples)
    worst = np.maximum(hb.sup_B, hb.sup_b)
    rep = EnvelopeReport(
        "hypothesis-b",
        ANCHORS["hypothesis-b"],
        list(t_grid),
        list(worst),
        list(hb.bound),
        slack=1e-12,
        abs_tol=0.0,
        params={"family": f.family, "B0": f.B0, "a": f.a, "worst_margin": hb.worst_margin},
        notes=list(hb.warnings) + ["field families other than zero are constructions of this package, not taken from the analysis"],
        informational=True,
    )
    if not hb.passed:
        return None, rep
    return (0.0 if f.is_zero else f.B0), rep


def verify_run(cfg: RunConfig, result: RunResult, checks, slack: float | None = None) -> list[EnvelopeReport]:
    slack = cfg.verify["slack"] if slack is None else slack
    ens0 = result.initial
    F, m = sup_norm_f(ens0), ens0.mass
    snaps = result.snapshots
    h = result.series.h
    out = []
    b0_cache = {}

    def field_b0():
        if "v" not in b0_cache:
            b0_cache["v"] = _field_decay(cfg, ens0)
        return b0_cache["v"]

    for name in checks:
        try:
            out.append(_one_check(name, cfg, result, snaps, F, m, h, slack, field_b0))
        except CheckError as exc:
            out.append(EnvelopeReport(name, ANCHORS.get(name, name), status="fail", notes=[f"error: {exc}"]))
    return out


def _one_check(name, cfg, result, snaps, F, m, h, slack, field_b0) -> EnvelopeReport:
    spec = cfg.kernel
    series = result.series
    d = cfg.dim
    if name in ("interpolation", "interpolation-lr"):
        sample = _snapshot_sample(snaps)
        if not sample:
            raise CheckError("interpolation checks need ensemble snapshots")
        reps = []
        rs = (math.inf,) if name == "interpolation" else (2.0, 4.0)
        for n, k in INTERP_PAIRS:
            for r in rs:
                for s in sample:
                    reps.append(check_kinetic_interpolation(s, h, n, k, r, slack))
        return _merge(reps, name, {"pairs": INTERP_PAIRS, "r": rs, "h": h})
    if name == "weak-young":
        p, q, r = WEAK_YOUNG[d]
        reps = [check_weak_young(s, spec, h, p, q, r, 0.0) for s in _snapshot_sample(snaps)]
        return _merge(reps, name, {"p": p, "q": q, "r": r})
    if name == "moment-ode":
        reps = [check_moment_ode(series, snaps, n, spec, h, slack) for n in (1, 2, 3)]
        return _merge(reps, name, {"orders": (1, 2, 3)})
    if name == "envelope-2d":
        parts = [envelope_2d(series, n, F, m, spec) for n in (1, 2, 3)]
        return EnvelopeReport(name, ANCHORS[name], params={"F": F, "m": m}, parts=parts)
    if name == "envelope-3d-short":
        M3, M4 = series.M[3][0], series.M[4][0]
        return envelope_3d_short(series, M3, M4, t_star(F, M3, M4))
    if name in ("eulerian", "smallness"):
        B0, hb = field_b0()
        if B0 is None:
            return EnvelopeReport(name, ANCHORS[name], status="not-applicable", notes=["field does not satisfy the decay hypothesis"])
        if spec.screening <= 0:
            return EnvelopeReport(name, ANCHORS[name], status="not-applicable", notes=["the Eulerian bound needs a screened kernel (kappa > 0)"])
        a = cfg.field.a
        if not a > 1:
            return EnvelopeReport(name, ANCHORS[name], status="not-applicable", notes=["decay exponent a must exceed 1"])
        ens0 = result.initial
        M3, M4 = moment_v(ens0, 3), moment_v(ens0, 4)
        if name == "smallness":
            rep = validate_smallness(F, m, M3, M4, moment_x(ens0, 4), B0, spec, a=a)
            rep.informational = True
            return rep
        return envelope_eulerian(series, t_star(F, M3, M4), F, m, B0, spec, a=a, slack=slack)
    if name == "high-order":
        if len(snaps) < 2:
            raise CheckError("missing lower-order series: need snapshots")
        return envelope_3d_high_order(snaps, HIGH_ORDER_N, spec, slack)
    if name == "hypothesis-b":
        return field_b0()[1]
    if name == "triangle":
        return check_triangle_bound(series)
    if name == "nowork":
        return check_nowork(result.initial, result.final, result.work, result.n_steps, result.dt)
    raise CheckError(f"unknown check {name!r}")


def counts(reports: list[EnvelopeReport]) -> dict:
    out = {"pass": 0, "fail": 0, "no-claim": 0, "not-applicable": 0}
    for r in reports:
        key = r.status if not (r.informational and r.status == "fail") else "no-claim"
        out[key] = out.get(key, 0) + 1
    return out


def any_failed(reports: list[EnvelopeReport]) -> bool:
    return any(r.status == "fail" and not r.informational for r in reports)


def with_horizon(cfg: RunConfig, T: float) -> RunConfig:
    return replace(cfg, T=T)
