"""The fourteen acceptance criteria, one test each, at their stated tolerances."""

import math
import subprocess
import sys
import time
from fractions import Fraction as Fr

import numpy as np
from scipy.special import lambertw

from magvp.config import load
from magvp.core import InitialData, init_from_grid, sup_norm_f
from magvp.diagnostics import default_h
from magvp.dynamics import simulate
from magvp.fields import MagneticFieldSpec
from magvp.inequalities import (
    check_kinetic_interpolation,
    envelope_2d,
    exponents,
    phi_2d,
)
from magvp.kernels import KernelSpec
from magvp.stability import (
    Perturbation,
    check_loglip_field,
    check_lp_field_difference,
    solve_Dp_parts,
    stability_envelope,
    twin_run,
)
from magvp.suite import INTERP_PAIRS, build_ensemble, run_config, verification_horizon, verify_run
from magvp.transport import wasserstein_p

from .conftest import CONFIGS, record
from .test_transport import _cloud, brute_force


def test_criterion_01_exponents_exact():
    t0 = time.perf_counter()
    e3, e4, e1 = exponents(3, 3), exponents(4, 3), exponents(1, 2)
    got = [
        (e3.epsilon, Fr(1)),
        (e4.epsilon, Fr(1, 3)),
        (e3.Theta, Fr(4, 3)),
        (e4.Theta, Fr(1)),
        (e4.Theta0, Fr(1, 3)),
        (e1.alpha, Fr(3, 2)),
        (e1.beta, Fr(6, 5)),
        (e1.theta_n, Fr(1, 3)),
        (e1.b, Fr(2)),
        (e3.b, Fr(3, 2)),
    ]
    primes = [(exponents(n, 2).alpha_prime, Fr(n + 2)) for n in range(1, 9)]
    primes += [(exponents(n, 3).alpha_prime, Fr(n + 3)) for n in range(1, 9)]
    exact = all(type(a) is Fr and a == b for a, b in got + primes)
    elapsed = time.perf_counter() - t0
    ok = exact and elapsed < 1.0
    record(1, ok, f"{len(got) + len(primes)} exponent values exact as Fractions in {elapsed:.3f} s")
    assert ok


def test_criterion_02_free_streaming_invariance():
    t0 = time.perf_counter()
    ens = init_from_grid(InitialData(), 3, 2, 5)
    assert ens.n_markers == 1000
    r = simulate(ens, KernelSpec(3, 1, coupling=0.0), MagneticFieldSpec("zero", dim=3), 1e-2, 1.0, output_every=10, orders=(2, 4))
    L_dev = max(float(np.max(np.abs(r.series.array("L", n) / r.series.L[n][0] - 1))) for n in (2, 4))
    M_exact = all(len(set(r.series.M[n])) == 1 for n in (2, 4))
    elapsed = time.perf_counter() - t0
    ok = L_dev <= 1e-10 and M_exact and elapsed < 60
    record(2, ok, f"N=1000, max rel drift of L_2, L_4 = {L_dev:.2e}; M_n bitwise constant: {M_exact}; {elapsed:.1f} s")
    assert ok


def _speed_drift(field):
    ens = init_from_grid(InitialData(), field.dim, 3, 4)
    v0 = np.linalg.norm(ens.velocities, axis=1)
    worst = [0.0]

    def watch(_k, e):
        worst[0] = max(worst[0], float(np.max(np.abs(np.linalg.norm(e.velocities, axis=1) / v0 - 1))))

    r = simulate(ens, KernelSpec(field.dim, 1, coupling=0.0), field, 1e-2, 10.0, output_every=1, orders=(2,), on_frame=watch)
    assert r.n_steps == 1000
    return worst[0]


def test_criterion_03_discrete_no_work():
    t0 = time.perf_counter()
    fields = {
        "uniform-2d": MagneticFieldSpec("uniform", dim=2, amplitude=3.0),
        "bump-2d": MagneticFieldSpec("decaying-bump", dim=2, B0=5.0, a=1.05, radius=2.0),
        "uniform-3d": MagneticFieldSpec("uniform", dim=3, amplitude=3.0, direction=(1.0, 2.0, 2.0)),
        "bump-3d": MagneticFieldSpec("decaying-bump", dim=3, B0=5.0, a=1.05, radius=2.0),
    }
    drift = {k: _speed_drift(f) for k, f in fields.items()}
    elapsed = time.perf_counter() - t0
    ok = max(drift.values()) <= 1e-13 and elapsed < 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in drift.items())
    record(3, ok, f"max rel |V_i| drift over 1000 steps: {detail}")
    assert ok


def test_criterion_04_magnetic_invisibility():
    worst = 0.0
    for dim, field in (
        (2, MagneticFieldSpec("uniform", dim=2, amplitude=4.0)),
        (2, MagneticFieldSpec("custom-analytic", dim=2, expression="sin(x0) * cos(3 * t) + x1")),
        (3, MagneticFieldSpec("decaying-bump", dim=3, B0=2.0, a=1.2, radius=1.5, direction=(0.0, 1.0, 1.0))),
    ):
        ens = init_from_grid(InitialData(), dim, 3, 4)
        r = simulate(ens, KernelSpec(dim, 1, coupling=0.0), field, 0.05, 2.0, output_every=1, orders=(1, 2, 3, 4))
        t = r.series.array("times")
        for n in (1, 2, 3, 4):
            M = r.series.array("M", n)
            worst = max(worst, float(np.max(np.abs(np.diff(M) / np.diff(t)))) / M[0])
    ok = worst <= 1e-12
    record(4, ok, f"coupling 0 with nonzero B: max |dM_n/dt| / M_n(0) = {worst:.2e}")
    assert ok


def test_criterion_05_interpolation_suite(reference_run):
    run3 = simulate(init_from_grid(InitialData(), 3, 5, 5), KernelSpec(3, 1), MagneticFieldSpec("zero", dim=3), 0.1, 0.2, keep_snapshots=True, orders=(1, 2, 3))
    results = []
    for label, run in (("2D", reference_run), ("3D", run3)):
        snaps = run.snapshots
        sample = [snaps[0], snaps[len(snaps) // 2], snaps[-1]]
        h = run.series.h
        for n, k in INTERP_PAIRS:
            for r in (math.inf, 2.0, 4.0):
                for s in sample:
                    results.append((label, n, k, r, check_kinetic_interpolation(s, h, n, k, r, slack=0.10)))
    claims = [x for x in results if x[4].status != "no-claim"]
    failed = [x for x in claims if x[4].status != "pass"]
    worst = min(x[4].worst_relative_margin for x in claims)
    ok = not failed and len(claims) == len(results)
    record(5, ok, f"{len(claims)} snapshot checks (pairs {INTERP_PAIRS}, r in inf/2/4, d=2,3), worst margin {worst:.3f}, failures {len(failed)}")
    assert ok


def test_criterion_06_moment_ode(reference_cfg, reference_run):
    # 8^4 lattice nodes; the weight floor drops a few tail markers
    assert reference_cfg.nx**2 * reference_cfg.nv**2 == 4096 and reference_cfg.T == 1.0
    rep = verify_run(reference_cfg, reference_run, ["moment-ode"], slack=0.10)[0]
    ok = rep.status == "pass"
    record(6, ok, f"moment ODE n=1,2,3 on {reference_run.initial.n_markers} markers, T=1: {rep.status}, {len(rep.lhs)} interior frames, worst margin {rep.worst_relative_margin:.3f}")
    assert ok


def test_criterion_07_envelope_2d(reference_cfg, reference_run):
    ens0 = reference_run.initial
    F, m = sup_norm_f(ens0), ens0.mass
    series = reference_run.series
    reps = [envelope_2d(series, n, F, m, reference_cfg.kernel) for n in (1, 2, 3)]
    M1_0 = series.M[1][0]
    expected = M1_0 * math.exp(1.5**1.5 * (1 / (2 * math.sqrt(math.pi))) * F ** (2 / 3) * m**0.5)
    got = float(phi_2d(1, np.array([1.0]), {1: M1_0}, F, m, reps[0].params["weak_norm"])[0])
    formula = math.isclose(got, expected, rel_tol=1e-12)
    ok = formula and all(r.status == "pass" for r in reps)
    margins = ", ".join(f"n={n} {r.worst_relative_margin:.3f}" for n, r in zip((1, 2, 3), reps))
    record(7, ok, f"Phi_1(1) = {got:.6g} matches closed form: {formula}; envelopes {margins}")
    assert ok


def _small_3d():
    cfg = load(CONFIGS / "small_3d.json")
    checks = ("envelope-3d-short", "eulerian", "smallness")
    T = verification_horizon(cfg, checks)
    run = run_config(cfg, horizon=T, orders=(1, 2, 3, 4))
    return cfg, T, {r.check: r for r in verify_run(cfg, run, checks)}


_SMALL_3D = {}


def small_3d():
    if not _SMALL_3D:
        _SMALL_3D["v"] = _small_3d()
    return _SMALL_3D["v"]


def test_criterion_08_short_time_3d():
    cfg, T, reps = small_3d()
    rep = reps["envelope-3d-short"]
    ok = rep.status == "pass"
    parts = ", ".join(f"{p.check} {p.status}" for p in rep.parts if not p.informational)
    record(8, ok, f"small 3D run to {T:.3g} (>= T_*): {parts}")
    assert ok


def test_criterion_09_eulerian_envelope():
    cfg, T, reps = small_3d()
    small, rep = reps["smallness"], reps["eulerian"]
    feasible = small.status == "pass"
    ok = feasible and rep.status == "pass" and rep.slack == 0.10
    record(9, ok, f"smallness {small.status}; Eulerian lower bound on [T_*, 5T_*] {rep.status}, worst margin {rep.worst_relative_margin:.3f}")
    assert ok


def test_criterion_10_ot_brute_force():
    agree = 0
    total = 0
    for p in (1, 2):
        rng = np.random.default_rng(100 + p)
        for _ in range(100):
            n = int(rng.integers(1, 7))
            e1 = _cloud(rng.normal(size=(n, 2)), rng.normal(size=(n, 2)))
            e2 = _cloud(rng.normal(size=(n, 2)), rng.normal(size=(n, 2)))
            best, perm = brute_force(e1, e2, p)
            res = wasserstein_p(e1, e2, p)
            order = np.argsort(res.plan.rows)
            total += 1
            agree += tuple(res.plan.cols[order]) == perm and math.isclose(res.Wpp, best, rel_tol=1e-14)
    ok = agree == total
    record(10, ok, f"{agree}/{total} random clouds (N <= 6, p in 1,2) match enumeration: same pairing, cost to 1e-14")
    assert ok


def test_criterion_11_dp_fixed_point():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(2000):
        p = float(rng.choice([1.0, 1.5, 2.0, 3.0]))
        a, b = 10.0 ** rng.uniform(-12, -1.5, size=2)
        res = solve_Dp_parts(a, b, p)
        worst = max(worst, res.residual / res.D)
    # dX == 0: D equals the velocity part; dV == 0 with p = 2: D = -a log D, so D = a W(1/a)
    dv_only = all(solve_Dp_parts(0.0, b).D == b for b in (1e-8, 1e-4, 0.3))
    dx_only = all(math.isclose(solve_Dp_parts(a, 0.0).D, a * float(lambertw(1 / a).real), rel_tol=1e-12) for a in (1e-9, 1e-5, 1e-2))
    cfg = load(CONFIGS / "twin_2d.json")
    ens = build_ensemble(cfg)
    traces = [
        twin_run(ens, cfg.kernel, cfg.field, cfg.dt, 2.0, pert, output_every=4)[0]
        for pert in (Perturbation(dv=(1e-3,)), Perturbation(dx=(2e-3,)), Perturbation(dv=(1e-4, 3e-4), dx=(5e-4,)))
    ]
    below = all(tr.wpp_below_dp() for tr in traces)
    ok = worst <= 1e-10 and dv_only and dx_only and below
    record(11, ok, f"max rel residual {worst:.1e}; closed forms dX=0 {dv_only}, dV=0 {dx_only}; W_p^p <= D_p on {len(traces)} twin runs: {below}")
    assert ok


def test_criterion_12_stability_envelope():
    cfg = load(CONFIGS / "twin_2d.json")
    ens = build_ensemble(cfg)
    out = {}
    for dv in (1e-3, 1e-4):
        trace, _ = twin_run(ens, cfg.kernel, cfg.field, cfg.dt, cfg.T, Perturbation(dv=(dv,)), p=2.0, output_every=cfg.output_every)
        out[dv] = stability_envelope(trace, "fitted")
    passed = all(r.status == "pass" for r in out.values())
    wl = {dv: r.params["window_length"] for dv, r in out.items()}
    wa = {dv: r.params["window_intA"] for dv, r in out.items()}
    monotone = wl[1e-4] >= wl[1e-3] and wa[1e-4] >= wa[1e-3]
    ok = passed and monotone
    record(
        12,
        ok,
        f"envelope holds: {passed}; window length {wl[1e-3]:.3g} -> {wl[1e-4]:.3g}, int A budget {wa[1e-3]:.4g} -> {wa[1e-4]:.4g}",
    )
    assert ok


def test_criterion_13_field_regularity():
    ens = init_from_grid(InitialData(), 2, 6, 4)
    spec = KernelSpec(2, 1)
    h = default_h(ens)
    lip = check_loglip_field(ens, spec, h, np.logspace(-6, -1, 11))
    lp = check_lp_field_difference(ens, spec, h / 2)
    ratios = lp.params["ratios"]
    ok = lip.status == "pass" and lp.status == "pass"
    record(
        13,
        ok,
        f"log-Lipschitz sup ratio {lip.params['sup_ratio']:.3g} ({lip.status}); L^p field ratios {min(ratios):.3g}..{max(ratios):.3g} ({lp.status})",
    )
    assert ok


def test_criterion_14_determinism(tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        cmd = [sys.executable, "-m", "magvp", "run", str(CONFIGS / "reference_2d.json"), "--out", str(out)]
        subprocess.run(cmd, check=True, capture_output=True)
        outs.append(out)
    names = sorted(p.name for p in outs[0].glob("*.csv"))
    same = bool(names) and all((outs[0] / n).read_bytes() == (outs[1] / n).read_bytes() for n in names)
    record(14, same, f"two CLI runs of the reference config: {len(names)} CSV file(s) bit-identical: {same}")
    assert same
