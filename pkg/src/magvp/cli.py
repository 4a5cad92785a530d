"""Command line front end: run, twin, verify, constants.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
import warnings
from pathlib import Path

from . import __version__
from ._pairsum import configure_threads
from .config import ConfigError, RunConfig, load
from .core import EnsembleError, save_ensemble, sup_norm_f
from .diagnostics import DensityError, DiagnosticsSeries
from .dynamics import NumericalError
from .fields import FieldError
from .inequalities import ANCHORS, CheckError, EnvelopeReport, check_triangle_bound, envelope_2d, envelope_3d_short, exponents, t_star
from .kernels import KernelError, KernelSpec, strong_norm_gradK, weak_norm_gradK
from .report import text_lines, write_json, write_text
from .stability import Perturbation, StabilityError, dp_control_report, stability_envelope, twin_run
from .suite import (
    CHECKS,
    DimensionError,
    any_failed,
    counts,
    required_orders,
    resolve_checks,
    run_config,
    verification_horizon,
    verify_run,
)
from .transport import TransportError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_VERIFY = 0, 2, 3, 4
CONFIG_ERRORS = (ConfigError, EnsembleError, FieldError, KernelError, DimensionError, DensityError, TransportError)


def _outdir(path: str | None, cfg_path: str) -> Path:
    out = Path(path) if path else Path(cfg_path).with_suffix("").parent / (Path(cfg_path).stem + "_out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def kernel_constants(spec: KernelSpec, a: float | None = None) -> dict:
    base = KernelSpec(spec.dim, spec.sign, spec.kappa, 0.0, spec.coupling)
    q = 2.0 if spec.dim == 2 else 1.5
    out = {"weak_norm_q": q, "weak_norm": weak_norm_gradK(base, q)}
    if spec.dim == 3 and spec.screening > 0 and a is not None and a > 1:
        c = 3.0 / (1.0 + a)
        out.update(strong_norm_c=c, strong_norm=strong_norm_gradK(base, c))
    return out


def _manifest(cfg: RunConfig, files: list[Path], timing: dict, extra: dict | None = None) -> dict:
    orders = [n for n in cfg.orders if isinstance(n, int) and n >= 1]
    return {
        "config_hash": cfg.hash,
        "version": __version__,
        "config": cfg.raw,
        "kernel_constants": kernel_constants(cfg.kernel, cfg.field.a),
        "exponents": {str(n): dict(exponents(n, cfg.dim).as_rows()) for n in orders},
        "timing": timing,
        "files": [f.name for f in files],
        **(extra or {}),
    }


def _write_manifest(out: Path, cfg: RunConfig, files: list[Path], timing: dict, extra: dict | None = None) -> Path:
    path = out / "manifest.json"
    with open(path, "w") as fh:
        json.dump(_manifest(cfg, files, timing, extra), fh, indent=2, default=str)
        fh.write("\n")
    return path


def cmd_run(args) -> int:
    cfg = load(args.config)
    out = _outdir(args.out, args.config)
    t0 = time.perf_counter()
    result = run_config(cfg)
    elapsed = time.perf_counter() - t0
    files = [out / "series.csv"]
    result.series.to_csv(files[0], cfg.hash)
    if args.snapshots:
        files.append(out / "final.ens")
        save_ensemble(files[-1], result.final, cfg.hash)
    _write_manifest(
        out, cfg, files, {"simulate_seconds": elapsed, "n_steps": result.n_steps, "threads": configure_threads()}, {"f_sup": sup_norm_f(result.initial)}
    )
    print(f"wrote {len(result.series)} frames to {files[0]}")
    return EXIT_OK


def _verify_series(args) -> tuple[list[EnvelopeReport], str]:
    """Checks that need only a stored series plus its manifest."""
    series, chash = DiagnosticsSeries.from_csv(args.source)
    manifest_path = Path(args.source).parent / "manifest.json"
    if not manifest_path.exists():
        raise ConfigError(f"{manifest_path} not found: a series needs the manifest of its run")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    from .config import build

    cfg = build(manifest["config"])
    requested = args.checks.split(",") if args.checks else ["envelope-2d"] if cfg.dim == 2 else ["envelope-3d-short"]
    checks = resolve_checks(cfg.dim, requested)
    F = manifest.get("f_sup")
    reports = []
    for name in checks:
        if name == "envelope-2d" and F is not None:
            parts = [envelope_2d(series, n, F, series.mass[0], cfg.kernel) for n in (1, 2, 3) if n in series.M]
            reports.append(EnvelopeReport(name, ANCHORS[name], parts=parts))
        elif name == "envelope-3d-short" and F is not None:
            M3, M4 = series.M[3][0], series.M[4][0]
            reports.append(envelope_3d_short(series, M3, M4, t_star(F, M3, M4)))
        elif name == "triangle":
            reports.append(check_triangle_bound(series))
        else:
            raise CheckError(f"check {name!r} needs the run configuration, not a stored series")
    return reports, chash


def cmd_verify(args) -> int:
    src = Path(args.source)
    if src.suffix == ".csv":
        reports, chash = _verify_series(args)
        out = Path(args.out) if args.out else src.parent
        out.mkdir(parents=True, exist_ok=True)
    else:
        cfg = load(args.source)
        checks = resolve_checks(cfg.dim, args.checks.split(",") if args.checks else None)
        out = _outdir(args.out, args.source)
        T = verification_horizon(cfg, checks)
        t0 = time.perf_counter()
        result = run_config(cfg, keep_snapshots=True, horizon=T, orders=required_orders(cfg, checks))
        sim = time.perf_counter() - t0
        reports = verify_run(cfg, result, checks, args.slack)
        chash = cfg.hash
        files = [out / "series.csv", out / "report.json", out / "report.txt"]
        result.series.to_csv(files[0], chash)
        meta = {"horizon": T, "configured_T": cfg.T, "checks": list(checks)}
        if T > cfg.T:
            meta["note"] = "horizon extended to cover the short-time scale T_* of the 3D checks"
        if not args.no_figures:
            from .plotting import plot_reports, plot_series

            files += [out / "series.png", out / "checks.png"]
            plot_series(result.series, files[-2], chash)
            plot_reports(reports, files[-1], chash)
        _write_manifest(
            out, cfg, files, {"simulate_seconds": sim, "n_steps": result.n_steps, "threads": configure_threads()}, {"f_sup": sup_norm_f(result.initial), **meta}
        )
    write_json(out / "report.json", reports, chash)
    write_text(out / "report.txt", reports, chash)
    for line in text_lines(reports):
        print(line)
    c = counts(reports)
    print(f"{c['pass']} passed, {c['fail']} failed, {c['no-claim']} without claim, {c['not-applicable']} not applicable")
    return EXIT_VERIFY if any_failed(reports) else EXIT_OK


def cmd_twin(args) -> int:
    cfg = load(args.config)
    out = _outdir(args.out, args.config)
    dv = args.dv if args.dv is not None else cfg.twin["dv"]
    dx = args.dx if args.dx is not None else cfg.twin["dx"]
    p = args.p if args.p is not None else cfg.twin["p"]
    pert = Perturbation(dv=tuple(_vec(dv)), dx=tuple(_vec(dx)))
    from .suite import build_ensemble

    ens = build_ensemble(cfg)
    if pert.is_zero(cfg.dim):
        print("notice: degenerate perturbation (dv = dx = 0); D_p vanishes and lambda is undefined")
    t0 = time.perf_counter()
    trace, _ = twin_run(ens, cfg.kernel, cfg.field, cfg.dt, cfg.T, pert, p, cfg.output_every, cfg.h, cfg.twin["ot_cap"], cfg.parallel)
    sim = time.perf_counter() - t0
    reports = [dp_control_report(trace)]
    modes = ("fitted", "paper") if args.mode == "both" else (args.mode,)
    for mode in modes:
        if mode == "paper":
            reports.append(_paper_envelope(cfg, ens, trace))
        else:
            reports.append(stability_envelope(trace, "fitted"))
    files = [out / "trace.csv", out / "stability.json", out / "stability.txt"]
    trace.to_csv(files[0], cfg.hash)
    write_json(files[1], reports, cfg.hash, {"p": p, "dv": dv, "dx": dx, "notes": trace.notes})
    write_text(files[2], reports, cfg.hash)
    if not args.no_figures:
        from .plotting import plot_trace

        files.append(out / "trace.png")
        plot_trace(trace, reports[1] if len(reports) > 1 else None, files[-1], cfg.hash)
    _write_manifest(out, cfg, files, {"simulate_seconds": sim, "threads": configure_threads()})
    for line in text_lines(reports):
        print(line)
    for note in trace.notes:
        print(f"note: {note}")
    return EXIT_VERIFY if any_failed(reports) else EXIT_OK


def _paper_envelope(cfg: RunConfig, ens, trace) -> EnvelopeReport:
    import numpy as np

    from .stability import StabilityConstants, check_loglip_field, check_lp_field_difference, field_constants, growth_constant_C0

    h = cfg.h or 2.0 * ens.mean_spacing()
    loglip = check_loglip_field(ens, cfg.kernel, h)
    lpf = check_lp_field_difference(ens, cfg.kernel, h, p=trace.p)
    gB, sB = field_constants(cfg.field, np.linspace(0, max(cfg.T, cfg.dt), 11), ens.positions)
    consts = StabilityConstants(trace.p, loglip.params["sup_ratio"], lpf.params["C_HW_estimate"], growth_constant_C0(ens), gB, sB)
    return stability_envelope(trace, "paper", consts)


def _vec(val):
    if isinstance(val, (list, tuple)):
        return [float(x) for x in val]
    return [float(val)]


def _parse_vec(text: str):
    parts = [float(x) for x in text.split(",")]
    return parts if len(parts) > 1 else parts[0]


_ROW_ANCHORS = {
    "p_n": "interpolation",
    "theta_n": "interpolation",
    "p_{n,n-1}": "interpolation",
    "theta_{n,n-1}": "interpolation",
    "alpha_n": "moment-ode",
    "alpha'_n": "moment-ode",
    "beta_n": "moment-ode",
    "beta'_n": "moment-ode",
    "b": "weak-young",
    "epsilon_n": "envelope-3d-short",
    "Theta_n": "envelope-3d-short",
    "Theta_{0,n}": "envelope-3d-short",
    "C_n/||gradK||": "envelope-2d",
    "k_high": "high-order",
}


def cmd_constants(args) -> int:
    if args.dim == 2 and args.kappa:
        print("warning: screening kappa applies to the 3D kernel only; ignored in 2D", file=sys.stderr)
    rows = []
    for n in range(args.n_min, args.n_max + 1):
        for name, value in exponents(n, args.dim).as_rows():
            if value != "":
                rows.append((n, name, value, ANCHORS[_ROW_ANCHORS[name]]))
    spec = KernelSpec(args.dim, args.sign, args.kappa, 0.0, 1.0)
    for name, value in kernel_constants(spec, args.a).items():
        rows.append(("", name, repr(value), ANCHORS["weak-young"] if name.startswith("weak") else ANCHORS["eulerian"]))
    if args.format == "csv":
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(("n", "name", "value", "anchor"))
        w.writerows(rows)
    else:
        for n, name, value, anchor in rows:
            print(f"{('n=' + str(n)) if n != '' else '':6s} {name:16s} {value:24s} [{anchor}]")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="magvp", description="Magnetized Vlasov-Poisson particle simulator and inequality checks.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one simulation and write the diagnostics series")
    run.add_argument("config")
    run.add_argument("--out", help="output directory (default: <config>_out next to the config)")
    run.add_argument("--snapshots", action="store_true", help="also write the final ensemble")
    run.set_defaults(func=cmd_run)

    ver = sub.add_parser("verify", help="run the inequality checks on a config or a stored series")
    ver.add_argument("source", help="config JSON, or a series.csv written by 'run'")
    ver.add_argument("--checks", help="comma-separated subset of: " + ", ".join(CHECKS[3] + ("envelope-2d",)))
    ver.add_argument("--slack", type=float, default=None)
    ver.add_argument("--out")
    ver.add_argument("--no-figures", action="store_true")
    ver.set_defaults(func=cmd_verify)

    twin = sub.add_parser("twin", help="run a perturbed twin and check the stability estimate")
    twin.add_argument("config")
    twin.add_argument("--dv", type=_parse_vec, default=None, help="velocity shift (scalar along the first axis, or comma list)")
    twin.add_argument("--dx", type=_parse_vec, default=None, help="position shift")
    twin.add_argument("--p", type=float, default=None)
    twin.add_argument("--mode", choices=("fitted", "paper", "both"), default="fitted")
    twin.add_argument("--out")
    twin.add_argument("--no-figures", action="store_true")
    twin.set_defaults(func=cmd_twin)

    con = sub.add_parser("constants", help="print exponent tables and kernel norms")
    con.add_argument("--dim", type=int, choices=(2, 3), required=True)
    con.add_argument("--n-min", type=int, default=1)
    con.add_argument("--n-max", type=int, default=4)
    con.add_argument("--kappa", type=float, default=0.0)
    con.add_argument("--sign", type=int, choices=(1, -1), default=1)
    con.add_argument("--a", type=float, default=1.05, help="field decay exponent for the strong kernel norm")
    con.add_argument("--format", choices=("text", "csv"), default="text")
    con.set_defaults(func=cmd_constants)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    configure_threads()
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args)
    except CONFIG_ERRORS + (CheckError, StabilityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
