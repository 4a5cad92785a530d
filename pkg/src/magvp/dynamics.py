"""Characteristic integration: direct-summation forces and the Boris scheme.

Markers obey  X' = V,  V' = -grad K * rho(X) - V ^ B(t, X).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ._pairsum import pair_field
from .core import PhaseEnsemble
from .diagnostics import DiagnosticsSeries, moment_v
from .fields import MagneticFieldSpec
from .kernels import KernelSpec


class NumericalError(RuntimeError):
    def __init__(self, frame: int, time: float):
        super().__init__(f"non-finite state at output frame {frame} (t={time!r})")
        self.frame = frame
        self.time = time


def _orient(spec: KernelSpec) -> float:
    return spec.coupling * (spec.sign if spec.dim == 2 else -spec.sign)


def field_from_sources(
    spec: KernelSpec, sources: np.ndarray, weights: np.ndarray, targets: np.ndarray, parallel: bool = False
) -> np.ndarray:
    """(grad K * rho)(targets) for point masses ``weights`` at ``sources``."""
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    if spec.coupling == 0:
        return np.zeros_like(targets)
    return pair_field(targets, sources, weights, _orient(spec), spec.screening, spec.softening**2, parallel)


def force_at(ens: PhaseEnsemble, spec: KernelSpec, x: np.ndarray, parallel: bool = False) -> np.ndarray:
    """sum_j w_j grad K(x - X_j); accepts one point or an (M, dim) array."""
    x = np.asarray(x, dtype=float)
    out = field_from_sources(spec, ens.positions, ens.weights, np.atleast_2d(x), parallel)
    return out[0] if x.ndim == 1 else out


def electric_field(ens: PhaseEnsemble, spec: KernelSpec, parallel: bool = False) -> np.ndarray:
    """E = -grad K * rho at every marker."""
    return -field_from_sources(spec, ens.positions, ens.weights, ens.positions, parallel)


def boris_velocity(v: np.ndarray, E: np.ndarray, B: np.ndarray, dt: float) -> np.ndarray:
    """Half kick, exact-norm rotation for V' = -V ^ B, half kick."""
    vm = v + 0.5 * dt * E
    if v.shape[1] == 2:
        tz = -0.5 * dt * B
        if not np.any(tz):
            return vm + 0.5 * dt * E
        s = 2.0 * tz / (1.0 + tz * tz)
        px = vm[:, 0] + vm[:, 1] * tz
        py = vm[:, 1] - vm[:, 0] * tz
        vp = np.column_stack([vm[:, 0] + py * s, vm[:, 1] - px * s])
    else:
        t = -0.5 * dt * B
        if not np.any(t):
            return vm + 0.5 * dt * E
        s = 2.0 * t / (1.0 + np.sum(t * t, axis=1))[:, None]
        vprime = vm + np.cross(vm, t)
        vp = vm + np.cross(vprime, s)
    return vp + 0.5 * dt * E


def step_boris(
    ens: PhaseEnsemble,
    spec: KernelSpec,
    field: MagneticFieldSpec,
    dt: float,
    parallel: bool = False,
    E: np.ndarray | None = None,
) -> PhaseEnsemble:
    """One Boris step; returns a new ensemble at time t + dt."""
    if dt == 0:
        raise ValueError("dt must be nonzero")
    if E is None:
        E = electric_field(ens, spec, parallel)
    B = field.B(ens.time + 0.5 * dt, ens.positions)
    v = boris_velocity(ens.velocities, E, B, dt)
    out = ens.copy()
    out.velocities = v
    out.positions = ens.positions + dt * v
    out.time = ens.time + dt
    return out


@dataclass
class RunResult:
    initial: PhaseEnsemble
    final: PhaseEnsemble
    series: DiagnosticsSeries
    snapshots: list = field(default_factory=list)
    work: np.ndarray | None = None  # per-marker sum of dt |E(X_i)|
    n_steps: int = 0
    dt: float = 0.0


def step_schedule(dt: float, T: float) -> list[float]:
    """Step sizes of dt, the last one trimmed so the run ends exactly at T."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if T < 0:
        raise ValueError("T must be non-negative")
    n = math.ceil(T / dt - 1e-9)
    steps = [dt] * n
    if n:
        steps[-1] = T - (n - 1) * dt
    return steps


def simulate(
    ens: PhaseEnsemble,
    spec: KernelSpec,
    field: MagneticFieldSpec,
    dt: float,
    T: float,
    output_every: int = 1,
    orders: tuple = (1, 2, 3, 4),
    lp_orders: tuple = (),
    h: float | None = None,
    keep_snapshots: bool = False,
    parallel: bool = False,
    on_frame: Callable[[int, PhaseEnsemble], None] | None = None,
    track_work: bool = True,
) -> RunResult:
    """Advance ``ens`` to time T, recording diagnostics every ``output_every`` steps."""
    if output_every < 1:
        raise ValueError("output_every must be >= 1")
    steps = step_schedule(dt, T)
    h = h if h is not None else 2.0 * ens.mean_spacing()
    series = DiagnosticsSeries(tuple(orders), tuple(lp_orders), h)
    mbar = {n: (moment_v(ens, n) ** (1 / n) if n else moment_v(ens, 0)) for n in orders}
    work = np.zeros(ens.n_markers) if track_work else None
    snapshots = []
    weights, fvalues = ens.weights, ens.fvalues

    def emit(e: PhaseEnsemble, frame: int):
        # a non-finite state would otherwise surface as a bogus grid size in the deposit
        if not (np.all(np.isfinite(e.positions)) and np.all(np.isfinite(e.velocities))):
            raise NumericalError(frame, e.time)
        series.record(e, dict(mbar))
        if not series.is_finite():
            raise NumericalError(frame, e.time)
        if keep_snapshots:
            snapshots.append(e.copy())
        if on_frame is not None:
            on_frame(frame, e)

    current = ens
    emit(current, 0)
    frame = 0
    for k, step in enumerate(steps, start=1):
        E = electric_field(current, spec, parallel)
        if work is not None:
            work += step * np.sqrt(np.sum(E * E, axis=1))
        nxt = step_boris(current, spec, field, step, parallel, E=E)
        nxt.time = k * dt if k < len(steps) else T
        # mass and f-values are carried by reference and never rewritten
        assert nxt.weights is weights and nxt.fvalues is fvalues
        current = nxt
        for n in orders:
            val = moment_v(current, n)
            mbar[n] = max(mbar[n], val ** (1 / n) if n else val)
        if k % output_every == 0 or k == len(steps):
            frame += 1
            emit(current, frame)
    return RunResult(ens, current, series, snapshots, work, len(steps), dt)
