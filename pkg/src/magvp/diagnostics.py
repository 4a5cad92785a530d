"""Velocity, position and Eulerian moments, and cloud-in-cell density estimates."""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import GridDensity, PhaseEnsemble

MAX_CELLS = 20_000_000
SERIES_SCHEMA = "magvp.series/1"


class DensityError(ValueError):
    pass


def _norms(vectors: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(vectors * vectors, axis=1))


def _weighted_power_sum(weights: np.ndarray, radii: np.ndarray, n: float) -> float:
    if n < 0:
        raise ValueError("moment order must be >= 0")
    if n == 0:
        return float(np.sum(weights))
    return float(np.sum(weights * radii**n))


def moment_v(ens: PhaseEnsemble, n: float) -> float:
    """M_n = sum_i w_i |V_i|^n."""
    return _weighted_power_sum(ens.weights, _norms(ens.velocities), n)


def moment_x(ens: PhaseEnsemble, n: float) -> float:
    """N_n = sum_i w_i |X_i|^n."""
    return _weighted_power_sum(ens.weights, _norms(ens.positions), n)


def moment_eulerian(ens: PhaseEnsemble, n: float) -> float:
    """L_n = sum_i w_i |X_i - t V_i|^n at t = ens.time."""
    return _weighted_power_sum(ens.weights, _norms(ens.positions - ens.time * ens.velocities), n)


def grid_for(points: np.ndarray, h: float, max_cells: int = MAX_CELLS) -> tuple[np.ndarray, tuple[int, ...]]:
    """Grid covering the bounding box of ``points`` plus a halo.

    The origin sits 1.5 cells below the minimum, so a point at the minimum lands
    exactly on a cell centre; every cloud-in-cell stencil stays inside.
    """
    if not h > 0:
        raise DensityError("cell size h must be positive")
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    origin = lo - 1.5 * h
    shape = tuple(int(s) for s in np.floor((hi - lo) / h).astype(np.int64) + 4)
    cells = math.prod(shape)
    if cells > max_cells:
        raise DensityError(f"grid of {cells} cells exceeds the cap of {max_cells}; increase h")
    return origin, shape


def cic_deposit(
    points: np.ndarray,
    values: np.ndarray,
    h: float,
    origin: np.ndarray | None = None,
    shape: tuple[int, ...] | None = None,
    max_cells: int = MAX_CELLS,
) -> GridDensity:
    """Multilinear (cloud-in-cell) deposition of point masses onto cell centres."""
    points = np.asarray(points, dtype=float)
    dim = points.shape[1]
    if origin is None or shape is None:
        origin, shape = grid_for(points, h, max_cells)
    rel = (points - origin) / h - 0.5
    base = np.floor(rel).astype(np.int64)
    frac = rel - base
    if np.any(base < 0) or np.any(base + 1 >= np.asarray(shape)):
        raise DensityError("points fall outside the deposition grid")
    size = math.prod(shape)
    acc = np.zeros(size)
    for corner in itertools.product((0, 1), repeat=dim):
        c = np.asarray(corner)
        w = np.prod(np.where(c, frac, 1.0 - frac), axis=1)
        flat = np.ravel_multi_index(tuple((base + c).T), shape)
        acc += np.bincount(flat, weights=values * w, minlength=size)
    return GridDensity(np.asarray(origin, dtype=float), float(h), acc.reshape(shape) / h**dim)


def deposit_density(ens: PhaseEnsemble, h: float, max_cells: int = MAX_CELLS, **grid) -> GridDensity:
    """rho(x) = int f dv, estimated by cloud-in-cell deposition of the marker weights."""
    return cic_deposit(ens.positions, ens.weights, h, max_cells=max_cells, **grid)


def partial_moment_density(ens: PhaseEnsemble, n: float, h: float, max_cells: int = MAX_CELLS, **grid) -> GridDensity:
    """rho_n(x) = int |v|^n f dv."""
    vals = ens.weights if n == 0 else ens.weights * _norms(ens.velocities) ** n
    return cic_deposit(ens.positions, vals, h, max_cells=max_cells, **grid)


def lp_norm_density(grid: GridDensity, p: float) -> float:
    if math.isinf(p):
        return float(grid.values.max())
    if p < 1:
        raise ValueError("p must be >= 1")
    if p == 1:
        return grid.mass
    return float(grid.cell_volume * np.sum(grid.values**p)) ** (1 / p)


def default_h(ens: PhaseEnsemble) -> float:
    return 2.0 * ens.mean_spacing()


# --- time series -----------------------------------------------------------


def _fmt_p(p: float) -> str:
    return "inf" if math.isinf(p) else repr(float(p)).rstrip("0").rstrip(".")


@dataclass
class DiagnosticsSeries:
    """Moments and density norms at each output time.

    ``Mbar[n]`` is the running maximum of M_n^{1/n} over every integrator step
    up to that time, not only over output frames.
    """

    orders: tuple
    lp_orders: tuple
    h: float
    times: list = field(default_factory=list)
    mass: list = field(default_factory=list)
    M: dict = field(default_factory=dict)
    N: dict = field(default_factory=dict)
    L: dict = field(default_factory=dict)
    Mbar: dict = field(default_factory=dict)
    rho: dict = field(default_factory=dict)

    def __post_init__(self):
        for n in self.orders:
            for table in (self.M, self.N, self.L, self.Mbar):
                table.setdefault(n, [])
        for p in self.lp_orders:
            self.rho.setdefault(p, [])

    def record(self, ens: PhaseEnsemble, mbar: dict[float, float] | None = None) -> None:
        self.times.append(float(ens.time))
        self.mass.append(ens.mass)
        for n in self.orders:
            self.M[n].append(moment_v(ens, n))
            self.N[n].append(moment_x(ens, n))
            self.L[n].append(moment_eulerian(ens, n))
            self.Mbar[n].append(mbar[n] if mbar else self.M[n][-1] ** (1 / n) if n else self.M[n][-1])
        if self.lp_orders:
            grid = deposit_density(ens, self.h)
            for p in self.lp_orders:
                self.rho[p].append(lp_norm_density(grid, p))

    def __len__(self) -> int:
        return len(self.times)

    def array(self, key: str, n: float | None = None) -> np.ndarray:
        if key in ("times", "mass"):
            return np.asarray(getattr(self, key))
        return np.asarray(getattr(self, key)[n])

    def columns(self) -> list[str]:
        cols = ["time", "mass"]
        for n in self.orders:
            cols += [f"M{n}", f"N{n}", f"L{n}", f"Mbar{n}"]
        cols += [f"rho_L{_fmt_p(p)}" for p in self.lp_orders]
        return cols + ["h"]

    def rows(self):
        for k in range(len(self.times)):
            row = [self.times[k], self.mass[k]]
            for n in self.orders:
                row += [self.M[n][k], self.N[n][k], self.L[n][k], self.Mbar[n][k]]
            row += [self.rho[p][k] for p in self.lp_orders]
            yield row + [self.h]

    def is_finite(self, k: int = -1) -> bool:
        vals = [self.times[k], self.mass[k]]
        for n in self.orders:
            vals += [self.M[n][k], self.N[n][k], self.L[n][k]]
        vals += [self.rho[p][k] for p in self.lp_orders]
        return bool(np.all(np.isfinite(vals)))

    def to_csv(self, path: str | Path, config_hash: str = "") -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# {SERIES_SCHEMA} config_hash={config_hash}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(self.columns())
            for row in self.rows():
                writer.writerow([repr(float(x)) for x in row])

    @classmethod
    def from_csv(cls, path: str | Path) -> tuple["DiagnosticsSeries", str]:
        with open(path) as fh:
            first = fh.readline().strip()
            if SERIES_SCHEMA not in first:
                raise ValueError(f"{path}: not a diagnostics series ({first!r})")
            chash = first.split("config_hash=", 1)[1] if "config_hash=" in first else ""
            reader = csv.reader(fh)
            header = next(reader)
            data = np.array([[float(x) for x in row] for row in reader if row], dtype=float).reshape(-1, len(header))
        col = {name: data[:, i] for i, name in enumerate(header)}
        orders = tuple(_parse_num(c[1:]) for c in header if c.startswith("M") and not c.startswith("Mbar"))
        lps = tuple(math.inf if c[5:] == "inf" else float(c[5:]) for c in header if c.startswith("rho_L"))
        h = float(col["h"][0]) if len(data) else float("nan")
        s = cls(orders, lps, h)
        s.times = list(col["time"])
        s.mass = list(col["mass"])
        for n in orders:
            key = _fmt_n(n)
            s.M[n], s.N[n], s.L[n], s.Mbar[n] = (list(col[f"{c}{key}"]) for c in ("M", "N", "L", "Mbar"))
        for p in lps:
            s.rho[p] = list(col[f"rho_L{_fmt_p(p)}"])
        return s, chash


def _parse_num(text: str):
    v = float(text)
    return int(v) if v.is_integer() and "." not in text else v


def _fmt_n(n) -> str:
    return str(n)
