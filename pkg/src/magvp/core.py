"""Phase-space data model: weighted markers, gridded densities and initial data."""

from __future__ import annotations

import csv
import math
import struct
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import erf, gamma

ENSEMBLE_MAGIC = b"MAGVPENS"
ENSEMBLE_VERSION = 1
# magic, version, dim, N, time, config hash (64 ascii hex chars)
_HEADER = struct.Struct("<8sIIQd64s")

WEIGHT_FLOOR = 1e-14
MASS_TOLERANCE = 1e-4
COVERAGE_TOLERANCE = 1e-6
MAX_MARKERS = 5_000_000

INITIAL_FAMILIES = ("gaussian", "shifted-gaussian", "two-stream", "bump", "uniform-box")


class EnsembleError(ValueError):
    pass


def sphere_area(dim: int) -> float:
    """Surface measure of the unit sphere in R^dim."""
    return 2.0 * math.pi ** (dim / 2) / gamma(dim / 2)


def ball_volume(dim: int) -> float:
    return math.pi ** (dim / 2) / gamma(dim / 2 + 1)


@dataclass
class PhaseEnsemble:
    """Weighted phase-space markers.

    ``weights`` carry the phase-space mass of each marker and ``fvalues`` the
    value of the initial distribution at the marker's starting point.  Both are
    fixed at construction; only positions, velocities and time evolve.
    """

    positions: np.ndarray
    velocities: np.ndarray
    weights: np.ndarray
    fvalues: np.ndarray
    time: float = 0.0
    cell_volume: float = float("nan")

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64)
        self.velocities = np.ascontiguousarray(self.velocities, dtype=np.float64)
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        self.fvalues = np.ascontiguousarray(self.fvalues, dtype=np.float64)
        if self.positions.ndim != 2 or self.positions.shape[1] not in (2, 3):
            raise EnsembleError(f"positions must have shape (N, 2|3), got {self.positions.shape}")
        n = self.positions.shape[0]
        if n < 1:
            raise EnsembleError("empty ensemble")
        if self.velocities.shape != self.positions.shape:
            raise EnsembleError("positions and velocities differ in shape")
        if self.weights.shape != (n,) or self.fvalues.shape != (n,):
            raise EnsembleError("weights and fvalues must have length N")
        if np.any(self.weights < 0) or np.any(self.fvalues < 0):
            raise EnsembleError("weights and fvalues must be non-negative")
        self.weights.flags.writeable = False
        self.fvalues.flags.writeable = False

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @property
    def n_markers(self) -> int:
        return self.positions.shape[0]

    @property
    def mass(self) -> float:
        return float(np.sum(self.weights))

    def copy(self) -> "PhaseEnsemble":
        # weights and fvalues are read-only, so sharing them is safe
        return replace(self, positions=self.positions.copy(), velocities=self.velocities.copy())

    def mean_spacing(self) -> float:
        """Mean inter-marker spacing in position space (bounding box based)."""
        span = np.ptp(self.positions, axis=0)
        n_pos = len(np.unique(self.positions, axis=0))
        span = np.where(span > 0, span, 1.0)
        return float(np.prod(span) ** (1 / self.dim) / max(n_pos ** (1 / self.dim) - 1, 1))


@dataclass
class GridDensity:
    """Cell-centred density on a uniform grid; values are mass per unit volume."""

    origin: np.ndarray
    h: float
    values: np.ndarray

    @property
    def dim(self) -> int:
        return self.values.ndim

    @property
    def cell_volume(self) -> float:
        return self.h ** self.dim

    @property
    def mass(self) -> float:
        return float(np.sum(self.values) * self.cell_volume)

    def centers(self) -> np.ndarray:
        """Cell centres as an array of shape (n_cells, dim), C order."""
        axes = [self.origin[k] + (np.arange(s) + 0.5) * self.h for k, s in enumerate(self.values.shape)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def occupied_cells(self) -> int:
        return int(np.count_nonzero(self.values))


@dataclass(frozen=True)
class InitialData:
    """Analytic initial distribution.

    ``family`` selects the functional form; the remaining fields are read by
    the families that need them.
    """

    family: str = "gaussian"
    mass: float = 1.0
    sigma_x: float = 1.0
    sigma_v: float = 1.0
    x0: tuple = ()
    v0: tuple = ()
    radius: float = 5.0  # truncation radius in units of sigma (or support radius for bump)
    stream_velocity: float = 2.0
    support_x: float = 1.0
    support_v: float = 1.0
    box_lo: float = 0.0
    box_hi: float = 1.0
    vbox_lo: float = 0.0
    vbox_hi: float = 1.0
    value: float = 1.0


def _center(vec: Sequence[float], dim: int) -> np.ndarray:
    if len(vec) == 0:
        return np.zeros(dim)
    arr = np.asarray(vec, dtype=float)
    if arr.shape != (dim,):
        raise EnsembleError(f"centre vector must have length {dim}")
    return arr


def _gauss(r2: np.ndarray, sigma: float, dim: int) -> np.ndarray:
    return np.exp(-0.5 * r2 / sigma**2) / ((2 * math.pi) ** (dim / 2) * sigma**dim)


def _bump_profile(r: np.ndarray, support: float) -> np.ndarray:
    s2 = (r / support) ** 2
    return np.where(s2 < 1, (1 - s2) ** 2, 0.0)


def _bump_mass(dim: int, support: float) -> float:
    # integral of (1 - |y|^2/R^2)^2 over the ball of radius R
    radial = {2: 1 / 6, 3: 8 / 105}[dim]
    return sphere_area(dim) * radial * support**dim


class _Family:
    """Evaluator plus per-axis box for one analytic family."""

    def __init__(self, data: InitialData, dim: int):
        self.data = data
        self.dim = dim
        fam = data.family
        if fam not in INITIAL_FAMILIES:
            raise EnsembleError(f"unknown initial-data family {fam!r}; expected one of {INITIAL_FAMILIES}")
        self.x0 = _center(data.x0, dim)
        self.v0 = _center(data.v0, dim)
        if fam == "shifted-gaussian" and not (len(data.x0) or len(data.v0)):
            raise EnsembleError("shifted-gaussian needs x0 or v0")

    def analytic_mass(self) -> float:
        d = self.data
        if d.family == "bump":
            return d.mass
        if d.family == "uniform-box":
            return d.value * ((d.box_hi - d.box_lo) * (d.vbox_hi - d.vbox_lo)) ** self.dim
        return d.mass

    def axis_bounds(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        d, dim = self.data, self.dim
        if d.family in ("gaussian", "shifted-gaussian", "two-stream"):
            rx, rv = d.radius * d.sigma_x, d.radius * d.sigma_v
            xlo, xhi = self.x0 - rx, self.x0 + rx
            vlo, vhi = self.v0 - rv, self.v0 + rv
            if d.family == "two-stream":
                vlo = vlo.copy()
                vhi = vhi.copy()
                vlo[0] -= abs(d.stream_velocity)
                vhi[0] += abs(d.stream_velocity)
            return xlo, xhi, vlo, vhi
        if d.family == "bump":
            return self.x0 - d.support_x, self.x0 + d.support_x, self.v0 - d.support_v, self.v0 + d.support_v
        return (np.full(dim, d.box_lo), np.full(dim, d.box_hi), np.full(dim, d.vbox_lo), np.full(dim, d.vbox_hi))

    def captured_fraction(self) -> float:
        """Smallest per-axis fraction of analytic mass inside the truncation box."""
        d = self.data
        if d.family in ("bump", "uniform-box"):
            return 1.0
        return float(erf(d.radius / math.sqrt(2)))

    def __call__(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        d, dim = self.data, self.dim
        if d.family in ("gaussian", "shifted-gaussian"):
            rx = np.sum((x - self.x0) ** 2, axis=1)
            rv = np.sum((v - self.v0) ** 2, axis=1)
            return d.mass * _gauss(rx, d.sigma_x, dim) * _gauss(rv, d.sigma_v, dim)
        if d.family == "two-stream":
            rx = np.sum((x - self.x0) ** 2, axis=1)
            shift = np.zeros(dim)
            shift[0] = d.stream_velocity
            rp = np.sum((v - self.v0 - shift) ** 2, axis=1)
            rm = np.sum((v - self.v0 + shift) ** 2, axis=1)
            return d.mass * _gauss(rx, d.sigma_x, dim) * 0.5 * (_gauss(rp, d.sigma_v, dim) + _gauss(rm, d.sigma_v, dim))
        if d.family == "bump":
            px = _bump_profile(np.linalg.norm(x - self.x0, axis=1), d.support_x)
            pv = _bump_profile(np.linalg.norm(v - self.v0, axis=1), d.support_v)
            norm = _bump_mass(dim, d.support_x) * _bump_mass(dim, d.support_v)
            return d.mass * px * pv / norm
        inside = np.all((x >= d.box_lo) & (x <= d.box_hi), axis=1) & np.all((v >= d.vbox_lo) & (v <= d.vbox_hi), axis=1)
        return np.where(inside, d.value, 0.0)


def _axis_nodes(lo: float, hi: float, n: int) -> tuple[np.ndarray, float]:
    h = (hi - lo) / n
    return lo + (np.arange(n) + 0.5) * h, h


def init_from_grid(
    data: InitialData,
    dim: int,
    nx: int,
    nv: int,
    weight_floor: float = WEIGHT_FLOOR,
) -> PhaseEnsemble:
    """Quadrature discretisation of an analytic initial distribution.

    Markers sit at the cell centres of a tensor grid with ``nx`` cells per
    position axis and ``nv`` per velocity axis.
    """
    if dim not in (2, 3):
        raise EnsembleError(f"unsupported dimension {dim}")
    if nx < 1 or nv < 1:
        raise EnsembleError("marker counts per axis must be positive")
    n_total = nx**dim * nv**dim
    if n_total > MAX_MARKERS:
        raise EnsembleError(f"{n_total} markers exceeds the cap of {MAX_MARKERS}")
    fam = _Family(data, dim)
    captured = fam.captured_fraction()
    if captured < 1 - COVERAGE_TOLERANCE:
        raise EnsembleError(
            f"truncation radius too small: captures {captured:.9f} of the mass per axis "
            f"(need >= {1 - COVERAGE_TOLERANCE})"
        )
    xlo, xhi, vlo, vhi = fam.axis_bounds()
    xs, hxs = zip(*(_axis_nodes(xlo[k], xhi[k], nx) for k in range(dim)))
    vs, hvs = zip(*(_axis_nodes(vlo[k], vhi[k], nv) for k in range(dim)))
    cell = float(np.prod(hxs) * np.prod(hvs))

    grids = np.meshgrid(*xs, *vs, indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    x, v = pts[:, :dim], pts[:, dim:]
    fvals = fam(x, v)
    weights = fvals * cell
    wmax = weights.max(initial=0.0)
    if wmax <= 0:
        raise EnsembleError("empty ensemble: initial distribution vanishes on the marker grid")
    keep = weights >= weight_floor * wmax
    ens = PhaseEnsemble(x[keep], v[keep], weights[keep], fvals[keep], 0.0, cell)

    analytic = fam.analytic_mass()
    rel = abs(ens.mass - analytic) / analytic
    if rel > MASS_TOLERANCE:
        warnings.warn(
            f"quadrature mass {ens.mass:.8g} differs from analytic {analytic:.8g} by {rel:.2e} relative; "
            "refine the marker grid for a closer match",
            stacklevel=2,
        )
    return ens


def sup_norm_f(ensemble: PhaseEnsemble) -> float:
    """||f(t)||_inf, exact for the marker representation."""
    return float(np.max(ensemble.fvalues))


def lp_norm_f(ensemble: PhaseEnsemble, r: float) -> float:
    """||f(t)||_r of the cell-constant reconstruction (transport-invariant)."""
    if math.isinf(r):
        return sup_norm_f(ensemble)
    if r < 1:
        raise ValueError("r must be >= 1")
    return float(np.sum(ensemble.weights * ensemble.fvalues ** (r - 1))) ** (1 / r)


# --- serialization ---------------------------------------------------------


def save_ensemble(path: str | Path, ens: PhaseEnsemble, config_hash: str = "") -> None:
    """Columnar little-endian binary: header, then each column as float64."""
    tag = config_hash.encode("ascii").ljust(64, b"\0")[:64]
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(ENSEMBLE_MAGIC, ENSEMBLE_VERSION, ens.dim, ens.n_markers, ens.time, tag))
        for arr in (*ens.positions.T, *ens.velocities.T, ens.weights, ens.fvalues):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_ensemble(path: str | Path) -> tuple[PhaseEnsemble, str]:
    raw = Path(path).read_bytes()
    magic, version, dim, n, time, tag = _HEADER.unpack_from(raw)
    if magic != ENSEMBLE_MAGIC:
        raise EnsembleError(f"{path}: not an ensemble file")
    if version != ENSEMBLE_VERSION:
        raise EnsembleError(f"{path}: unsupported version {version}")
    cols = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(2 * dim + 2, n)
    ens = PhaseEnsemble(cols[:dim].T.copy(), cols[dim : 2 * dim].T.copy(), cols[-2].copy(), cols[-1].copy(), time)
    return ens, tag.rstrip(b"\0").decode("ascii")


def ensemble_columns(dim: int) -> list[str]:
    return [f"x{k}" for k in range(dim)] + [f"v{k}" for k in range(dim)] + ["weight", "f"]


def save_ensemble_csv(path: str | Path, ens: PhaseEnsemble, config_hash: str = "") -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# magvp.ensemble/1 config_hash={config_hash} time={ens.time!r}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ensemble_columns(ens.dim))
        data = np.column_stack([ens.positions, ens.velocities, ens.weights, ens.fvalues])
        for row in data:
            writer.writerow([repr(float(x)) for x in row])


def load_ensemble_csv(path: str | Path) -> PhaseEnsemble:
    with open(path) as fh:
        first = fh.readline()
        time = float(first.rsplit("time=", 1)[1]) if "time=" in first else 0.0
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    dim = (len(header) - 2) // 2
    return PhaseEnsemble(data[:, :dim], data[:, dim : 2 * dim], data[:, -2], data[:, -1], time)
