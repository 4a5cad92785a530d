"""Interaction kernels: the 2D logarithmic and 3D screened Coulomb potentials.

K(x) = sign * log|x| / (2 pi)              in 2D
K(x) = sign * exp(-kappa |x|) / (4 pi |x|)  in 3D

With ``sign=+1`` the 2D interaction is attractive and the 3D one repulsive
under the force -grad K * rho.  Plummer softening replaces |x| by
sqrt(|x|^2 + delta^2) everywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import integrate, optimize

from .core import ball_volume

_R_MIN, _R_MAX = 1e-9, 1e9


class KernelError(ValueError):
    pass


@dataclass(frozen=True)
class KernelSpec:
    dim: int = 2
    sign: int = 1
    kappa: float = 1.0
    softening: float = 0.0
    coupling: float = 1.0

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise KernelError(f"unsupported dimension {self.dim}")
        if self.sign not in (1, -1):
            raise KernelError("sign must be +1 or -1")
        if self.kappa < 0 or self.softening < 0 or self.coupling < 0:
            raise KernelError("kappa, softening and coupling must be non-negative")

    @property
    def screening(self) -> float:
        """Effective screening; the 2D kernel is never screened."""
        return self.kappa if self.dim == 3 else 0.0


def kernel_b(dim: int) -> Fraction:
    """Critical weak-Lebesgue exponent of grad K: 2 in 2D, 3/2 in 3D."""
    if dim == 2:
        return Fraction(2)
    if dim == 3:
        return Fraction(3, 2)
    raise KernelError(f"unsupported dimension {dim}")


def potential(spec: KernelSpec, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    r = np.sqrt(np.sum(x * x, axis=-1) + spec.softening**2)
    if spec.dim == 2:
        return spec.coupling * spec.sign * np.log(r) / (2 * math.pi)
    return spec.coupling * spec.sign * np.exp(-spec.screening * r) / (4 * math.pi * r)


def radial_factor(spec: KernelSpec, r: np.ndarray) -> np.ndarray:
    """Scalar s(r) with grad K(x) = s(|x|) * x; unsigned, coupling included."""
    rd2 = np.asarray(r, dtype=float) ** 2 + spec.softening**2
    if spec.dim == 2:
        return spec.coupling / (2 * math.pi * rd2)
    rd = np.sqrt(rd2)
    k = spec.screening
    return spec.coupling * np.exp(-k * rd) * (1 + k * rd) / (4 * math.pi * rd2 * rd)


def grad_K(spec: KernelSpec, x: np.ndarray) -> np.ndarray:
    """Gradient of K at one point or an array of points (last axis = dim)."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != spec.dim:
        raise KernelError(f"expected points of dimension {spec.dim}")
    r = np.sqrt(np.sum(x * x, axis=-1))
    if spec.softening == 0 and np.any(r == 0):
        raise KernelError("grad K is singular at the origin without softening")
    # the 3D potential decreases radially, hence the sign flip
    orient = spec.sign if spec.dim == 2 else -spec.sign
    return orient * radial_factor(spec, r)[..., None] * x


def grad_K_magnitude(spec: KernelSpec, r: np.ndarray) -> np.ndarray:
    return radial_factor(spec, r) * np.asarray(r, dtype=float)


# --- weak and strong Lebesgue norms ----------------------------------------


def _closed_form_weak(spec: KernelSpec, q: float) -> float | None:
    c = spec.coupling
    if spec.dim == 2 and q == 2:
        # level set {|grad K| > t} is a disc of area 1/(4 pi t^2); softening only shrinks it
        return c / (2 * math.sqrt(math.pi))
    if spec.dim == 3 and q == 1.5 and (spec.screening == 0 or spec.softening == 0):
        # near-origin (or far-field, when unscreened) Coulomb limit
        return c * (4 * math.pi / 3) ** (2 / 3) / (4 * math.pi)
    return None


def _weak_divergent(spec: KernelSpec, q: float) -> bool:
    d = spec.dim
    near = spec.softening == 0 and 1 - d + d / q < 0
    if d == 2:
        far = q < 2
    else:
        far = spec.screening == 0 and q < 1.5
    return near or far


def _maximize_log(fun, lo: float, hi: float, n: int = 2001) -> float:
    """Max of a smooth unimodal-ish function of log r: dense scan, then Brent refinement."""
    grid = np.linspace(lo, hi, n)
    vals = np.array([fun(u) for u in grid])
    i = int(np.argmax(vals))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, n - 1)]
    res = optimize.minimize_scalar(lambda u: -fun(u), bounds=(a, b), method="bounded", options={"xatol": 1e-12})
    return max(float(vals[i]), -float(res.fun))


def weak_norm_gradK(spec: KernelSpec, q: float) -> float:
    """||grad K||_{q,inf} = sup_t t |{|grad K| > t}|^{1/q}.

    Closed form where available; otherwise the radial profile is maximised
    numerically (unsoftened kernels are radially decreasing) or the level sets
    are integrated directly.  Divergent norms are returned as +inf.
    """
    if q <= 1:
        raise KernelError("q must exceed 1")
    if spec.coupling == 0:
        return 0.0
    closed = _closed_form_weak(spec, q)
    if closed is not None:
        return closed
    if _weak_divergent(spec, q):
        return math.inf
    if spec.softening > 0:
        return weak_norm_gradK_levelset(spec, q)
    omega = ball_volume(spec.dim)
    d = spec.dim

    def profile(u):
        r = math.exp(u)
        return float(grad_K_magnitude(spec, r)) * (omega * r**d) ** (1 / q)

    return _maximize_log(profile, math.log(_R_MIN), math.log(_R_MAX))


def _levelset_measure(spec: KernelSpec, t: float, r_peak: float, g_peak: float) -> float:
    """Lebesgue measure of {x : |grad K(x)| > t} for a profile rising to r_peak then falling."""
    g = lambda r: float(grad_K_magnitude(spec, r)) - t
    if t >= g_peak:
        return 0.0
    r_in = 0.0
    if r_peak > 0:
        r_in = optimize.brentq(g, 0.0, r_peak, xtol=1e-300, rtol=1e-15, maxiter=500)
    hi = max(r_peak, 1.0) * 2
    while g(hi) > 0:
        hi *= 2
        if hi > 1e300:
            return math.inf
    r_out = optimize.brentq(g, r_peak if r_peak > 0 else 0.5 * _R_MIN, hi, xtol=1e-300, rtol=1e-15, maxiter=500)
    return ball_volume(spec.dim) * (r_out**spec.dim - r_in**spec.dim)


def weak_norm_gradK_levelset(spec: KernelSpec, q: float) -> float:
    """Weak norm through the distribution function, maximised over the level t."""
    if spec.coupling == 0:
        return 0.0
    if _weak_divergent(spec, q):
        return math.inf
    if spec.softening > 0:
        res = optimize.minimize_scalar(
            lambda u: -float(grad_K_magnitude(spec, math.exp(u))),
            bounds=(math.log(spec.softening) - 5, math.log(spec.softening) + 5),
            method="bounded",
            options={"xatol": 1e-12},
        )
        r_peak = math.exp(res.x)
        g_peak = -float(res.fun)
    else:
        r_peak, g_peak = 0.0, math.inf
    # levels are scanned on a log scale between the far-field and near-peak values
    t_lo = float(grad_K_magnitude(spec, _R_MAX))
    t_hi = g_peak if math.isfinite(g_peak) else float(grad_K_magnitude(spec, _R_MIN))
    t_lo = max(t_lo, 1e-40 * t_hi)

    def objective(u):
        t = math.exp(u)
        m = _levelset_measure(spec, t, r_peak, g_peak)
        return t * m ** (1 / q) if m > 0 else 0.0

    return _maximize_log(objective, math.log(t_lo), math.log(t_hi) - 1e-12, n=801)


def strong_norm_gradK(spec: KernelSpec, c: float) -> float:
    """||grad K||_{L^c(R^3)} by radial quadrature (relative error ~1e-10)."""
    if spec.dim != 3:
        raise KernelError("strong norm is defined for the 3D kernel only")
    if c < 1:
        raise KernelError("c must be >= 1")
    if spec.coupling == 0:
        return 0.0
    k = spec.screening
    if k == 0 and spec.softening == 0:
        return math.inf
    if k == 0 and c <= 1.5:
        return math.inf  # far-field tail r^{2-2c} is not integrable
    if spec.softening == 0 and c >= 1.5:
        return math.inf  # near-origin singularity r^{2-2c}
    opts = dict(epsabs=0.0, epsrel=1e-12, limit=400)
    if spec.softening == 0:
        # integrand = r^{2-2c} * smooth(r); the algebraic weight absorbs the singularity
        smooth = lambda r: 4 * math.pi * (spec.coupling * math.exp(-k * r) * (1 + k * r) / (4 * math.pi)) ** c
        head, _ = integrate.quad(smooth, 0.0, 1.0, weight="alg", wvar=(2 - 2 * c, 0.0), **opts)
    else:
        dens = lambda r: 4 * math.pi * r * r * float(grad_K_magnitude(spec, r)) ** c
        head, _ = integrate.quad(dens, 0.0, 1.0, **opts)
    dens = lambda r: 4 * math.pi * r * r * float(grad_K_magnitude(spec, r)) ** c
    tail, _ = integrate.quad(dens, 1.0, math.inf, **opts)
    return (head + tail) ** (1 / c)
