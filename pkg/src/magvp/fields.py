"""External magnetic field families.

In 2D the field is a scalar out-of-plane component and v ^ B := (v2 B, -v1 B).
In 3D it is a vector field and ^ is the usual cross product.
"""

from __future__ import annotations

import ast
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

FIELD_FAMILIES = ("zero", "uniform", "decaying-bump", "custom-analytic")

_ALLOWED_FUNCS = {
    "exp": np.exp,
    "sin": np.sin,
    "cos": np.cos,
    "tanh": np.tanh,
    "sqrt": np.sqrt,
    "log": np.log,
    "abs": np.abs,
    "where": np.where,
    "minimum": np.minimum,
    "maximum": np.maximum,
}
_ALLOWED_NODES = (
    ast.Expression,
    ast.BinOp,
    ast.UnaryOp,
    ast.Compare,
    ast.Call,
    ast.Name,
    ast.Load,
    ast.Constant,
    ast.operator,
    ast.unaryop,
    ast.cmpop,
)


class FieldError(ValueError):
    pass


def compile_expression(expr: str, dim: int = 3) -> Callable:
    """Compile a restricted arithmetic expression in t, x0..x{dim-1} and r."""
    try:
        tree = ast.parse(expr, mode="eval")
    except SyntaxError as exc:
        raise FieldError(f"cannot parse field expression {expr!r}: {exc.msg}") from None
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED_NODES):
            raise FieldError(f"disallowed syntax {type(node).__name__} in field expression {expr!r}")
        if isinstance(node, ast.Call) and not (isinstance(node.func, ast.Name) and node.func.id in _ALLOWED_FUNCS):
            raise FieldError(f"disallowed call in field expression {expr!r}")
        if isinstance(node, ast.Name) and node.id not in {*_ALLOWED_FUNCS, "t", "r", "pi", *(f"x{k}" for k in range(dim))}:
            raise FieldError(f"unknown name {node.id!r} in field expression {expr!r}")
    code = compile(tree, "<field>", "eval")

    def fn(t: float, x: np.ndarray) -> np.ndarray:
        env = dict(_ALLOWED_FUNCS, t=t, pi=math.pi, r=np.linalg.norm(x, axis=1))
        for k in range(x.shape[1]):
            env[f"x{k}"] = x[:, k]
        out = eval(code, {"__builtins__": {}}, env)
        return np.broadcast_to(np.asarray(out, dtype=float), (x.shape[0],)).copy()

    return fn


def smooth_bump(s: np.ndarray) -> np.ndarray:
    """C-infinity bump exp(1 - 1/(1 - s^2)) on |s| < 1, equal to 1 at the origin."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside] ** 2))
    return out


@dataclass(frozen=True)
class MagneticFieldSpec:
    family: str = "zero"
    dim: int = 2
    amplitude: float = 0.0
    B0: float = 1.0
    a: float = 1.05
    radius: float = 1.0
    direction: tuple = (0.0, 0.0, 1.0)
    expression: tuple = ()
    func: Callable | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.family not in FIELD_FAMILIES:
            raise FieldError(f"unknown field family {self.family!r}; expected one of {FIELD_FAMILIES}")
        if self.dim not in (2, 3):
            raise FieldError(f"unsupported dimension {self.dim}")
        if self.B0 < 0 or self.radius <= 0:
            raise FieldError("B0 must be >= 0 and radius > 0")
        if self.family == "custom-analytic":
            if self.func is None:
                n_comp = 1 if self.dim == 2 else 3
                exprs = (self.expression,) if isinstance(self.expression, str) else tuple(self.expression)
                if len(exprs) != n_comp:
                    raise FieldError(f"custom field needs {n_comp} expression(s) in {self.dim}D")
                fns = [compile_expression(e, self.dim) for e in exprs]
                object.__setattr__(self, "func", _stack(fns, self.dim))
        if self.dim == 3:
            d = np.asarray(self.direction, dtype=float)
            if d.shape != (3,) or not np.any(d):
                raise FieldError("direction must be a nonzero 3-vector")

    @property
    def unit_direction(self) -> np.ndarray:
        d = np.asarray(self.direction, dtype=float)
        return d / np.linalg.norm(d)

    @property
    def is_zero(self) -> bool:
        return self.family == "zero" or (self.family == "uniform" and self.amplitude == 0)

    def decay_envelope(self, t: np.ndarray | float) -> np.ndarray | float:
        return self.B0 * np.power(t, -self.a)

    def _scalar(self, t: float, x: np.ndarray) -> np.ndarray:
        n = x.shape[0]
        if self.family in ("zero",):
            return np.zeros(n)
        if self.family == "uniform":
            return np.full(n, float(self.amplitude))
        if self.family == "decaying-bump":
            # the 1/max(1,R) factor keeps |x ^ B| <= B0 (1+t)^-a on the support
            amp = self.B0 / max(1.0, self.radius) * (1.0 + t) ** (-self.a)
            return amp * smooth_bump(np.linalg.norm(x, axis=1) / self.radius)
        raise AssertionError(self.family)

    def B(self, t: float, x: np.ndarray) -> np.ndarray:
        """Field at time t and points x of shape (N, dim): (N,) in 2D, (N, 3) in 3D."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.family == "custom-analytic":
            out = np.asarray(self.func(t, x), dtype=float)
            return out.reshape(x.shape[0]) if self.dim == 2 else out.reshape(x.shape[0], 3)
        s = self._scalar(t, x)
        return s if self.dim == 2 else s[:, None] * self.unit_direction

    def b(self, t: float, x: np.ndarray) -> np.ndarray:
        """x ^ B(t, x)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return wedge(x, self.B(t, x))


def _stack(fns: Sequence[Callable], dim: int) -> Callable:
    if dim == 2:
        return fns[0]
    return lambda t, x: np.stack([f(t, x) for f in fns], axis=1)


def wedge(u: np.ndarray, B: np.ndarray) -> np.ndarray:
    """u ^ B with the out-of-plane convention in 2D."""
    if u.shape[-1] == 2:
        return np.stack([u[..., 1] * B, -u[..., 0] * B], axis=-1)
    return np.cross(u, B)


def field_magnitude(field: MagneticFieldSpec, t: float, x: np.ndarray) -> np.ndarray:
    B = field.B(t, x)
    return np.abs(B) if field.dim == 2 else np.linalg.norm(B, axis=1)


@dataclass
class HypothesisBReport:
    times: np.ndarray
    sup_B: np.ndarray
    sup_b: np.ndarray
    bound: np.ndarray
    worst_margin: float  # min over t of bound / sup (inf when the field vanishes)
    passed: bool
    warnings: list


def validate_hypothesis_B(
    field: MagneticFieldSpec, t_grid: np.ndarray, x_samples: np.ndarray, rtol: float = 1e-12
) -> HypothesisBReport:
    """Sampled check of sup|B(t)| and sup|x ^ B(t)| against B0 t^-a."""
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(t_grid <= 0) or np.any(np.diff(t_grid) <= 0):
        raise FieldError("t_grid must be positive and strictly increasing")
    notes = []
    if field.a <= 1:
        msg = "decay exponent a must exceed 1 for the Eulerian moment bound to be integrable"
        warnings.warn(msg, stacklevel=2)
        notes.append(msg)
    x_samples = np.atleast_2d(np.asarray(x_samples, dtype=float))
    sup_B = np.array([field_magnitude(field, t, x_samples).max() for t in t_grid])
    sup_b = np.array([np.linalg.norm(field.b(t, x_samples), axis=1).max() for t in t_grid])
    bound = field.decay_envelope(t_grid)
    worst = np.maximum(sup_B, sup_b)
    with np.errstate(divide="ignore"):
        margin = np.where(worst > 0, bound / np.where(worst > 0, worst, 1.0), np.inf)
    wm = float(np.min(margin))
    return HypothesisBReport(t_grid, sup_B, sup_b, bound, wm, bool(wm >= 1 - rtol), notes)


def lipschitz_estimate(field: MagneticFieldSpec, t_grid: np.ndarray, x_samples: np.ndarray, eps: float = 1e-6) -> float:
    """Sampled sup of |grad B| via central differences along coordinate axes."""
    if field.is_zero:
        return 0.0
    x_samples = np.atleast_2d(np.asarray(x_samples, dtype=float))
    best = 0.0
    for t in np.atleast_1d(t_grid):
        for k in range(field.dim):
            e = np.zeros(field.dim)
            e[k] = eps
            dB = (field.B(t, x_samples + e) - field.B(t, x_samples - e)) / (2 * eps)
            mag = np.abs(dB) if field.dim == 2 else np.linalg.norm(dB, axis=1)
            best = max(best, float(mag.max()))
    return best * math.sqrt(field.dim)


def sup_estimate(field: MagneticFieldSpec, t_grid: np.ndarray, x_samples: np.ndarray) -> float:
    x_samples = np.atleast_2d(np.asarray(x_samples, dtype=float))
    return max(float(field_magnitude(field, t, x_samples).max()) for t in np.atleast_1d(t_grid))
