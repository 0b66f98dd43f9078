"""Affine-in-y coefficient families for the random eigenvalue problem.

A coefficient series describes

    a(x, y) = a0(x) + sum_j y_j a_j(x),   b(x, y) = b0(x) + sum_j y_j b_j(x),

with y_j in [-1/2, 1/2], plus a fixed weight c(x) for the right-hand
bilinear form.  Evaluation is vectorised over points: every callable
accepts an (..., 2) array of coordinates and returns an (...,) array.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

Coefficient = Callable[[np.ndarray], np.ndarray]
TermFamily = Callable[[int, np.ndarray], np.ndarray]


def zeta(p: float, tol: float = 1e-10) -> float:
    """Riemann zeta(p) for p > 1 by partial summation with a tail correction.

    The tail sum_{j>n} j^-p is replaced by its Euler-Maclaurin estimate;
    n grows until the first neglected term is below ``tol``.
    """
    if p <= 1.0:
        raise ValueError(f"zeta requires p > 1, got {p}")
    n = 16
    while p * (p + 1) * (p + 2) * n ** (-p - 3) / 720.0 >= tol:
        n *= 2
    j = np.arange(1, n + 1, dtype=float)
    partial = float(np.sum(j ** (-p)))
    tail = n ** (1 - p) / (p - 1) - 0.5 * n ** (-p) + p * n ** (-p - 1) / 12.0
    return partial + tail


@dataclass(frozen=True, eq=False)
class CoefficientSeries:
    """Affine coefficient family with truncation metadata.

    ``a_term(j, x)`` evaluates a_j for j >= 1; ``b0``/``b_term`` are None
    when the problem has no reaction term.  ``a_min`` is a uniform lower
    bound on a(x, y) over all x and all y in the parameter box, and also
    a lower bound on c.
    """

    name: str
    a0: Coefficient
    a_term: TermFamily
    c: Coefficient
    a_min: float
    a_max: float
    decay: dict = field(default_factory=dict)
    b0: Coefficient | None = None
    b_term: TermFamily | None = None

    @property
    def has_b(self) -> bool:
        return self.b0 is not None or self.b_term is not None

    def a_values(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Truncated a(x, y) with truncation dimension len(y)."""
        x = np.asarray(x, dtype=float)
        out = np.asarray(self.a0(x), dtype=float).copy()
        for j, yj in enumerate(np.asarray(y, dtype=float), start=1):
            if yj != 0.0:
                out += yj * self.a_term(j, x)
        return out

    def b_values(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if not self.has_b:
            return np.zeros(x.shape[:-1])
        out = np.asarray(self.b0(x), dtype=float).copy()
        if self.b_term is not None:
            for j, yj in enumerate(np.asarray(y, dtype=float), start=1):
                if yj != 0.0:
                    out += yj * self.b_term(j, x)
        return out


@dataclass(frozen=True)
class ParamVector:
    """Point in the parameter box [-1/2, 1/2]^s."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if v.ndim != 1 or v.size == 0:
            raise ValueError("parameter vector must be 1-d and non-empty")
        if np.any(np.abs(v) > 0.5):
            raise ValueError("parameter entries must lie in [-1/2, 1/2]")

    @property
    def dimension(self) -> int:
        return self.values.size


def truncate(y: ParamVector, s_prime: int) -> ParamVector:
    """Keep the first s' entries (set the tail to zero, logically)."""
    if s_prime < 1:
        raise ValueError("truncation dimension must be >= 1")
    if s_prime > y.dimension:
        raise ValueError(f"cannot truncate to {s_prime} > dimension {y.dimension}")
    return ParamVector(y.values[:s_prime])


def _param_values(y) -> np.ndarray:
    if isinstance(y, ParamVector):
        return y.values
    return np.asarray(y, dtype=float)


def eval_coeffs(series: CoefficientSeries, x, y) -> tuple[float, float]:
    """Evaluate (a, b) at a single point x for parameter y; a must stay positive."""
    x = np.asarray(x, dtype=float)
    yv = _param_values(y)
    a = series.a_values(x, yv)
    b = series.b_values(x, yv)
    if np.any(a <= 0.0):
        raise ValueError(
            f"{series.name}: coefficient a non-positive at x={x} (configuration error)"
        )
    if x.ndim == 1:
        return float(a), float(b)
    return a, b


def problem1(p_tilde: float = 2.0) -> CoefficientSeries:
    """Pure diffusion on the unit square with smooth oscillatory modes.

    a_j(x) = j^-p * sin(j pi x1) sin((j+1) pi x2), b = 0, c = 1.  The
    mean field is 1 for p >= 2 and pi/sqrt(2) for slower decay, which
    keeps a(x, y) >= a_min = a0 - zeta(p)/2 > 0 on the parameter box.
    """
    if p_tilde < 4.0 / 3.0:
        raise ValueError(f"decay exponent must be >= 4/3, got {p_tilde}")
    a0_val = 1.0 if p_tilde >= 2.0 else math.pi / math.sqrt(2.0)
    half_zeta = 0.5 * zeta(p_tilde)
    a_min = a0_val - half_zeta
    if a_min <= 0.0:
        raise ValueError(f"decay {p_tilde} gives a_min = {a_min} <= 0")

    def a0(x):
        x = np.asarray(x, dtype=float)
        return np.full(x.shape[:-1], a0_val)

    def a_term(j, x):
        x = np.asarray(x, dtype=float)
        return j ** (-p_tilde) * np.sin(j * np.pi * x[..., 0]) * np.sin(
            (j + 1) * np.pi * x[..., 1]
        )

    def c(x):
        x = np.asarray(x, dtype=float)
        return np.ones(x.shape[:-1])

    return CoefficientSeries(
        name=f"problem1(p={p_tilde:g})",
        a0=a0,
        a_term=a_term,
        c=c,
        a_min=a_min,
        a_max=a0_val + half_zeta,
        decay={"p_tilde": p_tilde},
    )


# the four islands: closed squares, boundaries aligned with meshes of h <= 1/8
_ISLANDS = (
    (0.125, 0.375, 0.125, 0.375),
    (0.625, 0.875, 0.125, 0.375),
    (0.125, 0.375, 0.625, 0.875),
    (0.625, 0.875, 0.625, 0.875),
)

_SIGMA_A, _SIGMA_A_OUT = 0.01, 0.011
_SIGMA_B, _SIGMA_B_OUT = 2.0, 0.3


def island_mask(x: np.ndarray) -> np.ndarray:
    """Closed-set membership of the four-island subdomain."""
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    mask = np.zeros(x.shape[:-1], dtype=bool)
    for lo1, hi1, lo2, hi2 in _ISLANDS:
        mask |= (x1 >= lo1) & (x1 <= hi1) & (x2 >= lo2) & (x2 <= hi2)
    return mask


def _island_mode(k: int, q: float, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return (
        k ** (-q)
        * np.sin(8 * k * np.pi * x[..., 0])
        * np.sin(8 * (k + 1) * np.pi * x[..., 1])
    )


def problem2(p_a: float = 2.0, p_a_out: float = 2.0,
             p_b: float = 2.0, p_b_out: float = 2.0) -> CoefficientSeries:
    """Diffusion/reaction problem with four interior islands.

    The mean coefficients jump across the islands; odd-indexed terms
    oscillate on the islands, even-indexed ones on the exterior, with
    separate decay exponents per region.  Whenever a decay exponent is
    below 2 the corresponding region's zeroth term is scaled by
    pi/sqrt(2) so the coefficient stays uniformly positive.
    """
    for name, p in (("p_a", p_a), ("p_a_out", p_a_out),
                    ("p_b", p_b), ("p_b_out", p_b_out)):
        if p < 4.0 / 3.0:
            raise ValueError(f"decay exponent {name} must be >= 4/3, got {p}")

    def scale(p):
        return math.pi / math.sqrt(2.0) if p < 2.0 else 1.0

    a0_in = _SIGMA_A * scale(p_a)
    a0_out = _SIGMA_A_OUT * scale(p_a_out)
    b0_in = _SIGMA_B * scale(p_b)
    b0_out = _SIGMA_B_OUT * scale(p_b_out)

    a_min = min(
        a0_in - _SIGMA_A * 0.5 * zeta(p_a),
        a0_out - _SIGMA_A_OUT * 0.5 * zeta(p_a_out),
    )
    if a_min <= 0.0:
        raise ValueError("island decays give a non-positive diffusion bound")
    b_min = min(
        b0_in - _SIGMA_B * 0.5 * zeta(p_b),
        b0_out - _SIGMA_B_OUT * 0.5 * zeta(p_b_out),
    )
    if b_min < 0.0:
        raise ValueError("island decays give a negative reaction bound")
    a_max = max(
        a0_in + _SIGMA_A * 0.5 * zeta(p_a),
        a0_out + _SIGMA_A_OUT * 0.5 * zeta(p_a_out),
    )

    def piecewise(val_in, val_out):
        def f(x):
            return np.where(island_mask(x), val_in, val_out)
        return f

    def a_term(j, x):
        if j % 2 == 1:
            vals = _SIGMA_A * _island_mode((j + 1) // 2, p_a, x)
            return np.where(island_mask(x), vals, 0.0)
        vals = _SIGMA_A_OUT * _island_mode(j // 2, p_a_out, x)
        return np.where(island_mask(x), 0.0, vals)

    def b_term(j, x):
        if j % 2 == 1:
            vals = _SIGMA_B * _island_mode((j + 1) // 2, p_b, x)
            return np.where(island_mask(x), vals, 0.0)
        vals = _SIGMA_B_OUT * _island_mode(j // 2, p_b_out, x)
        return np.where(island_mask(x), 0.0, vals)

    def c(x):
        x = np.asarray(x, dtype=float)
        return np.ones(x.shape[:-1])

    return CoefficientSeries(
        name=f"problem2(pa={p_a:g},pa'={p_a_out:g},pb={p_b:g},pb'={p_b_out:g})",
        a0=piecewise(a0_in, a0_out),
        a_term=a_term,
        c=c,
        a_min=a_min,
        a_max=a_max,
        decay={"p_a": p_a, "p_a_out": p_a_out, "p_b": p_b, "p_b_out": p_b_out},
        b0=piecewise(b0_in, b0_out),
        b_term=b_term,
    )


def make_problem(name: str, **params) -> CoefficientSeries:
    """Problem factory used by experiment configs."""
    if name == "problem1":
        return problem1(**params)
    if name == "problem2":
        return problem2(**params)
    raise ValueError(f"unknown problem {name!r} (expected problem1 or problem2)")
