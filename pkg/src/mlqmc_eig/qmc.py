"""Randomly shifted rank-1 lattice rules and point-set diagnostics.

Lattice points are generated in exact integer arithmetic as
``t_k = ((k * z) mod N) / N`` for a generating vector ``z`` whose
components are odd, so the point sets are nested across N = 2^m
(the N-point rule is exactly the even-index half of the 2N-point rule).
Shifted points are recentered to [-1/2, 1/2)^s before they are used as
coefficient parameters.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

BUILTIN_VECTOR_NAME = "lattice-182667-1024-1048576.256"

# diagnostic-only limits for the brute-force star discrepancy
_DISC_MAX_DIM = 3
_DISC_MAX_POINTS = 64


@dataclass(frozen=True)
class GeneratingVector:
    """Generating vector of a base-2 embedded rank-1 lattice rule.

    All components must be odd and strictly between 0 and ``n_max`` so
    that the rule is usable (and nested) for every N = 2^m <= n_max.
    """

    z: np.ndarray
    n_max: int
    label: str = ""

    def __post_init__(self):
        z = np.asarray(self.z, dtype=np.int64)
        z.setflags(write=False)
        object.__setattr__(self, "z", z)
        if z.ndim != 1 or z.size == 0:
            raise ValueError("generating vector must be a non-empty 1-d integer array")
        if self.n_max < 2 or self.n_max & (self.n_max - 1):
            raise ValueError(f"n_max must be a power of 2, got {self.n_max}")
        if np.any(z <= 0) or np.any(z >= self.n_max):
            raise ValueError("components must lie strictly between 0 and n_max")
        if np.any(z % 2 == 0):
            raise ValueError("components of a base-2 embedded rule must be odd")

    def __len__(self):
        return self.z.size

    def components(self, dim: int) -> np.ndarray:
        if dim < 1 or dim > len(self):
            raise ValueError(
                f"requested dimension {dim} not available (vector has {len(self)})"
            )
        return self.z[:dim]


def load_generating_vector(path, min_dimension: int | None = None,
                           n_max: int | None = None) -> GeneratingVector:
    """Parse a plain-text generating vector: one integer per line.

    Lines starting with '#' are ignored.  ``n_max`` is taken from the
    conventional file name ``lattice-<id>-<minN>-<maxN>.<dims>`` when not
    given explicitly.
    """
    path = Path(path)
    values = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            values.append(int(line))
        except ValueError:
            raise ValueError(f"{path}:{lineno}: not an integer: {line!r}") from None
    if not values:
        raise ValueError(f"{path}: no vector components found")
    if min_dimension is not None and len(values) < min_dimension:
        raise ValueError(
            f"{path}: has {len(values)} components, need at least {min_dimension}"
        )
    if n_max is None:
        m = re.match(r"lattice-\d+-\d+-(\d+)", path.name)
        if m is None:
            raise ValueError(
                f"{path}: cannot infer max N from file name; pass n_max explicitly"
            )
        n_max = int(m.group(1))
    return GeneratingVector(np.array(values, dtype=np.int64), n_max, label=path.name)


def default_generating_vector(min_dimension: int | None = None) -> GeneratingVector:
    """Load the generating vector bundled with the package."""
    ref = resources.files("mlqmc_eig").joinpath("data", BUILTIN_VECTOR_NAME)
    with resources.as_file(ref) as path:
        return load_generating_vector(path, min_dimension=min_dimension)


def _check_n(z: GeneratingVector, n: int):
    if n < 1 or n & (n - 1):
        raise ValueError(f"N must be a power of 2, got {n}")
    if n > z.n_max:
        raise ValueError(f"N={n} exceeds the vector's supported maximum {z.n_max}")


def lattice_point(z: GeneratingVector, n: int, k: int, dim: int | None = None) -> np.ndarray:
    """k-th point of the N-point rule, in [0,1)^dim, exact integer arithmetic."""
    _check_n(z, n)
    if not 0 <= k < n:
        raise ValueError(f"point index k={k} outside [0, {n})")
    zz = z.components(dim) if dim is not None else z.z
    return ((k * zz) % n) / n


def lattice_points(z: GeneratingVector, n: int, dim: int) -> np.ndarray:
    """All N points of the rule as an (N, dim) array in [0,1)^dim."""
    _check_n(z, n)
    zz = z.components(dim)
    k = np.arange(n, dtype=np.int64)[:, None]
    return ((k * zz[None, :]) % n) / n


def shift_and_center(t: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """Apply a random shift modulo 1 and recenter: {t + delta} - 1/2."""
    t = np.asarray(t, dtype=float)
    delta = np.asarray(delta, dtype=float)
    return np.mod(t + delta, 1.0) - 0.5


@dataclass(frozen=True)
class ShiftSet:
    """Reproducible uniform random shifts, one stream per (level, shift).

    With ``shared=True`` the same shifts are reused on every level (the
    streams are keyed by the shift index only), which trades strict
    independence across levels for nested-point reuse.
    """

    seed: int
    n_shifts: int
    shared: bool = False

    def __post_init__(self):
        if self.n_shifts < 1:
            raise ValueError("need at least one shift")

    def shift(self, level: int, r: int, dim: int) -> np.ndarray:
        if not 0 <= r < self.n_shifts:
            raise ValueError(f"shift index {r} outside [0, {self.n_shifts})")
        key = (r,) if self.shared else (level, r)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=key)
        return np.random.default_rng(ss).random(dim)

    def shifts_for_level(self, level: int, dim: int) -> np.ndarray:
        return np.stack([self.shift(level, r, dim) for r in range(self.n_shifts)])


def shift_average_and_variance(per_shift_estimates) -> tuple[float, float]:
    """Shift-averaged estimate and the sample variance of that average.

    variance = 1/(R(R-1)) * sum_r (mean - Q_r)^2, the usual unbiased
    estimate of the variance of the mean over R independent shifts.
    """
    q = np.asarray(per_shift_estimates, dtype=float)
    r = q.size
    if r < 2:
        raise ValueError("need at least 2 shifts to estimate a variance")
    mean = q.mean()
    var = float(np.sum((mean - q) ** 2) / (r * (r - 1)))
    return float(mean), var


def max_nn_distance(points: np.ndarray) -> float:
    """Largest l-infinity distance from any point to its nearest neighbour."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[0] < 2:
        raise ValueError("need at least 2 points")
    tree = cKDTree(pts)
    dist, _ = tree.query(pts, k=2, p=np.inf)
    return float(dist[:, 1].max())


def star_discrepancy_bruteforce(points: np.ndarray) -> float:
    """Star discrepancy by exhaustive search over candidate box corners.

    Candidate corners are taken from the coordinate grid of the points
    plus 1.0 in each axis; at each corner both the strict count (the
    value of the discrepancy function on [0, b)) and the non-strict
    count (its limit from above) are compared against the box volume,
    which captures the supremum over half-open boxes.  Deliberately
    restricted to tiny instances; this is a test diagnostic.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n, s = pts.shape
    if s > _DISC_MAX_DIM or n > _DISC_MAX_POINTS:
        raise ValueError(
            f"brute-force discrepancy limited to dimension {_DISC_MAX_DIM} "
            f"and {_DISC_MAX_POINTS} points"
        )
    if n < 1:
        raise ValueError("need at least one point")
    # per-axis candidate corners and point-below-corner indicators
    cands = [np.unique(np.concatenate([pts[:, j], [1.0]])) for j in range(s)]
    lt = [pts[:, j][None, :] < c[:, None] for j, c in enumerate(cands)]   # (Cj, n)
    le = [pts[:, j][None, :] <= c[:, None] for j, c in enumerate(cands)]
    best = 0.0
    if s == 1:
        strict = lt[0].sum(axis=1)
        nonstrict = le[0].sum(axis=1)
        vol = cands[0]
        best = max(np.abs(strict / n - vol).max(), np.abs(nonstrict / n - vol).max())
    else:
        import itertools

        for idx in itertools.product(*(range(len(c)) for c in cands)):
            in_strict = lt[0][idx[0]]
            in_nonstrict = le[0][idx[0]]
            vol = cands[0][idx[0]]
            for j in range(1, s):
                in_strict = in_strict & lt[j][idx[j]]
                in_nonstrict = in_nonstrict & le[j][idx[j]]
                vol *= cands[j][idx[j]]
            best = max(
                best,
                abs(in_strict.sum() / n - vol),
                abs(in_nonstrict.sum() / n - vol),
            )
    return float(best)
