"""Single-level and multilevel MC/QMC estimators of the expected eigenvalue.

The multilevel estimator telescopes E[lambda_L] over a hierarchy of
meshes (and optionally truncation dimensions), computing each level
expectation with a shift-averaged rank-1 lattice rule.  Per sample the
two-grid update replaces the fine eigensolve by one shifted solve, and
within each (level, shift) stream the eigensolver is warm-started from
the previous lattice point, so the points must be visited in order.
Streams are independent of each other and are reduced in a fixed order,
which keeps estimates reproducible under parallel execution.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, asdict
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .eigensolver import (
    Eigenpair,
    SolveStats,
    smallest_eigenpair,
    smallest_eigenpair_cold,
    two_grid_fine_update,
)
from .mesh_fem import (
    TriMesh,
    basis_integrals,
    build_uniform_mesh,
    mass_interior,
    stiffness_interior,
)
from .problems import CoefficientSeries
from .qmc import (
    GeneratingVector,
    ShiftSet,
    lattice_point,
    shift_and_center,
    shift_average_and_variance,
)

# work units per linear solve / factorization, in units of matrix dimension;
# factorizations dominate, so they get a fixed heavier weight
_FACTOR_WORK = 4.0


class MaxLevelExceededError(RuntimeError):
    """The adaptive driver hit the level cap before meeting the bias test."""


@dataclass(frozen=True)
class LevelParams:
    """Discretisation parameters of one telescoping level.

    Level ell uses meshwidth h = 2^-mesh_exponent and truncation s; the
    two-grid eigensolve runs on the coarse pair (2^-coarse_exponent,
    coarse_s).  prev_s is the truncation of level ell-1 in the same
    hierarchy (used for the second term of the difference).
    """

    ell: int
    mesh_exponent: int
    s: int
    coarse_exponent: int
    coarse_s: int
    n_points: int
    prev_s: int | None = None

    def __post_init__(self):
        if self.n_points < 1 or self.n_points & (self.n_points - 1):
            raise ValueError("points per shift must be a power of 2")
        if self.coarse_exponent > self.mesh_exponent:
            raise ValueError("coarse mesh must not be finer than the level mesh")
        if self.coarse_s > self.s:
            raise ValueError("coarse truncation must not exceed the level truncation")
        if self.ell > 0 and self.prev_s is None:
            raise ValueError("levels above 0 need the previous level's truncation")

    @property
    def h(self) -> float:
        return 2.0 ** -self.mesh_exponent

    @property
    def coarse_h(self) -> float:
        return 2.0 ** -self.coarse_exponent


def truncation_dimension(ell: int, s: int, s_policy: str, s0: int) -> int:
    """s_ell for the chosen policy: fixed s, or s0 * 2^ell capped at s."""
    if s_policy == "fixed":
        return s
    if s_policy == "geometric":
        return min(s, s0 * 2 ** ell)
    raise ValueError(f"unknown truncation policy {s_policy!r}")


def level_params(ell: int, n_points: int, s: int = 64, s_policy: str = "fixed",
                 base_exponent: int = 3, s0: int = 4) -> LevelParams:
    """Level parameters following the coarse-pair rules H = min(h^(1/4), h0),
    S = ceil(sqrt(s)) (floored at s0 for growing truncations)."""
    m = base_exponent + ell
    s_ell = truncation_dimension(ell, s, s_policy, s0)
    # coarsest mesh in the family with meshwidth <= h^(1/4), capped at h0
    coarse_exp = max(base_exponent, math.ceil(m / 4))
    coarse_s = math.isqrt(s_ell - 1) + 1 if s_ell > 1 else 1   # ceil(sqrt(s_ell))
    if s_policy == "geometric":
        coarse_s = max(coarse_s, min(s0, s_ell))
    coarse_s = min(coarse_s, s_ell)
    prev_s = None
    if ell > 0:
        prev_s = truncation_dimension(ell - 1, s, s_policy, s0)
    return LevelParams(
        ell=ell,
        mesh_exponent=m,
        s=s_ell,
        coarse_exponent=coarse_exp,
        coarse_s=coarse_s,
        n_points=n_points,
        prev_s=prev_s,
    )


def default_levels(n_per_level, s: int = 64, s_policy: str = "fixed",
                   base_exponent: int = 3, s0: int = 4) -> list[LevelParams]:
    return [
        level_params(ell, n, s=s, s_policy=s_policy, base_exponent=base_exponent, s0=s0)
        for ell, n in enumerate(n_per_level)
    ]


@dataclass(frozen=True)
class EstimatorOptions:
    """Feature switches of the enhanced multilevel estimator."""

    two_grid: bool = True
    warm_start: bool = True
    shared_shifts: bool = False
    rq_tol: float = 5e-8

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SampleRecord:
    """Work bookkeeping for a single telescoped sample."""

    delta: float
    coarse_rq_iterations: int = 0
    coarse_linear_solves: int = 0
    fine_linear_solves: int = 0
    factorizations: int = 0
    work_units: float = 0.0
    wall_time: float = 0.0


def _work(stats: SolveStats, dofs: int) -> float:
    return dofs * (stats.linear_solves + _FACTOR_WORK * stats.factorizations)


def _dofs(mesh: TriMesh) -> int:
    return mesh.n_interior


def sample_eigenvalue_direct(problem: CoefficientSeries, level: LevelParams, y,
                             rq_tol: float = 5e-8) -> tuple[float, SolveStats]:
    """Plain eigenvalue sample at (h_ell, s_ell) via the safeguarded cold solve."""
    y = np.asarray(getattr(y, "values", y), dtype=float)
    mesh = build_uniform_mesh(level.mesh_exponent)
    A = stiffness_interior(mesh, problem, y[:level.s])
    M = mass_interior(mesh, problem)
    pair, stats = smallest_eigenpair_cold(A, M, rq_tol)
    return pair.lam, stats


def sample_level_difference(problem: CoefficientSeries, level: LevelParams, y,
                            warm_state: Eigenpair | None = None,
                            two_grid: bool = True, rq_tol: float = 5e-8
                            ) -> tuple[float, Eigenpair | None, SampleRecord]:
    """One telescoped difference lambda^ell - lambda^(ell-1) at parameter y.

    For ell = 0 this is the direct eigenvalue at the coarsest level
    (warm-started when a previous pair is supplied).  For ell >= 1 one
    coarse eigensolve feeds two shifted fine solves, one per level of
    the difference; the returned coarse pair seeds the warm start of the
    next sample in the same stream.
    """
    t0 = time.perf_counter()
    y = np.asarray(getattr(y, "values", y), dtype=float)
    mesh = build_uniform_mesh(level.mesh_exponent)

    if level.ell == 0:
        A = stiffness_interior(mesh, problem, y[:level.s])
        M = mass_interior(mesh, problem)
        pair, stats = smallest_eigenpair(A, M, rq_tol, warm=warm_state)
        rec = SampleRecord(
            delta=pair.lam,
            coarse_rq_iterations=stats.rq_iterations,
            coarse_linear_solves=stats.linear_solves,
            factorizations=stats.factorizations,
            work_units=_work(stats, _dofs(mesh)) + level.s * mesh.n_elements,
            wall_time=time.perf_counter() - t0,
        )
        return pair.lam, pair, rec

    prev_mesh = build_uniform_mesh(level.mesh_exponent - 1)
    prev_s = level.prev_s

    if not two_grid:
        A_f = stiffness_interior(mesh, problem, y[:level.s])
        M_f = mass_interior(mesh, problem)
        pair_f, st_f = smallest_eigenpair_cold(A_f, M_f, rq_tol)
        A_p = stiffness_interior(prev_mesh, problem, y[:prev_s])
        M_p = mass_interior(prev_mesh, problem)
        pair_p, st_p = smallest_eigenpair_cold(A_p, M_p, rq_tol)
        delta = pair_f.lam - pair_p.lam
        rec = SampleRecord(
            delta=delta,
            coarse_rq_iterations=st_f.rq_iterations + st_p.rq_iterations,
            coarse_linear_solves=st_f.linear_solves + st_p.linear_solves,
            factorizations=st_f.factorizations + st_p.factorizations,
            work_units=_work(st_f, _dofs(mesh)) + _work(st_p, _dofs(prev_mesh))
            + level.s * mesh.n_elements + prev_s * prev_mesh.n_elements,
            wall_time=time.perf_counter() - t0,
        )
        return delta, None, rec

    coarse_mesh = build_uniform_mesh(level.coarse_exponent)
    A_c = stiffness_interior(coarse_mesh, problem, y[:level.coarse_s])
    M_c = mass_interior(coarse_mesh, problem)
    coarse_pair, c_stats = smallest_eigenpair(A_c, M_c, rq_tol, warm=warm_state)

    lam_f, _, f_stats = two_grid_fine_update(
        problem, y, coarse_mesh, coarse_pair, mesh, level.s
    )
    lam_p, _, p_stats = two_grid_fine_update(
        problem, y, coarse_mesh, coarse_pair, prev_mesh, prev_s
    )
    delta = lam_f - lam_p
    work = (
        _work(c_stats, _dofs(coarse_mesh))
        + _work(f_stats, _dofs(mesh))
        + _work(p_stats, _dofs(prev_mesh))
        + level.coarse_s * coarse_mesh.n_elements
        + level.s * mesh.n_elements
        + prev_s * prev_mesh.n_elements
    )
    rec = SampleRecord(
        delta=delta,
        coarse_rq_iterations=c_stats.rq_iterations,
        coarse_linear_solves=c_stats.linear_solves,
        fine_linear_solves=f_stats.linear_solves + p_stats.linear_solves,
        factorizations=c_stats.factorizations + f_stats.factorizations
        + p_stats.factorizations,
        work_units=work,
        wall_time=time.perf_counter() - t0,
    )
    return delta, coarse_pair, rec


@dataclass
class StreamResult:
    """Outcome of one (level, shift) stream of sequential lattice points."""

    estimate: float
    n_points: int
    coarse_rq_iterations: list = field(default_factory=list)
    coarse_linear_solves: int = 0
    fine_linear_solves: int = 0
    factorizations: int = 0
    work_units: float = 0.0
    wall_time: float = 0.0


def _run_stream(problem, level: LevelParams, z: GeneratingVector, shift: np.ndarray,
                options: EstimatorOptions) -> StreamResult:
    t0 = time.perf_counter()
    res = StreamResult(estimate=0.0, n_points=level.n_points)
    warm = None
    total = 0.0
    for k in range(level.n_points):
        t = lattice_point(z, level.n_points, k, dim=level.s)
        y = shift_and_center(t, shift)
        delta, warm_out, rec = sample_level_difference(
            problem, level, y,
            warm_state=warm if options.warm_start else None,
            two_grid=options.two_grid,
            rq_tol=options.rq_tol,
        )
        if options.warm_start:
            warm = warm_out
        total += delta
        res.coarse_rq_iterations.append(rec.coarse_rq_iterations)
        res.coarse_linear_solves += rec.coarse_linear_solves
        res.fine_linear_solves += rec.fine_linear_solves
        res.factorizations += rec.factorizations
        res.work_units += rec.work_units
    res.estimate = total / level.n_points
    res.wall_time = time.perf_counter() - t0
    return res


@dataclass
class LevelReport:
    """Per-level summary of the multilevel estimator."""

    ell: int
    h: float
    s: int
    coarse_h: float
    coarse_s: int
    n_points: int
    n_shifts: int
    per_shift: list
    q_hat: float
    variance: float
    cost_seconds: float
    linear_solves: int
    coarse_linear_solves: int
    factorizations: int
    rq_iterations_median: float
    work_units: float

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "LevelReport":
        return cls(**d)


CSV_LEVEL_COLUMNS = [
    "level", "h", "s", "H", "S", "N", "R",
    "Q_hat", "V", "cost_seconds", "solves", "rq_iters_median",
]


@dataclass
class MlqmcReport:
    """Full record of a multilevel (or single-level) estimator run."""

    kind: str
    problem: str
    seed: int
    n_shifts: int
    options: dict
    levels: list
    estimate: float
    total_variance: float
    total_cost_seconds: float
    total_linear_solves: int
    total_work_units: float
    tolerance: float | None = None
    tolerance_achieved: bool | None = None
    trajectory: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["levels"] = [lv.to_dict() if isinstance(lv, LevelReport) else lv
                       for lv in self.levels]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MlqmcReport":
        d = dict(d)
        d["levels"] = [LevelReport.from_dict(lv) for lv in d["levels"]]
        return cls(**d)

    def level_csv_rows(self) -> list[list]:
        rows = [list(CSV_LEVEL_COLUMNS)]
        for lv in self.levels:
            rows.append([
                lv.ell, repr(lv.h), lv.s, repr(lv.coarse_h), lv.coarse_s,
                lv.n_points, lv.n_shifts, repr(lv.q_hat), repr(lv.variance),
                repr(lv.cost_seconds), lv.linear_solves,
                repr(lv.rq_iterations_median),
            ])
        return rows


def _median(values) -> float:
    return float(np.median(values)) if len(values) else 0.0


def _level_report(level: LevelParams, streams: list[StreamResult],
                  n_shifts: int) -> LevelReport:
    per_shift = [s.estimate for s in streams]
    if n_shifts >= 2:
        q_hat, variance = shift_average_and_variance(per_shift)
    else:
        q_hat, variance = per_shift[0], float("nan")
    iters = [it for s in streams for it in s.coarse_rq_iterations]
    coarse = sum(s.coarse_linear_solves for s in streams)
    fine = sum(s.fine_linear_solves for s in streams)
    return LevelReport(
        ell=level.ell,
        h=level.h,
        s=level.s,
        coarse_h=level.coarse_h,
        coarse_s=level.coarse_s,
        n_points=level.n_points,
        n_shifts=n_shifts,
        per_shift=per_shift,
        q_hat=q_hat,
        variance=variance,
        cost_seconds=sum(s.wall_time for s in streams),
        linear_solves=coarse + fine,
        coarse_linear_solves=coarse,
        factorizations=sum(s.factorizations for s in streams),
        rq_iterations_median=_median(iters),
        work_units=sum(s.work_units for s in streams),
    )


def _finalize(kind: str, problem: CoefficientSeries, seed: int, n_shifts: int,
              options: EstimatorOptions, level_reports: list[LevelReport],
              **extra) -> MlqmcReport:
    return MlqmcReport(
        kind=kind,
        problem=problem.name,
        seed=seed,
        n_shifts=n_shifts,
        options=options.to_dict(),
        levels=level_reports,
        estimate=float(sum(lv.q_hat for lv in level_reports)),
        total_variance=float(sum(lv.variance for lv in level_reports)),
        total_cost_seconds=float(sum(lv.cost_seconds for lv in level_reports)),
        total_linear_solves=int(sum(lv.linear_solves for lv in level_reports)),
        total_work_units=float(sum(lv.work_units for lv in level_reports)),
        **extra,
    )


def _run_levels(problem, levels, z, shift_set, options, max_workers=1):
    """All (level, shift) streams, reduced in fixed order."""
    jobs = [(lv, r) for lv in levels for r in range(shift_set.n_shifts)]

    def run(job):
        lv, r = job
        shift = shift_set.shift(lv.ell, r, lv.s)
        return _run_stream(problem, lv, z, shift, options)

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]
    by_level = {}
    for (lv, r), res in zip(jobs, results):
        by_level.setdefault(lv.ell, []).append(res)
    return {lv.ell: _level_report(lv, by_level[lv.ell], shift_set.n_shifts)
            for lv in levels}


def mlqmc_estimate(problem: CoefficientSeries, levels: list[LevelParams],
                   n_shifts: int, z: GeneratingVector, seed: int,
                   options: EstimatorOptions = EstimatorOptions(),
                   max_workers: int = 1) -> MlqmcReport:
    """Shift-averaged multilevel QMC estimate of E[lambda] over fixed levels."""
    if n_shifts < 2:
        raise ValueError("need at least 2 random shifts for a variance estimate")
    shift_set = ShiftSet(seed, n_shifts, shared=options.shared_shifts)
    reports = _run_levels(problem, levels, z, shift_set, options, max_workers)
    ordered = [reports[lv.ell] for lv in levels]
    return _finalize("mlqmc", problem, seed, n_shifts, options, ordered)


def qmc_single_level(problem: CoefficientSeries, mesh_exponent: int, s: int,
                     n_points: int, n_shifts: int, z: GeneratingVector, seed: int,
                     options: EstimatorOptions = EstimatorOptions(),
                     max_workers: int = 1) -> MlqmcReport:
    """Single-level shift-averaged lattice estimator of E[lambda_{h,s}]."""
    level = LevelParams(
        ell=0, mesh_exponent=mesh_exponent, s=s,
        coarse_exponent=mesh_exponent, coarse_s=s, n_points=n_points,
    )
    if n_shifts < 2:
        raise ValueError("need at least 2 random shifts for a variance estimate")
    shift_set = ShiftSet(seed, n_shifts, shared=options.shared_shifts)
    reports = _run_levels(problem, [level], z, shift_set, options, max_workers)
    return _finalize("qmc", problem, seed, n_shifts, options, [reports[0]])


def mc_estimate(problem: CoefficientSeries, mesh_exponent: int, s: int,
                n_samples: int, seed: int, rq_tol: float = 5e-8) -> MlqmcReport:
    """Plain Monte Carlo with i.i.d. uniform parameters and cold eigensolves."""
    if n_samples < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(10001,)))
    level = LevelParams(
        ell=0, mesh_exponent=mesh_exponent, s=s,
        coarse_exponent=mesh_exponent, coarse_s=s, n_points=1,
    )
    t0 = time.perf_counter()
    values = np.empty(n_samples)
    solves = 0
    facts = 0
    work = 0.0
    mesh = build_uniform_mesh(mesh_exponent)
    for i in range(n_samples):
        y = rng.random(s) - 0.5
        lam, stats = sample_eigenvalue_direct(problem, level, y, rq_tol)
        values[i] = lam
        solves += stats.linear_solves
        facts += stats.factorizations
        work += _work(stats, _dofs(mesh)) + s * mesh.n_elements
    mean = float(values.mean())
    var_of_mean = float(values.var(ddof=1) / n_samples) if n_samples > 1 else float("nan")
    lv = LevelReport(
        ell=0, h=level.h, s=s, coarse_h=level.h, coarse_s=s,
        n_points=n_samples, n_shifts=1, per_shift=[mean],
        q_hat=mean, variance=var_of_mean,
        cost_seconds=time.perf_counter() - t0,
        linear_solves=solves, coarse_linear_solves=solves,
        factorizations=facts, rq_iterations_median=0.0, work_units=work,
    )
    return MlqmcReport(
        kind="mc", problem=problem.name, seed=seed, n_shifts=1,
        options=EstimatorOptions(two_grid=False, warm_start=False,
                                 rq_tol=rq_tol).to_dict(),
        levels=[lv], estimate=mean, total_variance=var_of_mean,
        total_cost_seconds=lv.cost_seconds, total_linear_solves=solves,
        total_work_units=work,
    )


def mc_standard_error(report: MlqmcReport) -> float:
    return math.sqrt(report.total_variance)


def mlmc_estimate(problem: CoefficientSeries, n_per_level: list[int], seed: int,
                  s: int = 64, s_policy: str = "fixed", s0: int = 4,
                  rq_tol: float = 5e-8) -> MlqmcReport:
    """Multilevel Monte Carlo with i.i.d. sampling and direct (cold) solves."""
    levels = default_levels(n_per_level, s=s, s_policy=s_policy, s0=s0)
    options = EstimatorOptions(two_grid=False, warm_start=False, rq_tol=rq_tol)
    level_reports = []
    for lv in levels:
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=seed, spawn_key=(10002, lv.ell))
        )
        t0 = time.perf_counter()
        deltas = np.empty(lv.n_points)
        res = StreamResult(estimate=0.0, n_points=lv.n_points)
        for i in range(lv.n_points):
            y = rng.random(lv.s) - 0.5
            delta, _, rec = sample_level_difference(
                problem, lv, y, warm_state=None, two_grid=False, rq_tol=rq_tol
            )
            deltas[i] = delta
            res.coarse_rq_iterations.append(rec.coarse_rq_iterations)
            res.coarse_linear_solves += rec.coarse_linear_solves
            res.factorizations += rec.factorizations
            res.work_units += rec.work_units
        n = lv.n_points
        var_of_mean = float(deltas.var(ddof=1) / n) if n > 1 else float("nan")
        level_reports.append(LevelReport(
            ell=lv.ell, h=lv.h, s=lv.s, coarse_h=lv.coarse_h, coarse_s=lv.coarse_s,
            n_points=n, n_shifts=1, per_shift=[float(deltas.mean())],
            q_hat=float(deltas.mean()), variance=var_of_mean,
            cost_seconds=time.perf_counter() - t0,
            linear_solves=res.coarse_linear_solves,
            coarse_linear_solves=res.coarse_linear_solves,
            factorizations=res.factorizations,
            rq_iterations_median=_median(res.coarse_rq_iterations),
            work_units=res.work_units,
        ))
    return MlqmcReport(
        kind="mlmc", problem=problem.name, seed=seed, n_shifts=1,
        options=options.to_dict(), levels=level_reports,
        estimate=float(sum(lv.q_hat for lv in level_reports)),
        total_variance=float(sum(lv.variance for lv in level_reports)),
        total_cost_seconds=float(sum(lv.cost_seconds for lv in level_reports)),
        total_linear_solves=int(sum(lv.linear_solves for lv in level_reports)),
        total_work_units=float(sum(lv.work_units for lv in level_reports)),
    )


def adaptive_mlqmc(problem: CoefficientSeries, tolerance: float, n_shifts: int,
                   z: GeneratingVector, seed: int,
                   options: EstimatorOptions = EstimatorOptions(),
                   s: int = 64, s_policy: str = "fixed", s0: int = 4,
                   base_exponent: int = 3, max_level: int = 6,
                   n_initial: int = 16, bias_alpha: float = 2.0,
                   max_workers: int = 1) -> MlqmcReport:
    """Tolerance-driven multilevel QMC estimate of E[lambda].

    Starting from two levels with 16 points each, the driver doubles
    N on the level with the largest variance-per-work ratio until the
    total variance is below eps^2/2, then extends the hierarchy while
    the bias estimate |Q_L| / (2^alpha - 1) exceeds eps/sqrt(2).  The
    doubling decision uses the deterministic per-sample work counters,
    so identical inputs reproduce identical trajectories.
    """
    if tolerance <= 0.0:
        raise ValueError("tolerance must be positive")
    if n_shifts < 2:
        raise ValueError("need at least 2 random shifts")
    shift_set = ShiftSet(seed, n_shifts, shared=options.shared_shifts)
    trajectory = []

    def make_level(ell, n_points):
        return level_params(ell, n_points, s=s, s_policy=s_policy,
                            base_exponent=base_exponent, s0=s0)

    def evaluate(ell, n_points):
        lv = make_level(ell, n_points)
        report = _run_levels(problem, [lv], z, shift_set, options, max_workers)[ell]
        return lv, report

    state = {}
    n_level = {0: n_initial, 1: n_initial}
    for ell in (0, 1):
        state[ell] = evaluate(ell, n_level[ell])
        trajectory.append({"action": "add_level", "level": ell, "N": n_level[ell]})

    var_target = tolerance ** 2 / 2.0
    bias_target = tolerance / math.sqrt(2.0)
    bias_factor = 2.0 ** bias_alpha - 1.0

    while True:
        while True:
            total_var = sum(rep.variance for _, rep in state.values())
            if total_var <= var_target:
                break
            scores = []
            for ell in sorted(state):
                lv, rep = state[ell]
                unit_work = rep.work_units / (n_shifts * lv.n_points)
                scores.append(rep.variance / (unit_work * lv.n_points))
            star = sorted(state)[int(np.argmax(scores))]
            new_n = 2 * n_level[star]
            if new_n > z.n_max:
                raise RuntimeError(
                    f"level {star} needs more than the generating vector's "
                    f"maximum of {z.n_max} points"
                )
            n_level[star] = new_n
            state[star] = evaluate(star, new_n)
            trajectory.append({"action": "double", "level": star, "N": new_n})
        top = max(state)
        bias_estimate = abs(state[top][1].q_hat) / bias_factor
        if bias_estimate <= bias_target:
            break
        if top >= max_level:
            raise MaxLevelExceededError(
                f"bias {bias_estimate:.3e} > {bias_target:.3e} at the level cap "
                f"{max_level}"
            )
        new_ell = top + 1
        n_level[new_ell] = n_initial
        state[new_ell] = evaluate(new_ell, n_initial)
        trajectory.append({"action": "add_level", "level": new_ell, "N": n_initial})

    ordered = [state[ell][1] for ell in sorted(state)]
    report = _finalize("mlqmc", problem, seed, n_shifts, options, ordered,
                       tolerance=tolerance, tolerance_achieved=True,
                       trajectory=trajectory)
    return report


def functional_of_eigenfunction(u, mesh: TriMesh, kind: str = "mean_value") -> float:
    """Linear functional of the eigenfunction; currently the mean value.

    G(u) = integral of u over the domain, computed by weighting the
    nodal values with the unit-density mass matrix (exact for P1).
    Accepts an Eigenpair, an interior-DOF vector, or a full nodal vector.
    """
    if kind != "mean_value":
        raise ValueError(f"unknown functional kind {kind!r}")
    if isinstance(u, Eigenpair):
        u = u.u
    u = np.asarray(u, dtype=float)
    if u.shape == (mesh.n_interior,):
        full = mesh.embed(u)
    elif u.shape == (mesh.n_nodes,):
        full = u
    else:
        raise ValueError("vector length matches neither interior DOFs nor nodes")
    return float(basis_integrals(mesh) @ full)
