"""Uniform P1 triangulations of the unit square and parametric assembly.

Each mesh halves the unit square into ``n = 2^m`` intervals per side and
splits every cell along the bottom-left to top-right diagonal, so meshes
are nested and island boundaries at multiples of 1/8 stay mesh-aligned.
Element integrals use the 3-point edge-midpoint rule (exact for
quadratic integrands), and the stiffness matrix for a parameter ``y``
is assembled from per-term coefficient tables that are evaluated once
per (mesh, problem, truncation) and then combined with a single
mat-vec per sample, so the per-sample cost scales like s * h^-2.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .problems import CoefficientSeries

# basis values at the edge midpoints (p0+p1)/2, (p1+p2)/2, (p2+p0)/2
_PHI = np.array([
    [0.5, 0.5, 0.0],
    [0.0, 0.5, 0.5],
    [0.5, 0.0, 0.5],
])
_PHI_OUTER = np.einsum("qi,qj->qij", _PHI, _PHI)

# cached coefficient tables are kept only below this size (floats)
_TABLE_MAX_FLOATS = 2 ** 25
_COEFF_CHUNK = 2 ** 18


class CoefficientBoundError(ValueError):
    """A coefficient violated its positivity bound at a quadrature node."""


class TriMesh:
    """Uniform right-triangle mesh of (0,1)^2 with 2^m intervals per side.

    Nodes are ordered lexicographically by (row, column), i.e. index
    ``r*(n+1) + c`` sits at (c*h, r*h).  Every square cell is split into
    the two counterclockwise triangles (v00, v10, v11) and
    (v00, v11, v01), each of area h^2/2.
    """

    def __init__(self, level_exponent: int):
        if level_exponent < 1:
            raise ValueError(f"level exponent must be >= 1, got {level_exponent}")
        n = 1 << level_exponent
        if (n + 1) ** 2 >= 2 ** 31:
            raise ValueError(f"level exponent {level_exponent} overflows node indices")
        self.level_exponent = level_exponent
        self.n_per_side = n
        self.h = 1.0 / n

        cols, rows = np.meshgrid(np.arange(n + 1), np.arange(n + 1))
        self.nodes = np.column_stack([cols.ravel() * self.h, rows.ravel() * self.h])
        self.n_nodes = (n + 1) ** 2

        cell_r, cell_c = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        v00 = (cell_r * (n + 1) + cell_c).ravel()
        v10 = v00 + 1
        v01 = v00 + (n + 1)
        v11 = v01 + 1
        lower = np.column_stack([v00, v10, v11])
        upper = np.column_stack([v00, v11, v01])
        # interleave lower/upper per cell so element order follows the cells
        self.elements = np.column_stack([lower, upper]).reshape(-1, 3).astype(np.int64)
        self.n_elements = 2 * n * n

        r = self.nodes[:, 1] / self.h
        c = self.nodes[:, 0] / self.h
        self.is_boundary = (
            (np.rint(r) == 0) | (np.rint(r) == n) | (np.rint(c) == 0) | (np.rint(c) == n)
        )
        self.interior_nodes = np.flatnonzero(~self.is_boundary)
        self.n_interior = (n - 1) ** 2
        self.interior_index = np.full(self.n_nodes, -1, dtype=np.int64)
        self.interior_index[self.interior_nodes] = np.arange(self.n_interior)

    def __repr__(self):
        return f"TriMesh(m={self.level_exponent}, h=1/{self.n_per_side})"

    def element_coords(self) -> np.ndarray:
        return self.nodes[self.elements]

    def signed_areas(self) -> np.ndarray:
        p = self.element_coords()
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def embed(self, u_interior: np.ndarray) -> np.ndarray:
        """Extend an interior-DOF vector by zero boundary values."""
        u_interior = np.asarray(u_interior, dtype=float)
        if u_interior.shape != (self.n_interior,):
            raise ValueError("interior vector has wrong length")
        full = np.zeros(self.n_nodes)
        full[self.interior_nodes] = u_interior
        return full

    def restrict_vec(self, u_full: np.ndarray) -> np.ndarray:
        u_full = np.asarray(u_full, dtype=float)
        if u_full.shape != (self.n_nodes,):
            raise ValueError("nodal vector has wrong length")
        return u_full[self.interior_nodes]

    def dump(self, stream) -> None:
        """Plain-text listing: one node "x y" per line, then one element "i j k"."""
        for x, y in self.nodes:
            stream.write(f"{x:.17g} {y:.17g}\n")
        for i, j, k in self.elements:
            stream.write(f"{i} {j} {k}\n")


@lru_cache(maxsize=None)
def build_uniform_mesh(level_exponent: int) -> TriMesh:
    """Mesh with meshwidth h = 2^-m; repeated calls return the same object."""
    return TriMesh(level_exponent)


class _Geometry:
    """Per-mesh quadrature geometry and sparsity patterns."""

    def __init__(self, mesh: TriMesh):
        self.mesh = mesh
        p = mesh.element_coords()                       # (nel, 3, 2)
        self.area = mesh.h * mesh.h / 2.0
        # gradients of the three barycentric basis functions per element
        b = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=1)  # rows e1, e2
        det = b[:, 0, 0] * b[:, 1, 1] - b[:, 0, 1] * b[:, 1, 0]
        inv = np.empty_like(b)      # b^-1 = J^-T, J the reference-to-element map
        inv[:, 0, 0] = b[:, 1, 1]
        inv[:, 0, 1] = -b[:, 0, 1]
        inv[:, 1, 0] = -b[:, 1, 0]
        inv[:, 1, 1] = b[:, 0, 0]
        inv /= det[:, None, None]
        ref_grads = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
        grads = np.einsum("eab,ib->eia", inv, ref_grads)    # (nel, 3, 2)
        self.grad_dot = np.einsum("eia,eja->eij", grads, grads)
        self.quad_points = 0.5 * (p + np.roll(p, -1, axis=1))  # (nel, 3, 2)
        self.n_quad = 3 * mesh.n_elements
        self._patterns = {}

    def pattern(self, interior: bool):
        """CSR pattern plus the slot of each of the 9*nel local entries."""
        if interior not in self._patterns:
            mesh = self.mesh
            ele = mesh.elements
            rows = np.repeat(ele, 3, axis=1).ravel()
            cols = np.tile(ele, (1, 3)).ravel()
            if interior:
                rows = mesh.interior_index[rows]
                cols = mesh.interior_index[cols]
                keep = (rows >= 0) & (cols >= 0)
                rows, cols = rows[keep], cols[keep]
                dim = mesh.n_interior
            else:
                keep = slice(None)
                dim = mesh.n_nodes
            keys = rows * dim + cols
            unique_keys, slots = np.unique(keys, return_inverse=True)
            indices = (unique_keys % dim).astype(np.int32)
            indptr = np.zeros(dim + 1, dtype=np.int32)
            np.add.at(indptr, (unique_keys // dim) + 1, 1)
            indptr = np.cumsum(indptr, dtype=np.int32)
            self._patterns[interior] = (keep, slots, indices, indptr, dim)
        return self._patterns[interior]

    def assemble(self, cell_scalars: np.ndarray, quad_scalars: np.ndarray | None,
                 interior: bool) -> sp.csr_matrix:
        """Sum ``cell * grad_i.grad_j + (area/3) * quad_q * phi_i phi_j``."""
        vals = self.grad_dot * cell_scalars[:, None, None] if cell_scalars is not None \
            else np.zeros_like(self.grad_dot)
        if quad_scalars is not None:
            w = quad_scalars.reshape(-1, 3) * (self.area / 3.0)
            vals = vals + np.einsum("eq,qij->eij", w, _PHI_OUTER)
        keep, slots, indices, indptr, dim = self.pattern(interior)
        flat = vals.ravel()[keep] if interior else vals.ravel()
        data = np.bincount(slots, weights=flat, minlength=indices.size)
        return sp.csr_matrix((data, indices, indptr), shape=(dim, dim))


@lru_cache(maxsize=None)
def _geometry(mesh: TriMesh) -> _Geometry:
    return _Geometry(mesh)


class _CoefficientTables:
    """Values of every coefficient term at the quadrature nodes.

    Per-term tables are materialised when they fit in memory; otherwise
    the affine combination is evaluated on the fly in chunks.
    """

    def __init__(self, mesh: TriMesh, problem: CoefficientSeries, s: int):
        geo = _geometry(mesh)
        self.problem = problem
        self.s = s
        pts = geo.quad_points.reshape(-1, 2)
        self._pts = pts
        self.a0 = np.asarray(problem.a0(pts), dtype=float)
        self.b0 = np.asarray(problem.b0(pts), dtype=float) if problem.has_b else None
        self.c = np.asarray(problem.c(pts), dtype=float)
        cache_terms = s * pts.shape[0] <= _TABLE_MAX_FLOATS
        self.aj = None
        self.bj = None
        if cache_terms and s > 0:
            self.aj = np.stack([problem.a_term(j, pts) for j in range(1, s + 1)])
            if problem.has_b:
                self.bj = np.stack([problem.b_term(j, pts) for j in range(1, s + 1)])

    def _combine(self, base, terms, term_fn, y):
        out = base.copy()
        if self.s == 0:
            return out
        if terms is not None:
            out += y @ terms
            return out
        pts = self._pts
        for start in range(0, pts.shape[0], _COEFF_CHUNK):
            block = pts[start:start + _COEFF_CHUNK]
            acc = np.zeros(block.shape[0])
            for j in range(1, self.s + 1):
                if y[j - 1] != 0.0:
                    acc += y[j - 1] * term_fn(j, block)
            out[start:start + _COEFF_CHUNK] += acc
        return out

    def a_at_quad(self, y: np.ndarray) -> np.ndarray:
        return self._combine(self.a0, self.aj, self.problem.a_term, y)

    def b_at_quad(self, y: np.ndarray) -> np.ndarray | None:
        if not self.problem.has_b:
            return None
        return self._combine(self.b0, self.bj, self.problem.b_term, y)


@lru_cache(maxsize=32)
def _tables(mesh: TriMesh, problem: CoefficientSeries, s: int) -> _CoefficientTables:
    return _CoefficientTables(mesh, problem, s)


def _as_param_array(y) -> np.ndarray:
    values = getattr(y, "values", y)
    return np.atleast_1d(np.asarray(values, dtype=float))


def _stiffness(mesh: TriMesh, problem: CoefficientSeries, y, interior: bool):
    y = _as_param_array(y)
    geo = _geometry(mesh)
    tab = _tables(mesh, problem, y.size)
    a_q = tab.a_at_quad(y)
    if np.any(a_q <= 0.0):
        worst = float(a_q.min())
        raise CoefficientBoundError(
            f"{problem.name}: a(x, y) = {worst:g} <= 0 at a quadrature node"
        )
    cell = (geo.area / 3.0) * a_q.reshape(-1, 3).sum(axis=1)
    b_q = tab.b_at_quad(y)
    return geo.assemble(cell, b_q, interior)


def assemble_stiffness(mesh: TriMesh, problem: CoefficientSeries, y) -> sp.csr_matrix:
    """Stiffness matrix of the truncated bilinear form over all nodes.

    Entry (i, j) approximates the integral of
    a^s(x,y) grad(phi_i).grad(phi_j) + b^s(x,y) phi_i phi_j by the
    edge-midpoint rule; the truncation dimension is len(y).
    """
    return _stiffness(mesh, problem, y, interior=False)


def stiffness_interior(mesh: TriMesh, problem: CoefficientSeries, y) -> sp.csr_matrix:
    """Stiffness matrix restricted to interior DOFs (the eigenproblem operator)."""
    return _stiffness(mesh, problem, y, interior=True)


@lru_cache(maxsize=64)
def _mass(mesh: TriMesh, problem: CoefficientSeries, interior: bool) -> sp.csr_matrix:
    geo = _geometry(mesh)
    tab = _tables(mesh, problem, 0)
    if np.any(tab.c <= 0.0):
        raise CoefficientBoundError(
            f"{problem.name}: c(x) <= 0 at a quadrature node"
        )
    mat = geo.assemble(None, tab.c, interior)
    mat.data.setflags(write=False)
    return mat


def assemble_mass(mesh: TriMesh, problem: CoefficientSeries) -> sp.csr_matrix:
    """Mass matrix over all nodes; independent of y and cached per mesh."""
    return _mass(mesh, problem, False)


def mass_interior(mesh: TriMesh, problem: CoefficientSeries) -> sp.csr_matrix:
    return _mass(mesh, problem, True)


@lru_cache(maxsize=None)
def basis_integrals(mesh: TriMesh) -> np.ndarray:
    """Integral of every nodal basis function (row sums of the unit mass matrix)."""
    geo = _geometry(mesh)
    mat = geo.assemble(None, np.ones(geo.n_quad), interior=False)
    out = np.asarray(mat @ np.ones(mesh.n_nodes))
    out.setflags(write=False)
    return out


def restrict_interior(matrix: sp.spmatrix, mesh: TriMesh) -> sp.csr_matrix:
    """Restrict a full nodal matrix to the interior degrees of freedom."""
    if matrix.shape != (mesh.n_nodes, mesh.n_nodes):
        raise ValueError("matrix shape does not match the mesh")
    idx = mesh.interior_nodes
    return matrix.tocsr()[idx][:, idx]


def prolongate(u_coarse: np.ndarray, coarse: TriMesh, fine: TriMesh) -> np.ndarray:
    """Evaluate the coarse piecewise-linear function at the fine nodes.

    Both meshes must belong to the uniform family with the coarse
    intervals dividing the fine ones; the interpolation respects the
    diagonal split, so coarse functions are reproduced exactly.
    """
    u_coarse = np.asarray(u_coarse, dtype=float)
    if u_coarse.shape != (coarse.n_nodes,):
        raise ValueError("coarse vector has wrong length")
    if fine.n_per_side % coarse.n_per_side:
        raise ValueError(
            f"meshes are not nested: {coarse.n_per_side} does not divide "
            f"{fine.n_per_side}"
        )
    if fine.n_per_side == coarse.n_per_side:
        return u_coarse.copy()
    ratio = fine.n_per_side // coarse.n_per_side
    nf, nc = fine.n_per_side, coarse.n_per_side

    idx = np.arange(nf + 1)
    cell = np.minimum(idx // ratio, nc - 1)
    frac = idx / ratio - cell
    cell_c, cell_r = np.meshgrid(cell, cell)          # column/row cell index
    xi, eta = np.meshgrid(frac, frac)                 # local coords in the cell

    v00 = u_coarse[(cell_r * (nc + 1) + cell_c).ravel()]
    v10 = u_coarse[(cell_r * (nc + 1) + cell_c + 1).ravel()]
    v01 = u_coarse[((cell_r + 1) * (nc + 1) + cell_c).ravel()]
    v11 = u_coarse[((cell_r + 1) * (nc + 1) + cell_c + 1).ravel()]
    xi, eta = xi.ravel(), eta.ravel()

    lower = v00 * (1.0 - xi) + v10 * (xi - eta) + v11 * eta
    upper = v00 * (1.0 - eta) + v01 * (eta - xi) + v11 * xi
    return np.where(xi >= eta, lower, upper)
