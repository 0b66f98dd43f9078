"""Shifted sparse factorizations, inner products and Rayleigh quotients.

The two-grid update solves (A - sigma*M) x = b with sigma between the
two smallest eigenvalues, so the operator is symmetric indefinite with
one negative eigenvalue.  A sparse LU with partial pivoting (SuperLU,
COLAMD ordering) handles that robustly at desk scale; near-singular
factorizations are detected from the pivot magnitudes so callers can
nudge the shift.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

_PIVOT_RTOL = 1e-14


class SingularShiftError(RuntimeError):
    """(A - sigma*M) is singular to working tolerance at this shift."""


class FactorizedOperator:
    """Direct factorization of A - sigma*M, shareable across solves."""

    def __init__(self, A: sp.spmatrix, M: sp.spmatrix, sigma: float):
        if A.shape != M.shape or A.shape[0] != A.shape[1]:
            raise ValueError("A and M must be square matrices of equal size")
        self.sigma = float(sigma)
        self.n = A.shape[0]
        shifted = (A - self.sigma * M).tocsc()
        try:
            self._lu = splu(shifted)
        except RuntimeError as exc:   # exactly singular pivot
            raise SingularShiftError(
                f"factorization at shift {sigma:.17g} is singular: {exc}"
            ) from None
        pivots = np.abs(self._lu.U.diagonal())
        pivot_max = pivots.max()
        self.singularity = float(pivots.min() / pivot_max) if pivot_max > 0 else 0.0
        if pivot_max == 0.0 or self.singularity < _PIVOT_RTOL:
            raise SingularShiftError(
                f"shift {sigma:.17g} is singular to tolerance "
                f"(pivot ratio {self.singularity:.3e})"
            )

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if b.shape != (self.n,):
            raise ValueError(f"right-hand side must have length {self.n}")
        return self._lu.solve(b)


def factorize_shifted(A: sp.spmatrix, M: sp.spmatrix, sigma: float) -> FactorizedOperator:
    """Factorize A - sigma*M; raises SingularShiftError near eigenvalues."""
    return FactorizedOperator(A, M, sigma)


def m_inner(u: np.ndarray, v: np.ndarray, M: sp.spmatrix) -> float:
    """Weighted inner product u^T M v."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape or u.shape != (M.shape[0],):
        raise ValueError("dimension mismatch in m_inner")
    return float(u @ (M @ v))


def m_norm(u: np.ndarray, M: sp.spmatrix) -> float:
    return float(np.sqrt(m_inner(u, u, M)))


def rayleigh_quotient(A: sp.spmatrix, M: sp.spmatrix, u: np.ndarray) -> float:
    """(u^T A u) / (u^T M u); invariant under rescaling of u."""
    u = np.asarray(u, dtype=float)
    den = m_inner(u, u, M)
    if den == 0.0:
        raise ValueError("Rayleigh quotient of the zero vector")
    return float(u @ (A @ u)) / den
