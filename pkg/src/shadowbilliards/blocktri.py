"""Block-tridiagonal linear algebra for discrete-action Hessians.

Symmetric systems with diagonal blocks A_i and superdiagonal coupling blocks
B_i (the subdiagonal is B_i^T). Dirichlet windows factor by block elimination;
cyclic systems (periodic chains carry a corner block) are assembled dense and
solved with a pivoted LU, which is exact and cheap at chain sizes used here.
"""

from __future__ import annotations

import warnings
from typing import List, Optional, Sequence

import numpy as np
import scipy.linalg as sla


class SingularBlockError(np.linalg.LinAlgError):
    """Block elimination hit a singular pivot block."""


class BlockTridiagonalFactor:
    """Block Thomas factorization of a symmetric block-tridiagonal matrix."""

    def __init__(self, A: Sequence[np.ndarray], B: Sequence[np.ndarray]):
        self.A = [np.asarray(a, dtype=float) for a in A]
        self.B = [np.asarray(b, dtype=float) for b in B]
        n = len(self.A)
        if len(self.B) != n - 1:
            raise ValueError("need one coupling block between consecutive diagonals")
        self.dims = [a.shape[0] for a in self.A]
        self._pivots = []
        D = self.A[0]
        for i in range(n):
            if i > 0:
                Bi = self.B[i - 1]
                D = self.A[i] - Bi.T @ self._solve_pivot(i - 1, Bi)
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("error", sla.LinAlgWarning)
                    self._pivots.append(sla.lu_factor(D))
            except (ValueError, np.linalg.LinAlgError, sla.LinAlgWarning) as exc:
                raise SingularBlockError(f"singular pivot at block {i}") from exc
            piv = self._pivots[-1]
            if not np.all(np.isfinite(piv[0])) or np.any(np.abs(np.diag(piv[0])) < 1e-300):
                raise SingularBlockError(f"singular pivot at block {i}")

    def _solve_pivot(self, i: int, rhs: np.ndarray) -> np.ndarray:
        return sla.lu_solve(self._pivots[i], rhs)

    def solve(self, rhs_blocks: Sequence[np.ndarray]) -> List[np.ndarray]:
        n = len(self.A)
        y = [np.asarray(r, dtype=float).copy() for r in rhs_blocks]
        for i in range(1, n):
            y[i] = y[i] - self.B[i - 1].T @ self._solve_pivot(i - 1, y[i - 1])
        x = [None] * n
        x[n - 1] = self._solve_pivot(n - 1, y[n - 1])
        for i in range(n - 2, -1, -1):
            x[i] = self._solve_pivot(i, y[i] - self.B[i] @ x[i + 1])
        return x


def assemble_dense(A: Sequence[np.ndarray], B: Sequence[np.ndarray],
                   corner: Optional[np.ndarray] = None) -> np.ndarray:
    """Dense symmetric matrix with optional cyclic corner block at (n-1, 0)."""
    dims = [a.shape[0] for a in A]
    offs = np.concatenate([[0], np.cumsum(dims)])
    N = offs[-1]
    M = np.zeros((N, N))
    for i, a in enumerate(A):
        M[offs[i]:offs[i + 1], offs[i]:offs[i + 1]] = a
    for i, b in enumerate(B):
        M[offs[i]:offs[i + 1], offs[i + 1]:offs[i + 2]] = b
        M[offs[i + 1]:offs[i + 2], offs[i]:offs[i + 1]] = b.T
    if corner is not None and len(A) > 2:
        M[offs[-2]:offs[-1], 0:dims[0]] = corner
        M[0:dims[0], offs[-2]:offs[-1]] = corner.T
    return M


def split_blocks(v: np.ndarray, dims: Sequence[int]) -> List[np.ndarray]:
    offs = np.concatenate([[0], np.cumsum(dims)])
    return [v[offs[i]:offs[i + 1]] for i in range(len(dims))]


def solve_window(A, B, rhs_blocks) -> List[np.ndarray]:
    """Solve a Dirichlet window system; block Thomas with dense fallback."""
    try:
        return BlockTridiagonalFactor(A, B).solve(rhs_blocks)
    except SingularBlockError:
        M = assemble_dense(A, B)
        rhs = np.concatenate([np.asarray(r, dtype=float) for r in rhs_blocks])
        x = np.linalg.solve(M, rhs)
        return split_blocks(x, [a.shape[0] for a in A])


def inverse_inf_norm(A, B) -> float:
    """Exact sup-norm of the inverse of a symmetric block-tridiagonal window.

    By symmetry the max row sum of |M^{-1}| equals the max over unit loads e_j
    of ||M^{-1} e_j||_1, so one factorization and N solves give the norm.
    """
    fac = BlockTridiagonalFactor(A, B)
    dims = fac.dims
    N = int(np.sum(dims))
    best = 0.0
    col = np.zeros(N)
    for j in range(N):
        col[:] = 0.0
        col[j] = 1.0
        x = fac.solve(split_blocks(col, dims))
        best = max(best, float(np.sum([np.sum(np.abs(xi)) for xi in x])))
    return best
