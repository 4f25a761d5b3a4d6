"""Symmetric positive definite systems on tensor-product grids.

Both the velocity components and the implicit diffusion step reduce to
``(I - c * L) x = b`` with ``L`` a five-point Laplacian assembled as a
Kronecker sum of 1D second-difference matrices.  Two backends are kept:
a banded Cholesky factorization (cached) and a Jacobi-preconditioned
conjugate gradient iteration.  Each is the test oracle for the other.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg
import scipy.sparse as sp

BACKENDS = ("direct", "iterative")


class SolverError(RuntimeError):
    """A linear solve did not reach its tolerance."""

    def __init__(self, message: str, residual: float = float("nan"), iterations: int = 0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


def second_difference(n: int, h: float, closure: str) -> sp.csr_matrix:
    """1D three-point second difference on ``n`` unknowns.

    ``closure='neumann'`` mirrors the end values (zero normal derivative at
    a cell-centred boundary).  ``closure='dirichlet'`` treats the missing
    neighbours as pinned zeros located one spacing away.
    """
    main = np.full(n, -2.0)
    if closure == "neumann":
        main[0] = main[-1] = -1.0
    elif closure != "dirichlet":
        raise ValueError(f"unknown closure {closure!r}")
    off = np.ones(n - 1)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr") / (h * h)


class ShiftedLaplacian:
    """The SPD matrix ``I - coef * (Lx (+) Ly)`` on an ``(my, mx)`` block.

    Unknowns are flattened row-major (y outer), so the matrix bandwidth is
    ``mx``.
    """

    def __init__(self, mx: int, my: int, hx: float, hy: float, xclosure: str, yclosure: str, coef: float):
        if coef < 0:
            raise ValueError(f"shift coefficient must be nonnegative, got {coef}")
        self.mx, self.my, self.coef = mx, my, coef
        lap = sp.kron(sp.identity(my), second_difference(mx, hx, xclosure)) + sp.kron(
            second_difference(my, hy, yclosure), sp.identity(mx)
        )
        self.laplacian = lap.tocsr()
        self.matrix = (sp.identity(mx * my) - coef * self.laplacian).tocsr()
        self.diagonal = self.matrix.diagonal()
        self._factor = None

    @property
    def size(self) -> int:
        return self.mx * self.my

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x

    def banded_upper(self) -> np.ndarray:
        """Upper banded storage ``ab[bw + i - j, j] = A[i, j]`` for LAPACK."""
        bw = self.mx if self.my > 1 else 1
        n = self.size
        ab = np.zeros((bw + 1, n))
        for k in range(bw + 1):
            if k < n:
                ab[bw - k, k:] = self.matrix.diagonal(k)
        return ab

    def factor(self):
        if self._factor is None:
            self._factor = scipy.linalg.cholesky_banded(self.banded_upper(), lower=False)
        return self._factor

    def solve(self, b: np.ndarray, tol: float, backend: str = "direct", max_iter: int | None = None, x0=None):
        """Solve to ``||A x - b||_2 <= tol * ||b||_2``.

        Returns ``(x, iterations, residual_norm)``; raises :class:`SolverError`
        when the tolerance is missed.
        """
        bnorm = float(np.linalg.norm(b))
        if bnorm == 0.0:
            return np.zeros_like(b), 0, 0.0
        if backend == "direct":
            x = scipy.linalg.cho_solve_banded((self.factor(), False), b)
            iterations = 1
        elif backend == "iterative":
            x, iterations = pcg(self.matvec, b, self.diagonal, tol, max_iter or 20 * self.size, x0)
        else:
            raise ValueError(f"unknown backend {backend!r}; choose from {BACKENDS}")
        res = float(np.linalg.norm(self.matvec(x) - b))
        if not res <= tol * bnorm:
            raise SolverError(
                f"{backend} solve missed tolerance: residual {res:.3e} > {tol:.1e} * {bnorm:.3e}",
                residual=res,
                iterations=iterations,
            )
        return x, iterations, res


def pcg(matvec, b: np.ndarray, diagonal: np.ndarray, tol: float, max_iter: int, x0=None):
    """Jacobi-preconditioned conjugate gradients.

    Stops on the true-residual criterion ``||r|| <= tol * ||b||``.
    """
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - matvec(x)
    target = tol * float(np.linalg.norm(b))
    inv_diag = 1.0 / diagonal
    z = inv_diag * r
    p = z.copy()
    rz = float(r @ z)
    for k in range(1, max_iter + 1):
        if float(np.linalg.norm(r)) <= target:
            r = b - matvec(x)
            if float(np.linalg.norm(r)) <= target:
                return x, k - 1
            # recursive residual drifted; restart from the true one
            z = inv_diag * r
            p = z.copy()
            rz = float(r @ z)
        ap = matvec(p)
        alpha = rz / float(p @ ap)
        x += alpha * p
        r -= alpha * ap
        z = inv_diag * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    r = b - matvec(x)
    if float(np.linalg.norm(r)) <= target:
        return x, max_iter
    raise SolverError(
        f"conjugate gradients did not converge in {max_iter} iterations",
        residual=float(np.linalg.norm(b - matvec(x))),
        iterations=max_iter,
    )
