"""Vector Helmholtz problem for the mollified velocity.

Solves ``-eps * Lap(w) + w = f`` on the rectangle with ``w . n = 0`` and
``d_n w x n = 0``.  On an axis-aligned rectangle the two conditions split
per component:

* x-faces (``n = +-e1``): ``w1 = 0`` and ``d_x w2 = 0``;
* y-faces (``n = +-e2``): ``w2 = 0`` and ``d_y w1 = 0``.

So each component is a scalar mixed Dirichlet/Neumann problem.  The normal
component lives on faces that sit exactly on the wall and is pinned there;
the tangential direction is closed with a mirror ghost value.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .grid import Grid, VectorField
from .linalg import BACKENDS, ShiftedLaplacian, SolverError

__all__ = [
    "BoundaryConditions",
    "HelmholtzOperator",
    "SolveReport",
    "SolverError",
    "component_gradient_energy",
    "component_laplacian",
    "cross",
    "decompose_boundary_conditions",
    "regularity_ratio",
    "solve_velocity",
]

DIRICHLET = "dirichlet"
NEUMANN = "neumann"
INTERIOR = "interior"


def cross(v, u) -> float:
    """Planar cross product ``v1 * u2 - u1 * v2``."""
    return v[0] * u[1] - u[0] * v[1]


@dataclass(frozen=True)
class BoundaryConditions:
    """Per-face condition tags for both velocity components.

    ``x`` has the x-face layout and ``y`` the y-face layout; entries are
    ``"dirichlet"`` (pinned to zero), ``"neumann"`` (mirror ghost closure
    across a wall parallel to the component) or ``"interior"``.
    """

    x: np.ndarray
    y: np.ndarray

    @property
    def x_pinned(self) -> np.ndarray:
        return self.x == DIRICHLET

    @property
    def y_pinned(self) -> np.ndarray:
        return self.y == DIRICHLET


def decompose_boundary_conditions(grid: Grid) -> BoundaryConditions:
    tx = np.full(grid.xface_shape, INTERIOR, dtype=object)
    tx[[0, -1], :] = NEUMANN
    tx[:, [0, -1]] = DIRICHLET
    ty = np.full(grid.yface_shape, INTERIOR, dtype=object)
    ty[:, [0, -1]] = NEUMANN
    ty[[0, -1], :] = DIRICHLET
    return BoundaryConditions(tx, ty)


def component_laplacian(grid: Grid, w: VectorField) -> VectorField:
    """Componentwise five-point Laplacian under the decomposed conditions.

    Pinned (boundary-normal) entries of the result are zero.
    """
    hx2, hy2 = grid.hx**2, grid.hy**2
    X, Y = w.x, w.y
    lx = np.zeros(grid.xface_shape)
    ly = np.zeros(grid.yface_shape)
    px = np.pad(X, ((1, 1), (0, 0)), mode="edge")
    lx[:, 1:-1] = (X[:, 2:] - 2 * X[:, 1:-1] + X[:, :-2]) / hx2 + (
        px[2:, 1:-1] - 2 * X[:, 1:-1] + px[:-2, 1:-1]
    ) / hy2
    py = np.pad(Y, ((0, 0), (1, 1)), mode="edge")
    ly[1:-1, :] = (Y[2:, :] - 2 * Y[1:-1, :] + Y[:-2, :]) / hy2 + (
        py[1:-1, 2:] - 2 * Y[1:-1, :] + py[1:-1, :-2]
    ) / hx2
    return VectorField(lx, ly)


def component_gradient_energy(grid: Grid, w: VectorField) -> float:
    """Discrete ``||grad w||_2^2`` summed over both components.

    Equals ``-<component_laplacian(w), w>_faces`` for fields with zero
    boundary-normal entries.
    """
    dxx = np.diff(w.x, axis=1) / grid.hx
    dxy = np.diff(w.x, axis=0) / grid.hy
    dyy = np.diff(w.y, axis=0) / grid.hy
    dyx = np.diff(w.y, axis=1) / grid.hx
    # the pinned columns/rows have no tangential differences
    s = np.sum(dxx**2) + np.sum(dxy[:, 1:-1] ** 2) + np.sum(dyy**2) + np.sum(dyx[1:-1, :] ** 2)
    return float(s * grid.cell_measure)


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    residual_norm: float
    regularity_ratio: float


def _threads() -> int:
    try:
        n = int(os.environ.get("CLUSTERFLOW_THREADS", "0"))
    except ValueError:
        n = 0
    return max(n, 0)


class HelmholtzOperator:
    """``I - eps * Lap_c`` assembled per component.

    Factorizations are built lazily and cached, so one operator can serve
    every time step of a run.
    """

    def __init__(self, grid: Grid, epsilon: float):
        if not epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {epsilon}")
        self.grid = grid
        self.epsilon = float(epsilon)
        self.bc = decompose_boundary_conditions(grid)
        nx, ny = grid.nx, grid.ny
        self.xsys = ShiftedLaplacian(nx - 1, ny, grid.hx, grid.hy, "dirichlet", "neumann", self.epsilon)
        self.ysys = ShiftedLaplacian(nx, ny - 1, grid.hx, grid.hy, "neumann", "dirichlet", self.epsilon)

    def apply(self, w: VectorField) -> VectorField:
        lap = component_laplacian(self.grid, w)
        out = VectorField(w.x - self.epsilon * lap.x, w.y - self.epsilon * lap.y)
        out.x[:, [0, -1]] = 0.0
        out.y[[0, -1], :] = 0.0
        return out

    def solve(
        self,
        f: VectorField,
        tol: float = 1e-10,
        backend: str = "direct",
        x0: VectorField | None = None,
        max_iter: int | None = None,
    ):
        """Return ``(w, iterations, residual_norm)`` with ``(I - eps Lap_c) w = f``.

        Only the unpinned entries of ``f`` enter; the pinned entries of ``w``
        are exactly zero.
        """
        if not tol > 0:
            raise ValueError(f"tol must be positive, got {tol}")
        if backend not in BACKENDS:
            raise ValueError(f"unknown backend {backend!r}; choose from {BACKENDS}")
        g = self.grid
        bx = np.ascontiguousarray(f.x[:, 1:-1]).ravel()
        by = np.ascontiguousarray(f.y[1:-1, :]).ravel()
        gx = gy = None
        if x0 is not None:
            gx = x0.x[:, 1:-1].ravel()
            gy = x0.y[1:-1, :].ravel()
        jobs = [(self.xsys, bx, gx), (self.ysys, by, gy)]
        if _threads() > 1:
            with ThreadPoolExecutor(max_workers=2) as pool:
                results = list(pool.map(lambda job: job[0].solve(job[1], tol, backend, max_iter, job[2]), jobs))
        else:
            results = [sysm.solve(b, tol, backend, max_iter, guess) for sysm, b, guess in jobs]
        (sx, itx, rx), (sy, ity, ry) = results
        w = g.zero_vector()
        w.x[:, 1:-1] = sx.reshape(g.ny, g.nx - 1)
        w.y[1:-1, :] = sy.reshape(g.ny - 1, g.nx)
        return w, max(itx, ity), float(np.hypot(rx, ry))


def regularity_ratio(omega: VectorField, f: VectorField, grid: Grid) -> float:
    """Discrete W^{2,2}-to-L^2 ratio ``||w||_{2,2} / ||f||_2``.

    The second-order part uses ``||w||^2 + ||grad w||^2 + ||Lap_c w||^2``.
    """
    fnorm = grid.face_l2(f)
    if fnorm == 0.0:
        raise ZeroDivisionError("regularity ratio undefined for f == 0")
    lap = component_laplacian(grid, omega)
    num = grid.face_inner(omega, omega) + component_gradient_energy(grid, omega) + grid.face_inner(lap, lap)
    return float(np.sqrt(num) / fnorm)


def solve_velocity(
    f: VectorField,
    eps: float,
    tol: float = 1e-10,
    *,
    grid: Grid | None = None,
    operator: HelmholtzOperator | None = None,
    backend: str = "direct",
    max_iter: int | None = None,
) -> tuple[VectorField, SolveReport]:
    """Solve ``-eps Lap w + w = f`` with the no-flux/tangential conditions.

    Pass a cached ``operator`` to reuse factorizations across calls.
    """
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if operator is None:
        if grid is None:
            raise ValueError("solve_velocity needs a grid or an operator")
        operator = HelmholtzOperator(grid, eps)
    elif operator.epsilon != eps:
        raise ValueError(f"operator built for eps={operator.epsilon}, asked for eps={eps}")
    grid = operator.grid
    grid.check_vector(f)
    if not f.is_finite():
        raise ValueError("forcing contains non-finite entries")
    omega, iterations, res = operator.solve(f, tol, backend, max_iter=max_iter)
    fnorm = grid.face_l2(f)
    ratio = regularity_ratio(omega, f, grid) if fnorm > 0 else 0.0
    return omega, SolveReport(iterations, res, ratio)
