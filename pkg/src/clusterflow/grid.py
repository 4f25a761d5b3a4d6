"""Rectangular staggered grid and its discrete operators.

Scalars live at cell centers as arrays of shape ``(ny, nx)`` (row-major,
y outer).  Vector fields live on faces: the x-component on the ``nx + 1``
vertical face columns, shape ``(ny, nx + 1)``, the y-component on the
``ny + 1`` horizontal face rows, shape ``(ny + 1, nx)``.

The gradient ``G`` and divergence ``D`` are built so that

    <G u, w>_faces = -<u, D w>_cells

holds exactly (to rounding) for every ``w`` whose boundary-normal entries
vanish.  All cells and faces carry the same quadrature weight ``hx * hy``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class GridError(ValueError):
    """Invalid grid construction or mismatched field shapes."""


class VectorField(NamedTuple):
    """Face-based vector field ``(x, y)``."""

    x: np.ndarray
    y: np.ndarray

    def __add__(self, other):  # type: ignore[override]
        return VectorField(self.x + other.x, self.y + other.y)

    def __sub__(self, other):
        return VectorField(self.x - other.x, self.y - other.y)

    def __mul__(self, other):  # type: ignore[override]
        if isinstance(other, VectorField):
            return VectorField(self.x * other.x, self.y * other.y)
        return VectorField(self.x * other, self.y * other)

    __rmul__ = __mul__

    def __neg__(self):
        return VectorField(-self.x, -self.y)

    def map(self, func) -> VectorField:
        return VectorField(func(self.x), func(self.y))

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.x).all() and np.isfinite(self.y).all())

    def boundary_normal_max(self) -> float:
        """Largest magnitude among the boundary-normal entries."""
        return float(
            max(
                np.abs(self.x[:, [0, -1]]).max(),
                np.abs(self.y[[0, -1], :]).max(),
            )
        )


@dataclass(frozen=True)
class Grid:
    """Uniform staggered grid on ``(0, lx) x (0, ly)``."""

    lx: float
    ly: float
    nx: int
    ny: int

    def __post_init__(self):
        if not (np.isfinite(self.lx) and self.lx > 0 and np.isfinite(self.ly) and self.ly > 0):
            raise GridError(f"domain extents must be positive, got lx={self.lx}, ly={self.ly}")
        if int(self.nx) != self.nx or int(self.ny) != self.ny or self.nx < 2 or self.ny < 2:
            raise GridError(f"need at least 2 cells per axis, got nx={self.nx}, ny={self.ny}")

    @property
    def hx(self) -> float:
        return self.lx / self.nx

    @property
    def hy(self) -> float:
        return self.ly / self.ny

    @property
    def cell_measure(self) -> float:
        return self.hx * self.hy

    @property
    def measure(self) -> float:
        return self.lx * self.ly

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def xface_shape(self) -> tuple[int, int]:
        return (self.ny, self.nx + 1)

    @property
    def yface_shape(self) -> tuple[int, int]:
        return (self.ny + 1, self.nx)

    @property
    def n_xfaces(self) -> int:
        return (self.nx + 1) * self.ny

    @property
    def n_yfaces(self) -> int:
        return self.nx * (self.ny + 1)

    @property
    def h2(self) -> float:
        """Squared largest spacing, the spatial error scale of the operators."""
        return max(self.hx, self.hy) ** 2

    # -- coordinates -------------------------------------------------------

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        x = (np.arange(self.nx) + 0.5) * self.hx
        y = (np.arange(self.ny) + 0.5) * self.hy
        return np.meshgrid(x, y)

    def xface_centers(self) -> tuple[np.ndarray, np.ndarray]:
        x = np.arange(self.nx + 1) * self.hx
        y = (np.arange(self.ny) + 0.5) * self.hy
        return np.meshgrid(x, y)

    def yface_centers(self) -> tuple[np.ndarray, np.ndarray]:
        x = (np.arange(self.nx) + 0.5) * self.hx
        y = np.arange(self.ny + 1) * self.hy
        return np.meshgrid(x, y)

    # -- field construction ------------------------------------------------

    def scalar(self, fill: float = 0.0) -> np.ndarray:
        return np.full(self.shape, float(fill))

    def zero_vector(self) -> VectorField:
        return VectorField(np.zeros(self.xface_shape), np.zeros(self.yface_shape))

    def check_scalar(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != self.shape:
            raise GridError(f"scalar field has shape {u.shape}, grid expects {self.shape}")
        return u

    def check_vector(self, w: VectorField) -> VectorField:
        if w.x.shape != self.xface_shape or w.y.shape != self.yface_shape:
            raise GridError(
                f"vector field has shapes {w.x.shape}/{w.y.shape}, "
                f"grid expects {self.xface_shape}/{self.yface_shape}"
            )
        return w

    # -- differential operators --------------------------------------------

    def gradient(self, u: np.ndarray) -> VectorField:
        """Face gradient; boundary-normal entries are zero."""
        gx = np.zeros(self.xface_shape)
        gy = np.zeros(self.yface_shape)
        gx[:, 1:-1] = (u[:, 1:] - u[:, :-1]) / self.hx
        gy[1:-1, :] = (u[1:, :] - u[:-1, :]) / self.hy
        return VectorField(gx, gy)

    def divergence(self, w: VectorField) -> np.ndarray:
        return (w.x[:, 1:] - w.x[:, :-1]) / self.hx + (w.y[1:, :] - w.y[:-1, :]) / self.hy

    def laplacian_neumann(self, u: np.ndarray) -> np.ndarray:
        return self.divergence(self.gradient(u))

    def face_average(self, u: np.ndarray) -> VectorField:
        """Arithmetic mean of the two cells adjacent to each face.

        Boundary faces copy their single neighbour.
        """
        ax = np.empty(self.xface_shape)
        ay = np.empty(self.yface_shape)
        ax[:, 1:-1] = 0.5 * (u[:, 1:] + u[:, :-1])
        ax[:, 0] = u[:, 0]
        ax[:, -1] = u[:, -1]
        ay[1:-1, :] = 0.5 * (u[1:, :] + u[:-1, :])
        ay[0, :] = u[0, :]
        ay[-1, :] = u[-1, :]
        return VectorField(ax, ay)

    def upwind_value(self, u: np.ndarray, w: VectorField) -> VectorField:
        """Cell value taken from the upstream side of each face (by sign of ``w``)."""
        ux = np.empty(self.xface_shape)
        uy = np.empty(self.yface_shape)
        ux[:, 1:-1] = np.where(w.x[:, 1:-1] >= 0.0, u[:, :-1], u[:, 1:])
        ux[:, 0] = u[:, 0]
        ux[:, -1] = u[:, -1]
        uy[1:-1, :] = np.where(w.y[1:-1, :] >= 0.0, u[:-1, :], u[1:, :])
        uy[0, :] = u[0, :]
        uy[-1, :] = u[-1, :]
        return VectorField(ux, uy)

    def node_curl(self, w: VectorField) -> np.ndarray:
        """Curl at the interior grid nodes, shape ``(ny - 1, nx - 1)``.

        Boundary nodes carry zero curl under the mirror closure of the
        tangential components, so they are omitted.
        """
        dwy_dx = (w.y[1:-1, 1:] - w.y[1:-1, :-1]) / self.hx
        dwx_dy = (w.x[1:, 1:-1] - w.x[:-1, 1:-1]) / self.hy
        return dwy_dx - dwx_dy

    # -- quadrature --------------------------------------------------------

    def integrate(self, u: np.ndarray) -> float:
        return float(np.sum(u) * self.cell_measure)

    def inner(self, u: np.ndarray, v: np.ndarray) -> float:
        return float(np.sum(u * v) * self.cell_measure)

    def face_inner(self, w: VectorField, z: VectorField) -> float:
        return float((np.sum(w.x * z.x) + np.sum(w.y * z.y)) * self.cell_measure)

    def lp_norm(self, u: np.ndarray, p: float) -> float:
        if not p >= 1:
            raise ValueError(f"lp_norm needs p >= 1, got {p}")
        if np.isinf(p):
            return linf_norm(u)
        return float((np.sum(np.abs(u) ** p) * self.cell_measure) ** (1.0 / p))

    def face_l2(self, w: VectorField) -> float:
        return self.face_inner(w, w) ** 0.5

    def face_lp(self, w: VectorField, p: float) -> float:
        """``(sum over all faces of |w|^p * hx * hy) ** (1/p)``."""
        if not p >= 1:
            raise ValueError(f"face_lp needs p >= 1, got {p}")
        s = np.sum(np.abs(w.x) ** p) + np.sum(np.abs(w.y) ** p)
        return float((s * self.cell_measure) ** (1.0 / p))

    def face_linf(self, w: VectorField) -> float:
        return float(max(np.abs(w.x).max(), np.abs(w.y).max()))


def build_grid(lx: float, ly: float, nx: int, ny: int) -> Grid:
    return Grid(float(lx), float(ly), nx, ny)


def linf_norm(u: np.ndarray) -> float:
    return float(np.abs(u).max())
