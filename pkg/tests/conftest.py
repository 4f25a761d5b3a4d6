"""Shared fixtures and loop-built dense oracles.

The oracles below index cells and faces by hand and never call the
operators under test, so agreement with them is a genuine check.
"""

import numpy as np
import pytest

from clusterflow import Grid, ModelParams, bistable, monostable
from clusterflow.grid import VectorField


def cell_index(nx, j, i):
    return j * nx + i


def dense_gradient(nx, ny, hx, hy):
    """Rows: x-faces (ny, nx+1) then y-faces (ny+1, nx), both row-major."""
    nxf = ny * (nx + 1)
    G = np.zeros((nxf + (ny + 1) * nx, nx * ny))
    for j in range(ny):
        for i in range(1, nx):
            row = j * (nx + 1) + i
            G[row, cell_index(nx, j, i)] += 1 / hx
            G[row, cell_index(nx, j, i - 1)] -= 1 / hx
    for j in range(1, ny):
        for i in range(nx):
            row = nxf + j * nx + i
            G[row, cell_index(nx, j, i)] += 1 / hy
            G[row, cell_index(nx, j - 1, i)] -= 1 / hy
    return G


def dense_divergence(nx, ny, hx, hy):
    """Signed face differences, boundary faces included."""
    nxf = ny * (nx + 1)
    D = np.zeros((nx * ny, nxf + (ny + 1) * nx))
    for j in range(ny):
        for i in range(nx):
            c = cell_index(nx, j, i)
            D[c, j * (nx + 1) + i + 1] += 1 / hx
            D[c, j * (nx + 1) + i] -= 1 / hx
            D[c, nxf + (j + 1) * nx + i] += 1 / hy
            D[c, nxf + j * nx + i] -= 1 / hy
    return D


def dense_average(nx, ny):
    nxf = ny * (nx + 1)
    A = np.zeros((nxf + (ny + 1) * nx, nx * ny))
    for j in range(ny):
        for i in range(nx + 1):
            row = j * (nx + 1) + i
            if i == 0:
                A[row, cell_index(nx, j, 0)] = 1.0
            elif i == nx:
                A[row, cell_index(nx, j, nx - 1)] = 1.0
            else:
                A[row, cell_index(nx, j, i)] = A[row, cell_index(nx, j, i - 1)] = 0.5
    for j in range(ny + 1):
        for i in range(nx):
            row = nxf + j * nx + i
            if j == 0:
                A[row, cell_index(nx, 0, i)] = 1.0
            elif j == ny:
                A[row, cell_index(nx, ny - 1, i)] = 1.0
            else:
                A[row, cell_index(nx, j, i)] = A[row, cell_index(nx, j - 1, i)] = 0.5
    return A


def flatten(w: VectorField) -> np.ndarray:
    return np.concatenate([w.x.ravel(), w.y.ravel()])


def unflatten(v: np.ndarray, nx: int, ny: int) -> VectorField:
    n = ny * (nx + 1)
    return VectorField(v[:n].reshape(ny, nx + 1).copy(), v[n:].reshape(ny + 1, nx).copy())


def random_vector(grid: Grid, rng, no_flux=True) -> VectorField:
    w = VectorField(rng.normal(size=grid.xface_shape), rng.normal(size=grid.yface_shape))
    if no_flux:
        w.x[:, [0, -1]] = 0.0
        w.y[[0, -1], :] = 0.0
    return w


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def unit4():
    return Grid(1.0, 1.0, 4, 4)


@pytest.fixture
def bistable_params():
    return ModelParams(0.2, 0.1, 1.0, bistable(0.25))


@pytest.fixture
def monostable_params():
    return ModelParams(0.2, 0.1, 1.0, monostable())


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
