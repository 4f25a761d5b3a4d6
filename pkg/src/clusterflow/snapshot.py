"""ASCII field snapshots.

Scalar file::

    CLUSTERFLOW-SCALAR nx ny lx ly t
    <ny lines of nx values>

Vector file (x-component block, then y-component block)::

    CLUSTERFLOW-VECTOR nx+1 ny nx ny+1 lx ly t
    <ny lines of nx+1 values>
    <ny+1 lines of nx values>

Rows are y-outer; values carry 17 significant digits so a write/read
round trip is bit-exact.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grid import Grid, VectorField

SCALAR_TAG = "CLUSTERFLOW-SCALAR"
VECTOR_TAG = "CLUSTERFLOW-VECTOR"
_STEP_RE = re.compile(r"^u_(\d+)\.txt$")


class SnapshotError(ValueError):
    """Malformed snapshot header or body."""


@dataclass
class Snapshot:
    grid: Grid
    t: float
    values: np.ndarray | VectorField

    @property
    def is_vector(self) -> bool:
        return isinstance(self.values, VectorField)


def _rows(a: np.ndarray) -> str:
    return "".join(" ".join("%.17g" % v for v in row) + "\n" for row in a)


def write_scalar(path, grid: Grid, u: np.ndarray, t: float) -> None:
    u = grid.check_scalar(u)
    header = f"{SCALAR_TAG} {grid.nx} {grid.ny} {grid.lx!r} {grid.ly!r} {t!r}\n"
    with open(path, "w") as fh:
        fh.write(header + _rows(u))
        fh.flush()


def write_vector(path, grid: Grid, w: VectorField, t: float) -> None:
    grid.check_vector(w)
    header = f"{VECTOR_TAG} {grid.nx + 1} {grid.ny} {grid.nx} {grid.ny + 1} {grid.lx!r} {grid.ly!r} {t!r}\n"
    with open(path, "w") as fh:
        fh.write(header + _rows(w.x) + _rows(w.y))
        fh.flush()


def _parse_float(tok: str, what: str) -> float:
    try:
        return float(tok)
    except ValueError:
        raise SnapshotError(f"bad {what} {tok!r} in snapshot header") from None


def _parse_int(tok: str, what: str) -> int:
    try:
        return int(tok)
    except ValueError:
        raise SnapshotError(f"bad {what} {tok!r} in snapshot header") from None


def read_snapshot(path) -> Snapshot:
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines:
        raise SnapshotError(f"{path}: empty snapshot")
    head = lines[0].split()
    try:
        body = np.array([float(tok) for ln in lines[1:] for tok in ln.split()])
    except ValueError as exc:
        raise SnapshotError(f"{path}: non-numeric value in body ({exc})") from None
    if head and head[0] == SCALAR_TAG:
        if len(head) != 6:
            raise SnapshotError(f"{path}: scalar header needs 'nx ny lx ly t', got {lines[0]!r}")
        nx, ny = _parse_int(head[1], "nx"), _parse_int(head[2], "ny")
        lx, ly, t = (_parse_float(v, n) for v, n in zip(head[3:], ("lx", "ly", "t")))
        grid = _grid(nx, ny, lx, ly, path)
        if body.size != nx * ny:
            raise SnapshotError(f"{path}: dimension mismatch, header says {nx}x{ny}={nx * ny} values, found {body.size}")
        return Snapshot(grid, t, body.reshape(ny, nx))
    if head and head[0] == VECTOR_TAG:
        if len(head) != 8:
            raise SnapshotError(f"{path}: vector header needs 'nxx nyx nxy nyy lx ly t', got {lines[0]!r}")
        nxx, nyx, nxy, nyy = (_parse_int(v, "count") for v in head[1:5])
        lx, ly, t = (_parse_float(v, n) for v, n in zip(head[5:], ("lx", "ly", "t")))
        if nxx != nxy + 1 or nyy != nyx + 1:
            raise SnapshotError(f"{path}: inconsistent component counts {nxx}x{nyx} / {nxy}x{nyy}")
        grid = _grid(nxy, nyx, lx, ly, path)
        n1, n2 = nxx * nyx, nxy * nyy
        if body.size != n1 + n2:
            raise SnapshotError(f"{path}: dimension mismatch, expected {n1 + n2} values, found {body.size}")
        return Snapshot(grid, t, VectorField(body[:n1].reshape(nyx, nxx), body[n1:].reshape(nyy, nxy)))
    raise SnapshotError(f"{path}: unknown snapshot header {lines[0]!r}")


def _grid(nx, ny, lx, ly, path) -> Grid:
    try:
        return Grid(lx, ly, nx, ny)
    except ValueError as exc:
        raise SnapshotError(f"{path}: {exc}") from None


def state_paths(directory, step: int) -> tuple[Path, Path]:
    d = Path(directory)
    return d / f"u_{step:06d}.txt", d / f"omega_{step:06d}.txt"


def write_snapshot(state, grid: Grid, directory) -> Path:
    """Write ``u`` and ``omega`` of ``state``; returns the density path."""
    upath, wpath = state_paths(directory, state.step)
    write_scalar(upath, grid, state.u, state.t)
    write_vector(wpath, grid, state.omega, state.t)
    return upath


def read_snapshot_pair(directory, step: int) -> tuple[Snapshot, Snapshot]:
    upath, wpath = state_paths(directory, step)
    return read_snapshot(upath), read_snapshot(wpath)


def list_snapshot_steps(directory) -> list[int]:
    steps = []
    for p in Path(directory).iterdir():
        m = _STEP_RE.match(p.name)
        if m and (p.parent / f"omega_{m.group(1)}.txt").exists():
            steps.append(int(m.group(1)))
    return sorted(steps)
