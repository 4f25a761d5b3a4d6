"""Time stepping for the density equation.

One step (Lie splitting, first order in time)::

    w_n     = solve (I - eps Lap_c) w = E'(u~_n) G u_n
    u*      = u_n + dt * (-D(u_face * w_n) + r u_n E(u_n))
    u_{n+1} = (I - dt * delta * Lap_N)^{-1} u*

``u_face`` is the centred face average (``mode='energy'``) or the upstream
cell value (``mode='upwind'``).  The energy mode makes the cubic coupling
terms cancel exactly; the upwind mode keeps ``u >= 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .elliptic import HelmholtzOperator, SolveReport, regularity_ratio
from .grid import Grid, VectorField
from .linalg import ShiftedLaplacian, SolverError
from .reaction import ReactionModel, forcing_gradE, reaction_term

MODES = ("energy", "upwind")


class IntegrityError(FloatingPointError):
    """A non-finite value appeared at a named stage of a step."""

    def __init__(self, stage: str, t: float):
        super().__init__(f"non-finite values after stage {stage!r} at t={t:.6g}")
        self.stage = stage
        self.t = t


@dataclass(frozen=True)
class ModelParams:
    delta: float
    epsilon: float
    r: float
    model: ReactionModel

    def __post_init__(self):
        if not (0.0 < self.delta < 1.0):
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if not self.epsilon > 0.0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not self.r >= 0.0:
            raise ValueError(f"r must be nonnegative, got {self.r}")


@dataclass
class StepState:
    """Density at time ``t`` together with the velocity slaved to it."""

    t: float
    u: np.ndarray
    omega: VectorField
    forcing: VectorField
    face_u: VectorField
    report: SolveReport
    dt_used: float = 0.0
    step: int = 0


# -- pure building blocks ---------------------------------------------------


def advective_flux(grid: Grid, u: np.ndarray, omega: VectorField, mode: str = "upwind", face_u=None) -> np.ndarray:
    """``D(u_face * omega)``; integrates to zero when ``omega`` has no normal flux."""
    if mode == "energy":
        face = grid.face_average(u) if face_u is None else face_u
    elif mode == "upwind":
        face = grid.upwind_value(u, omega)
    else:
        raise ValueError(f"advection mode must be one of {MODES}, got {mode!r}")
    return grid.divergence(VectorField(face.x * omega.x, face.y * omega.y))


def diffusion_system(grid: Grid, dt: float, delta: float) -> ShiftedLaplacian:
    if not (dt > 0 and delta > 0):
        raise ValueError(f"diffusion solve needs dt > 0 and delta > 0, got dt={dt}, delta={delta}")
    return ShiftedLaplacian(grid.nx, grid.ny, grid.hx, grid.hy, "neumann", "neumann", dt * delta)


def diffusion_solve(
    grid: Grid,
    rhs: np.ndarray,
    dt: float,
    delta: float,
    tol: float = 1e-12,
    backend: str = "direct",
    system: ShiftedLaplacian | None = None,
) -> np.ndarray:
    """Backward-Euler diffusion ``(I - dt delta Lap_N) u = rhs``.

    Constants are fixed by the operator, so only the deviation from the
    mean is solved for; constant data then pass through bit-exactly.
    """
    if system is None:
        system = diffusion_system(grid, dt, delta)
    rhs = np.ascontiguousarray(rhs, dtype=float)
    mean = float(np.mean(rhs))
    x, _, _ = system.solve((rhs - mean).ravel(), tol, backend)
    return mean + x.reshape(grid.shape)


def stable_dt(grid: Grid, u: np.ndarray, omega: VectorField, params: ModelParams, safety: float) -> float:
    """Explicit-term step bound; ``inf`` when nothing constrains it.

    ``safety * min(hx / max|w_x|, hy / max|w_y|, 1 / (r max|(uE)'|))``.
    Diffusion is implicit and imposes nothing.  With ``safety <= 1/5`` the
    upwind step keeps ``u >= 0``: each cell loses at most four face
    outflows and one reaction sink, each bounded by ``safety``.  The
    reaction scan starts at ``u = 0`` since ``|E(u)| <= max_[0,u] |(uE)'|``
    is what bounds the sink.
    """
    if not (0.0 < safety <= 1.0):
        raise ValueError(f"safety must lie in (0, 1], got {safety}")
    bounds = []
    wx = float(np.abs(omega.x).max())
    wy = float(np.abs(omega.y).max())
    if wx > 0:
        bounds.append(grid.hx / wx)
    if wy > 0:
        bounds.append(grid.hy / wy)
    if params.r > 0:
        react = params.r * params.model.max_abs_d_uE(min(0.0, float(u.min())), max(0.0, float(u.max())))
        if react > 0:
            bounds.append(1.0 / react)
    return safety * min(bounds) if bounds else math.inf


# -- stepping ---------------------------------------------------------------


class Stepper:
    """Caches the elliptic operator and diffusion factorizations of a run."""

    def __init__(self, grid: Grid, params: ModelParams, mode: str = "upwind", tol: float = 1e-10, backend: str = "direct"):
        if mode not in MODES:
            raise ValueError(f"advection mode must be one of {MODES}, got {mode!r}")
        self.grid = grid
        self.params = params
        self.mode = mode
        self.tol = tol
        self.backend = backend
        self.helmholtz = HelmholtzOperator(grid, params.epsilon)
        self._diffusion: dict[float, ShiftedLaplacian] = {}

    def _diffusion_system(self, dt: float) -> ShiftedLaplacian:
        sysm = self._diffusion.get(dt)
        if sysm is None:
            if len(self._diffusion) >= 4:
                self._diffusion.pop(next(iter(self._diffusion)))
            sysm = diffusion_system(self.grid, dt, self.params.delta)
            self._diffusion[dt] = sysm
        return sysm

    def make_state(self, u: np.ndarray, t: float = 0.0, dt_used: float = 0.0, step: int = 0) -> StepState:
        grid = self.grid
        u = grid.check_scalar(u)
        if not np.isfinite(u).all():
            raise IntegrityError("density", t)
        face_u = grid.face_average(u)
        f = forcing_gradE(self.params.model, u, grid, face_u)
        omega, iterations, res = self.helmholtz.solve(f, self.tol, self.backend)
        if not omega.is_finite():
            raise IntegrityError("velocity", t)
        ratio = regularity_ratio(omega, f, grid) if grid.face_l2(f) > 0 else 0.0
        return StepState(t, u, omega, f, face_u, SolveReport(iterations, res, ratio), dt_used, step)

    def explicit_part(self, state: StepState, dt: float) -> np.ndarray:
        p = self.params
        flux = advective_flux(self.grid, state.u, state.omega, self.mode, state.face_u)
        return state.u + dt * (-flux + reaction_term(p.model, state.u, p.r))

    def step(self, state: StepState, dt: float) -> StepState:
        if not dt > 0:
            raise ValueError(f"dt must be positive, got {dt}")
        ustar = self.explicit_part(state, dt)
        if not np.isfinite(ustar).all():
            raise IntegrityError("advection-reaction", state.t)
        u_new = diffusion_solve(
            self.grid, ustar, dt, self.params.delta, self.tol, self.backend, self._diffusion_system(dt)
        )
        if not np.isfinite(u_new).all():
            raise IntegrityError("diffusion", state.t)
        return self.make_state(u_new, state.t + dt, dt, state.step + 1)

    def stable_dt(self, state: StepState, safety: float) -> float:
        return stable_dt(self.grid, state.u, state.omega, self.params, safety)


def step(state: StepState, params: ModelParams, grid: Grid, dt: float, mode: str = "upwind", **solver) -> StepState:
    """Single step without a cached :class:`Stepper`."""
    return Stepper(grid, params, mode, **solver).step(state, dt)


# -- run loop ---------------------------------------------------------------


@dataclass
class RunControls:
    t_end: float
    dt_max: float = 1e-2
    safety: float = 0.2
    mode: str = "upwind"
    tol: float = 1e-10
    backend: str = "direct"
    keep_every: int = 0  # 0 keeps no intermediate states


@dataclass
class RunResult:
    final: StepState
    ledger: object
    states: list = field(default_factory=list)
    abort: object = None
    n_steps: int = 0

    @property
    def ok(self) -> bool:
        return self.abort is None


def run(
    u0: np.ndarray,
    params: ModelParams,
    grid: Grid,
    controls: RunControls,
    monitor=None,
    guard=None,
    observer: Callable[[StepState, dict], None] | None = None,
) -> RunResult:
    """Step from ``u0`` until ``t_end`` or until the blow-up guard trips.

    A ledger row is appended for the initial state and after every step.
    ``observer(state, row)`` is called after each accepted row.
    """
    from .monitor import Abort, GuardConfig, Monitor, MonitorConfig, blowup_guard

    if np.any(np.asarray(u0) < 0):
        raise ValueError("initial density must be nonnegative")
    monitor = monitor or Monitor(grid, params, MonitorConfig(mode=controls.mode))
    guard = guard or GuardConfig()
    stepper = Stepper(grid, params, controls.mode, controls.tol, controls.backend)
    state = stepper.make_state(np.array(u0, dtype=float))
    states = [state] if controls.keep_every else []

    def accept(st: StepState):
        verdict = blowup_guard(monitor.peek(st), guard, grid)
        if verdict is not None:
            return verdict
        row = monitor.record(st)
        if observer is not None:
            observer(st, row)
        return None

    abort = accept(state)
    t_end = controls.t_end
    n = 0
    while abort is None and state.t < t_end * (1 - 1e-12):
        dt = min(controls.dt_max, stepper.stable_dt(state, controls.safety), t_end - state.t)
        if t_end - (state.t + dt) < 1e-9 * dt:
            dt = t_end - state.t
        try:
            new = stepper.step(state, dt)
        except IntegrityError as exc:
            abort = Abort("nan", state.t + dt, str(exc))
            break
        abort = accept(new)
        if abort is not None:
            break
        state = new
        n += 1
        if controls.keep_every and n % controls.keep_every == 0:
            states.append(state)
    return RunResult(state, monitor.ledger, states, abort, n)


# -- initial data -----------------------------------------------------------


def initial_density(grid: Grid, kind: str, **opts) -> np.ndarray:
    """Initial data menu: ``constant``, ``cosine``, ``noise``, ``file``.

    * constant: ``value``
    * cosine: ``base + amplitude * cos(mode_x pi x / lx) cos(mode_y pi y / ly)``
    * noise: uniform in ``[lo, hi]`` from ``seed``
    * file: scalar snapshot at ``file``
    """
    if kind == "constant":
        return grid.scalar(opts.get("value", 1.0))
    if kind == "cosine":
        x, y = grid.cell_centers()
        mx, my = opts.get("mode_x", 1), opts.get("mode_y", 1)
        return opts.get("base", 0.5) + opts.get("amplitude", 0.1) * (
            np.cos(mx * np.pi * x / grid.lx) * np.cos(my * np.pi * y / grid.ly)
        )
    if kind == "noise":
        lo, hi = opts.get("lo", 0.0), opts.get("hi", 1.0)
        rng = np.random.default_rng(opts.get("seed", 0))
        return rng.uniform(lo, hi, size=grid.shape)
    if kind == "file":
        from .snapshot import read_snapshot

        snap = read_snapshot(Path(opts["file"]))
        if snap.values.shape != grid.shape:
            raise ValueError(f"snapshot shape {snap.values.shape} does not match grid {grid.shape}")
        return snap.values
    raise ValueError(f"unknown init.kind {kind!r}")


__all__ = [
    "IntegrityError",
    "MODES",
    "ModelParams",
    "RunControls",
    "RunResult",
    "SolverError",
    "StepState",
    "Stepper",
    "advective_flux",
    "diffusion_solve",
    "initial_density",
    "run",
    "stable_dt",
    "step",
]
