"""Per-step estimate ledger and blow-up guard.

Each accepted state produces one ledger row: the norms that appear in the
a-priori estimates, trapezoid time integrals of the dissipation terms, and
the margins (right side minus left side) of the discrete energy, Lp and
entropy inequalities.  Margins are evaluated over consecutive row pairs:
the velocity terms come from the earlier row (the velocity that drove the
step), the diffusion terms from the later one (backward Euler), and the
time derivative is the backward difference.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .elliptic import component_gradient_energy
from .grid import Grid, VectorField

LEDGER_MAGIC = "# clusterflow-ledger v1"


class Abort(NamedTuple):
    """Blow-up guard verdict: which bound broke, when, and context."""

    reason: str
    t: float
    detail: str
    snapshot: str | None = None

    def describe(self) -> str:
        msg = f"blow-up guard abort: {self.reason} at t={self.t:.6g} ({self.detail})"
        if self.snapshot:
            msg += f"; last snapshot {self.snapshot}"
        return msg


@dataclass(frozen=True)
class GuardConfig:
    linf_cap: float = 1e3
    w1q_cap: float = 1e6
    q: float = 4.0
    nan_check: bool = True

    def __post_init__(self):
        if not (self.linf_cap > 0 and self.w1q_cap > 0):
            raise ValueError("guard caps must be positive")
        if not self.q > 2:
            raise ValueError(f"guard.q must exceed 2, got {self.q}")


@dataclass(frozen=True)
class MonitorConfig:
    p_set: tuple = (2.0, 4.0, 9.0)
    tol_c: float = 10.0
    q: float = 4.0
    mode: str = "energy"  # face convention used for the cancellation check

    def __post_init__(self):
        if any(p < 2 for p in self.p_set):
            raise ValueError(f"Lp tracking needs p >= 2, got {self.p_set}")
        if not self.tol_c > 0:
            raise ValueError("monitor.tol_c must be positive")


def _ptag(p: float) -> str:
    return f"{p:g}".replace(".", "_")


# -- pure quantities ----------------------------------------------------------


def entropy(grid: Grid, u: np.ndarray) -> float:
    """``sum u log u`` with ``0 log 0 = 0``; NaN if any cell is negative."""
    if u.min() < 0:
        return math.nan
    safe = np.where(u > 0, u, 1.0)
    return float(np.sum(np.where(u > 0, u * np.log(safe), 0.0)) * grid.cell_measure)


def cancellation_terms(grid: Grid, u: np.ndarray, omega: VectorField, model, mode: str = "energy", face_u=None):
    """``(T1, T2, residual)`` for the coupling of the L2 estimate.

    ``T1 = 2 <u_face G u, w>`` comes from testing the advection term with
    ``2u``; ``T2 = <-2 u~ G u, w>`` is the cubic part of ``<E'(u~) G u, w>``
    (zero for the monostable law).  In energy mode ``u_face = u~`` and the
    two cancel to rounding.
    """
    gu = grid.gradient(u)
    avg = grid.face_average(u) if face_u is None else face_u
    if mode == "energy":
        face = avg
    elif mode == "upwind":
        face = grid.upwind_value(u, omega)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    t1 = 2.0 * grid.face_inner(VectorField(face.x * gu.x, face.y * gu.y), omega)
    if model.kind == "bistable":
        t2 = -2.0 * grid.face_inner(VectorField(avg.x * gu.x, avg.y * gu.y), omega)
    else:
        t2 = 0.0
    return t1, t2, abs(t1 + t2)


def cubic_cancellation_residual(grid: Grid, u: np.ndarray, omega: VectorField, model, mode: str = "energy") -> float:
    return cancellation_terms(grid, u, omega, model, mode)[2]


def tol_discr(tol_c: float, dt: float, grid: Grid, scale: float) -> float:
    return tol_c * (dt + grid.h2) * scale


class Margin(NamedTuple):
    margin: float
    lhs: float
    rhs: float
    tol: float


def bistable_energy_margin(prev: dict, cur: dict, params, grid: Grid, tol_c: float = 10.0) -> Margin:
    """``RHS - LHS`` of the L2 energy inequality for the bistable law.

    ``d/dt ||u||^2 + eps/2 ||div w||^2 + ||w||^2 + 2 delta ||grad u||^2
    <= (a+1)^2 / (2 eps) ||u||^2 + 2 |Omega| r (1 - a)``
    """
    eps, delta, r, a = params.epsilon, params.delta, params.r, params.model.a
    dt = cur["dt"]
    rate = (cur["u_l2sq"] - prev["u_l2sq"]) / dt
    terms_l = [rate, 0.5 * eps * prev["div_omega_l2sq"], prev["omega_l2sq"], 2.0 * delta * cur["grad_u_l2sq"]]
    terms_r = [(a + 1.0) ** 2 / (2.0 * eps) * prev["u_l2sq"], 2.0 * grid.measure * r * (1.0 - a)]
    lhs, rhs = sum(terms_l), sum(terms_r)
    scale = sum(abs(x) for x in terms_l + terms_r)
    return Margin(rhs - lhs, lhs, rhs, tol_discr(tol_c, dt, grid, scale))


def entropy_margin_monostable(prev: dict, cur: dict, params, grid: Grid, tol_c: float = 10.0) -> Margin:
    """``RHS - LHS`` of the entropy inequality for the monostable law.

    ``d/dt int u log u + eps ||div w||^2 + ||w||^2 + 4 delta ||grad sqrt u||^2
    <= |Omega| r``.  NaN when either row has an undefined entropy.
    """
    s0, s1 = prev["entropy"], cur["entropy"]
    dt = cur["dt"]
    if not (math.isfinite(s0) and math.isfinite(s1)):
        return Margin(math.nan, math.nan, params.r * grid.measure, math.nan)
    rate = (s1 - s0) / dt
    terms_l = [
        rate,
        params.epsilon * prev["div_omega_l2sq"],
        prev["omega_l2sq"],
        4.0 * params.delta * cur["sqrt_u_grad_l2sq"],
    ]
    rhs = grid.measure * params.r
    lhs = sum(terms_l)
    scale = sum(abs(x) for x in terms_l) + abs(rhs)
    return Margin(rhs - lhs, lhs, rhs, tol_discr(tol_c, dt, grid, scale))


class LpMargin(NamedTuple):
    rate: float  # backward difference of ||u||_p^p
    grad_term: float  # ||G(u^{p/2})||^2 at the new time
    coupling: float  # ||div w||^2 ||u||_p^p at the old time
    required_constant: float  # smallest C(p) >= 0 that satisfies this pair
    margin: float  # residual with the supplied constant


def lp_energy_margin(prev: dict, cur: dict, p: float, params, constant: float | None = None) -> LpMargin:
    """Lp growth inequality with a measured constant.

    ``d/dt ||u||_p^p <= -(2 delta (p-1)/p) ||grad u^{p/2}||^2
    + C(p) (||u||_p^p + ||div w||^2 ||u||_p^p + 1)``
    """
    if p < 2:
        raise ValueError(f"Lp margin needs p >= 2, got {p}")
    tag = _ptag(p)
    upp_prev = prev[f"u_l{tag}"] ** p
    upp_cur = cur[f"u_l{tag}"] ** p
    rate = (upp_cur - upp_prev) / cur["dt"]
    grad = cur[f"u_pow{tag}_grad_l2sq"]
    coupling = prev["div_omega_l2sq"] * upp_prev
    dissip = 2.0 * params.delta * (p - 1.0) / p * grad
    budget = upp_prev + coupling + 1.0
    required = max(0.0, (rate + dissip) / budget)
    c = required if constant is None else constant
    return LpMargin(rate, grad, coupling, required, c * budget - dissip - rate)


# -- guard --------------------------------------------------------------------


def blowup_guard(row: dict, guard: GuardConfig, grid: Grid | None = None):
    """``None`` if the row is within bounds, otherwise an :class:`Abort`."""
    t = row.get("t", math.nan)
    if guard.nan_check:
        for key in ("u_linf", "w1q", "u_l2sq", "omega_l2sq", "mass"):
            if not math.isfinite(row[key]):
                return Abort("nan", t, f"{key} is not finite")
    if row["u_linf"] > guard.linf_cap:
        return Abort("linf", t, f"||u||_inf = {row['u_linf']:.6g} exceeds cap {guard.linf_cap:g}")
    if row["w1q"] > guard.w1q_cap:
        return Abort(
            "w1q", t, f"||u||_q + ||Gu||_q = {row['w1q']:.6g} exceeds cap {guard.w1q_cap:g} (q={guard.q:g})"
        )
    return None


# -- ledger -------------------------------------------------------------------


def ledger_columns(config: MonitorConfig, kind: str) -> list[str]:
    cols = ["step", "t", "dt", "mass", "u_min", "u_linf", "u_l2sq", "grad_u_l2sq"]
    cols += [f"u_l{_ptag(p)}" for p in config.p_set]
    cols += [f"u_pow{_ptag(p)}_grad_l2sq" for p in config.p_set]
    cols += [
        "grad_u_lq",
        "w1q",
        "omega_l2sq",
        "div_omega_l2sq",
        "curl_omega_l2sq",
        "grad_omega_l2sq",
        "omega_linf",
        "regularity_ratio",
        "weak_lhs",
        "weak_rhs",
        "weak_gap",
        "entropy",
        "sqrt_u_grad_l2sq",
        "entropy_flag",
        "gn_ratio",
        "cancel_t1",
        "cancel_t2",
        "cancel_residual",
        "int_grad_u_l2sq",
        "int_omega_energy",
    ]
    if kind == "bistable":
        cols += ["energy_margin", "energy_tol"]
    else:
        cols += ["entropy_margin", "entropy_tol"]
    for p in config.p_set:
        tag = _ptag(p)
        cols += [f"lp_rate{tag}", f"lp_required{tag}", f"lp_constant{tag}", f"lp_margin{tag}"]
    return cols


@dataclass
class EstimateLedger:
    columns: list
    meta: dict
    rows: list = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([np.nan if r.get(name) is None else r[name] for r in self.rows], dtype=float)

    def __len__(self):
        return len(self.rows)

    def to_csv(self, target) -> None:
        """Write the ledger; accepts a path or an open text stream."""
        if isinstance(target, (str, Path)):
            with open(target, "w", newline="") as fh:
                self._write(fh)
        else:
            self._write(target)

    def _write(self, fh) -> None:
        meta = " ".join(f"{k}={v}" for k, v in self.meta.items())
        fh.write(f"{LEDGER_MAGIC} {meta}\n")
        fh.write("# columns: " + ",".join(self.columns) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(self.columns)
        for row in self.rows:
            writer.writerow([_fmt(row.get(c)) for c in self.columns])

    def open_stream(self, path) -> LedgerWriter:
        return LedgerWriter(self, path)


class LedgerWriter:
    """Appends rows to a CSV as they arrive, flushing each one."""

    def __init__(self, ledger: EstimateLedger, path):
        self.ledger = ledger
        self.fh = open(path, "w", newline="")
        meta = " ".join(f"{k}={v}" for k, v in ledger.meta.items())
        self.fh.write(f"{LEDGER_MAGIC} {meta}\n")
        self.fh.write("# columns: " + ",".join(ledger.columns) + "\n")
        self.writer = csv.writer(self.fh, lineterminator="\n")
        self.writer.writerow(ledger.columns)

    def write(self, row: dict) -> None:
        self.writer.writerow([_fmt(row.get(c)) for c in self.ledger.columns])
        self.fh.flush()

    def close(self) -> None:
        self.fh.close()


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return "%.17g" % v


def read_ledger(source) -> EstimateLedger:
    if isinstance(source, (str, Path)):
        text = Path(source).read_text()
    else:
        text = source.read()
    lines = text.splitlines()
    if not lines or not lines[0].startswith(LEDGER_MAGIC):
        raise ValueError("not a clusterflow ledger (missing header line)")
    meta = dict(item.split("=", 1) for item in lines[0][len(LEDGER_MAGIC):].split())
    body = [ln for ln in lines[1:] if not ln.startswith("#")]
    reader = csv.reader(io.StringIO("\n".join(body)))
    columns = next(reader)
    rows = []
    for rec in reader:
        row = {}
        for c, v in zip(columns, rec):
            if v == "":
                row[c] = None
            elif c in ("step", "entropy_flag"):
                row[c] = int(v)
            else:
                row[c] = float(v)
        rows.append(row)
    return EstimateLedger(columns, meta, rows)


class Monitor:
    """Builds ledger rows for a run; the run loop is the single writer."""

    def __init__(self, grid: Grid, params, config: MonitorConfig | None = None):
        self.grid = grid
        self.params = params
        self.config = config or MonitorConfig()
        model = params.model
        meta = {
            "kind": model.kind,
            "a": "%.17g" % model.a if model.a is not None else "none",
            "delta": "%.17g" % params.delta,
            "epsilon": "%.17g" % params.epsilon,
            "r": "%.17g" % params.r,
            "lx": "%.17g" % grid.lx,
            "ly": "%.17g" % grid.ly,
            "nx": grid.nx,
            "ny": grid.ny,
            "tol_c": "%.17g" % self.config.tol_c,
            "q": "%g" % self.config.q,
            "p_set": ";".join("%g" % p for p in self.config.p_set),
            "mode": self.config.mode,
        }
        self.ledger = EstimateLedger(ledger_columns(self.config, model.kind), meta)
        self._lp_constant = {p: 0.0 for p in self.config.p_set}
        self.sink: LedgerWriter | None = None

    @property
    def prev(self) -> dict | None:
        return self.ledger.rows[-1] if self.ledger.rows else None

    def norms(self, u: np.ndarray, omega: VectorField, forcing: VectorField) -> dict:
        """State-only columns (no time history)."""
        g, cfg, eps = self.grid, self.config, self.params.epsilon
        gu = g.gradient(u)
        au = np.abs(u)
        row = {
            "mass": g.integrate(u),
            "u_min": float(u.min()),
            "u_linf": float(au.max()),
            "u_l2sq": g.inner(u, u),
            "grad_u_l2sq": g.face_inner(gu, gu),
        }
        for p in cfg.p_set:
            tag = _ptag(p)
            row[f"u_l{tag}"] = g.lp_norm(u, p)
            gp = g.gradient(au ** (p / 2.0))
            row[f"u_pow{tag}_grad_l2sq"] = g.face_inner(gp, gp)
        row["grad_u_lq"] = g.face_lp(gu, cfg.q)
        row["w1q"] = g.lp_norm(u, cfg.q) + row["grad_u_lq"]
        div = g.divergence(omega)
        row["omega_l2sq"] = g.face_inner(omega, omega)
        row["div_omega_l2sq"] = g.inner(div, div)
        row["curl_omega_l2sq"] = float(np.sum(g.node_curl(omega) ** 2) * g.cell_measure)
        row["grad_omega_l2sq"] = component_gradient_energy(g, omega)
        row["omega_linf"] = g.face_linf(omega)
        row["weak_lhs"] = eps * row["div_omega_l2sq"] + row["omega_l2sq"]
        row["weak_rhs"] = g.face_inner(forcing, omega)
        row["weak_gap"] = row["weak_rhs"] - row["weak_lhs"]
        row["entropy"] = entropy(g, u)
        if math.isfinite(row["entropy"]):
            gs = g.gradient(np.sqrt(u))
            row["sqrt_u_grad_l2sq"] = g.face_inner(gs, gs)
            row["entropy_flag"] = 0
        else:
            row["sqrt_u_grad_l2sq"] = math.nan
            row["entropy_flag"] = 1
        w12 = math.sqrt(row["u_l2sq"] + row["grad_u_l2sq"])
        l2 = math.sqrt(row["u_l2sq"])
        row["gn_ratio"] = g.lp_norm(u, 4) / math.sqrt(w12 * l2) if l2 > 0 else math.nan
        return row

    def row(self, state) -> dict:
        """Full ledger row for ``state`` given the rows recorded so far."""
        from .elliptic import regularity_ratio

        g, cfg, params = self.grid, self.config, self.params
        row = {"step": state.step, "t": state.t, "dt": state.dt_used}
        row.update(self.norms(state.u, state.omega, state.forcing))
        row["regularity_ratio"] = state.report.regularity_ratio if state.report else (
            regularity_ratio(state.omega, state.forcing, g) if g.face_l2(state.forcing) > 0 else 0.0
        )
        t1, t2, res = cancellation_terms(g, state.u, state.omega, params.model, cfg.mode, state.face_u)
        row["cancel_t1"], row["cancel_t2"], row["cancel_residual"] = t1, t2, res
        prev = self.prev
        om_energy = row["div_omega_l2sq"] + row["omega_l2sq"]
        if prev is None:
            row["int_grad_u_l2sq"] = 0.0
            row["int_omega_energy"] = 0.0
            return row
        dt = state.dt_used
        row["int_grad_u_l2sq"] = prev["int_grad_u_l2sq"] + 0.5 * dt * (prev["grad_u_l2sq"] + row["grad_u_l2sq"])
        prev_om = prev["div_omega_l2sq"] + prev["omega_l2sq"]
        row["int_omega_energy"] = prev["int_omega_energy"] + 0.5 * dt * (prev_om + om_energy)
        if params.model.kind == "bistable":
            m = bistable_energy_margin(prev, row, params, g, cfg.tol_c)
            row["energy_margin"], row["energy_tol"] = m.margin, m.tol
        else:
            m = entropy_margin_monostable(prev, row, params, g, cfg.tol_c)
            row["entropy_margin"], row["entropy_tol"] = m.margin, m.tol
        for p in cfg.p_set:
            tag = _ptag(p)
            lp = lp_energy_margin(prev, row, p, params)
            const = max(self._lp_constant[p], lp.required_constant)
            lp = lp_energy_margin(prev, row, p, params, const)
            row[f"lp_rate{tag}"] = lp.rate
            row[f"lp_required{tag}"] = lp.required_constant
            row[f"lp_constant{tag}"] = const
            row[f"lp_margin{tag}"] = lp.margin
        return row

    def append(self, row: dict) -> None:
        for p in self.config.p_set:
            c = row.get(f"lp_constant{_ptag(p)}")
            if c is not None:
                self._lp_constant[p] = c
        self.ledger.rows.append(row)
        if self.sink is not None:
            self.sink.write(row)

    # used by the run loop
    def peek(self, state) -> dict:
        self._pending = (id(state), self.row(state))
        return self._pending[1]

    def record(self, state) -> dict:
        pending = getattr(self, "_pending", None)
        row = pending[1] if pending and pending[0] == id(state) else self.row(state)
        self._pending = None
        self.append(row)
        return row
