"""Offline recomputation of ledger margins.

Deliberately shares no code with :mod:`clusterflow.monitor`: the norms are
re-derived from the raw snapshot arrays with plain numpy, and the margin
formulas are re-stated here.  Agreement between the two paths is the
check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .monitor import read_ledger
from .snapshot import list_snapshot_steps, read_snapshot_pair

REL_TOL = 1e-12


def _snapshot_norms(u: np.ndarray, wx: np.ndarray, wy: np.ndarray, lx: float, ly: float) -> dict:
    ny, nx = u.shape
    hx, hy = lx / nx, ly / ny
    cm = hx * hy

    def grad_sq(v):
        return (np.sum((np.diff(v, axis=1) / hx) ** 2) + np.sum((np.diff(v, axis=0) / hy) ** 2)) * cm

    div = np.diff(wx, axis=1) / hx + np.diff(wy, axis=0) / hy
    out = {
        "u_l2sq": float(np.sum(u * u) * cm),
        "grad_u_l2sq": float(grad_sq(u)),
        "omega_l2sq": float((np.sum(wx * wx) + np.sum(wy * wy)) * cm),
        "div_omega_l2sq": float(np.sum(div * div) * cm),
    }
    if u.min() >= 0:
        pos = u > 0
        out["entropy"] = float(np.sum(u[pos] * np.log(u[pos])) * cm)
        out["sqrt_u_grad_l2sq"] = float(grad_sq(np.sqrt(u)))
    else:
        out["entropy"] = math.nan
        out["sqrt_u_grad_l2sq"] = math.nan
    return out


def _margins(meta: dict, prev: dict, cur: dict, dt: float) -> dict:
    kind = meta["kind"]
    eps, delta, r = float(meta["epsilon"]), float(meta["delta"]), float(meta["r"])
    area = float(meta["lx"]) * float(meta["ly"])
    if kind == "bistable":
        a = float(meta["a"])
        lhs = (
            (cur["u_l2sq"] - prev["u_l2sq"]) / dt
            + eps / 2 * prev["div_omega_l2sq"]
            + prev["omega_l2sq"]
            + 2 * delta * cur["grad_u_l2sq"]
        )
        rhs = (a + 1) ** 2 / (2 * eps) * prev["u_l2sq"] + 2 * area * r * (1 - a)
        return {"energy_margin": rhs - lhs, "_scale": abs(lhs) + abs(rhs)}
    lhs = (
        (cur["entropy"] - prev["entropy"]) / dt
        + eps * prev["div_omega_l2sq"]
        + prev["omega_l2sq"]
        + 4 * delta * cur["sqrt_u_grad_l2sq"]
    )
    rhs = area * r
    return {"entropy_margin": rhs - lhs, "_scale": abs(lhs) + abs(rhs)}


def _trapezoid(ts_dt, vals):
    acc, out = 0.0, [0.0]
    for i in range(1, len(vals)):
        acc += 0.5 * ts_dt[i] * (vals[i - 1] + vals[i])
        out.append(acc)
    return np.array(out)


@dataclass
class ReplayReport:
    rows_checked: int = 0
    snapshot_rows: int = 0
    snapshot_pairs: int = 0
    max_rel_error: float = 0.0
    failures: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def summary(self) -> str:
        status = "OK" if self.ok else f"MISMATCH ({len(self.failures)} entries)"
        return (
            f"replay {status}: {self.rows_checked} ledger margins, {self.snapshot_rows} snapshot rows, "
            f"{self.snapshot_pairs} snapshot pairs; max relative deviation {self.max_rel_error:.3e}"
        )


def _compare(report: ReplayReport, what: str, step: int, ours: float, theirs, scale: float):
    if theirs is None or (isinstance(theirs, float) and math.isnan(theirs)):
        if not math.isnan(ours):
            report.failures.append(f"step {step}: {what} missing in ledger, replay gives {ours!r}")
        return
    if math.isnan(ours):
        report.failures.append(f"step {step}: {what} = {theirs!r} in ledger but undefined on replay")
        return
    denom = max(abs(theirs), abs(scale), 1e-300)
    rel = abs(ours - theirs) / denom
    report.max_rel_error = max(report.max_rel_error, rel)
    if rel > REL_TOL:
        report.failures.append(f"step {step}: {what} ledger={theirs!r} replay={ours!r} rel={rel:.3e}")


def replay(ledger_path, snapshot_dir=None) -> ReplayReport:
    """Recompute margins from ledger columns and, where present, snapshots."""
    led = read_ledger(ledger_path)
    meta, rows = led.meta, led.rows
    margin_key = "energy_margin" if meta["kind"] == "bistable" else "entropy_margin"
    report = ReplayReport()
    by_step = {row["step"]: row for row in rows}

    for prev, cur in zip(rows, rows[1:]):
        m = _margins(meta, prev, cur, cur["dt"])
        _compare(report, margin_key, cur["step"], m[margin_key], cur.get(margin_key), m["_scale"])
        report.rows_checked += 1

    dts = [row["dt"] for row in rows]
    for col, vals in (
        ("int_grad_u_l2sq", [row["grad_u_l2sq"] for row in rows]),
        ("int_omega_energy", [row["div_omega_l2sq"] + row["omega_l2sq"] for row in rows]),
    ):
        acc = _trapezoid(dts, vals)
        for row, ours in zip(rows, acc):
            _compare(report, col, row["step"], float(ours), row[col], abs(ours))

    if snapshot_dir is None:
        return report
    recomputed = {}
    lx, ly = float(meta["lx"]), float(meta["ly"])
    for step in list_snapshot_steps(snapshot_dir):
        if step not in by_step:
            continue
        usnap, wsnap = read_snapshot_pair(snapshot_dir, step)
        norms = _snapshot_norms(usnap.values, wsnap.values.x, wsnap.values.y, lx, ly)
        recomputed[step] = norms
        row = by_step[step]
        for key, val in norms.items():
            _compare(report, key, step, val, row.get(key), abs(val))
        report.snapshot_rows += 1
    for step, norms in recomputed.items():
        if step - 1 in recomputed:
            m = _margins(meta, recomputed[step - 1], norms, by_step[step]["dt"])
            _compare(report, margin_key + " (snapshots)", step, m[margin_key], by_step[step].get(margin_key), m["_scale"])
            report.snapshot_pairs += 1
    return report
