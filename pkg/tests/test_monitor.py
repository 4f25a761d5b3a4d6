import io
import math

import numpy as np
import pytest

from clusterflow import (
    GuardConfig,
    Grid,
    ModelParams,
    Monitor,
    MonitorConfig,
    RunControls,
    Stepper,
    bistable,
    initial_density,
    monostable,
    run,
    solve_velocity,
)
from clusterflow.monitor import (
    bistable_energy_margin,
    blowup_guard,
    cancellation_terms,
    cubic_cancellation_residual,
    entropy,
    entropy_margin_monostable,
    lp_energy_margin,
    read_ledger,
    tol_discr,
)
from clusterflow.reaction import forcing_gradE

from conftest import random_vector


def standard_run(n, kind, t_end=5.0, dt=1e-2, mode="energy", r=1.0):
    g = Grid(1.0, 1.0, n, n)
    model = bistable(0.25) if kind == "bistable" else monostable()
    p = ModelParams(0.2, 0.1, r, model)
    base = 0.25 if kind == "bistable" else 0.5
    u0 = initial_density(g, "cosine", base=base, amplitude=0.1)
    res = run(u0, p, g, RunControls(t_end=t_end, dt_max=dt, mode=mode), Monitor(g, p, MonitorConfig(mode=mode)))
    assert res.ok
    return g, p, res


@pytest.fixture(scope="module")
def bistable_runs():
    return {n: standard_run(n, "bistable") for n in (32, 64)}


@pytest.fixture(scope="module")
def monostable_runs():
    return {n: standard_run(n, "monostable") for n in (32, 64)}


# -- cancellation ---------------------------------------------------------------


def test_cancellation_exact_for_random_fields(rng):
    g = Grid(1.0, 1.0, 16, 16)
    for _ in range(20):
        u = rng.uniform(-1, 2, size=g.shape)
        w = random_vector(g, rng)
        t1, t2, res = cancellation_terms(g, u, w, bistable(0.25), "energy")
        assert res <= 1e-12 * (abs(t1) + abs(t2) + 1)
        assert abs(t1) > 0


def test_cancellation_monostable_reports_t1_alone(rng):
    g = Grid(1.0, 1.0, 8, 8)
    u = rng.uniform(size=g.shape)
    w = random_vector(g, rng)
    t1, t2, res = cancellation_terms(g, u, w, monostable(), "energy")
    assert t2 == 0.0 and res == abs(t1)


def test_upwind_cancellation_first_order():
    res = []
    for n in (16, 32, 64):
        g = Grid(1.0, 1.0, n, n)
        x, y = g.cell_centers()
        u = 0.5 + 0.25 * np.cos(np.pi * x) * np.cos(np.pi * y)
        model = bistable(0.25)
        w, _ = solve_velocity(forcing_gradE(model, u, g), 0.1, grid=g)
        res.append(cubic_cancellation_residual(g, u, w, model, "upwind"))
    orders = [math.log2(res[i] / res[i + 1]) for i in range(2)]
    # the asymptotic order is exactly 1 and is approached from below
    assert all(o >= 0.99 for o in orders), orders
    assert orders[1] >= orders[0]


def test_cancellation_rejects_mode(unit4):
    with pytest.raises(ValueError):
        cancellation_terms(unit4, unit4.scalar(1.0), unit4.zero_vector(), monostable(), "lax")


# -- margins ----------------------------------------------------------------------


def _row(grid, params, u, dt=0.1):
    mon = Monitor(grid, params)
    s = Stepper(grid, params).make_state(u, dt_used=dt)
    return mon.row(s)


def test_energy_margin_stationary_value(unit4):
    p = ModelParams(0.3, 0.2, 2.0, bistable(0.25))
    row = _row(unit4, p, unit4.scalar(1.0))
    m = bistable_energy_margin(row, row, p, unit4)
    assert m.lhs == 0.0
    expected = (1.25**2 / (2 * 0.2)) * 1.0 + 2 * 1.0 * 2.0 * 0.75
    assert m.rhs == pytest.approx(expected, rel=1e-14)
    assert m.margin == m.rhs > 0
    assert m.tol == pytest.approx(10 * (0.1 + 0.0625) * expected)


def test_tol_discr_scales_with_resolution():
    g32, g64 = Grid(1.0, 1.0, 32, 32), Grid(1.0, 1.0, 64, 64)
    assert tol_discr(10, 1e-3, g32, 1.0) / tol_discr(10, 2.5e-4, g64, 1.0) == pytest.approx(4.0)


def test_entropy_examples(unit4):
    assert entropy(unit4, unit4.scalar(1.0)) == 0.0
    g = Grid(2.0, 1.0, 4, 4)
    assert entropy(g, g.scalar(0.3)) == pytest.approx(2.0 * 0.3 * math.log(0.3), rel=1e-14)
    u = g.scalar(0.5)
    u[0, 0] = 0.0
    assert math.isfinite(entropy(g, u))
    u[0, 0] = -1e-9
    assert math.isnan(entropy(g, u))


def test_entropy_margin_unit_state(unit4):
    p = ModelParams(0.2, 0.1, 1.5, monostable())
    row = _row(unit4, p, unit4.scalar(1.0))
    m = entropy_margin_monostable(row, row, p, unit4)
    assert m.margin == pytest.approx(1.5)


def test_negative_density_flags_entropy_row(unit4):
    p = ModelParams(0.2, 0.1, 1.0, monostable())
    u = unit4.scalar(0.5)
    u[2, 2] = -0.1
    row = _row(unit4, p, u)
    assert row["entropy_flag"] == 1 and math.isnan(row["entropy"])
    m = entropy_margin_monostable(row, row, p, unit4)
    assert math.isnan(m.margin)


def test_entropy_rate_matches_logistic_ode():
    g = Grid(1.0, 1.0, 4, 4)
    p = ModelParams(0.2, 0.1, 1.0, monostable())
    c = 0.3
    rate = g.measure * (math.log(c) + 1) * c * (1 - c)
    errs = []
    for dt in (1e-2, 5e-3, 2.5e-3):
        res = run(g.scalar(c), p, g, RunControls(t_end=dt, dt_max=dt))
        ent = res.ledger.column("entropy")
        errs.append(abs((ent[1] - ent[0]) / dt - rate))
    assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.1)
    assert errs[1] / errs[2] == pytest.approx(2.0, rel=0.1)


def test_lp_margin_constant_state(unit4):
    p = ModelParams(0.2, 0.1, 1.0, bistable(0.25))
    row = _row(unit4, p, unit4.scalar(1.0))
    for q in (2.0, 4.0, 9.0):
        lp = lp_energy_margin(row, row, q, p, constant=0.7)
        assert lp.rate == 0.0 and lp.grad_term == 0.0 and lp.coupling == 0.0
        assert lp.required_constant == 0.0
        assert lp.margin == pytest.approx(0.7 * (1.0 + 1.0))
    with pytest.raises(ValueError):
        lp_energy_margin(row, row, 1.5, p)


def test_lp2_consistent_with_energy_ledger(bistable_runs):
    _, _, res = bistable_runs[32]
    led = res.ledger
    u2 = led.column("u_l2sq")
    rate = np.diff(u2) / led.column("dt")[1:]
    np.testing.assert_allclose(led.column("lp_rate2")[1:], rate, rtol=1e-9, atol=1e-15)
    np.testing.assert_allclose(led.column("u_pow2_grad_l2sq"), led.column("grad_u_l2sq"), rtol=1e-12)
    np.testing.assert_allclose(led.column("u_l2") ** 2, u2, rtol=1e-12)


def test_lp_constant_is_running_max(bistable_runs):
    _, _, res = bistable_runs[32]
    for tag in ("2", "4", "9"):
        req = res.ledger.column(f"lp_required{tag}")[1:]
        const = res.ledger.column(f"lp_constant{tag}")[1:]
        np.testing.assert_array_equal(const, np.maximum.accumulate(req))
        assert np.all(res.ledger.column(f"lp_margin{tag}")[1:] >= -1e-12 * (1 + const))


def test_u4_sup_agrees_across_resolutions(bistable_runs):
    s32 = bistable_runs[32][2].ledger.column("u_l4").max()
    s64 = bistable_runs[64][2].ledger.column("u_l4").max()
    assert abs(s32 - s64) <= 0.02 * s64


def test_omega_linf_agrees_across_resolutions(bistable_runs):
    m32 = bistable_runs[32][2].ledger.column("omega_linf").max()
    m64 = bistable_runs[64][2].ledger.column("omega_linf").max()
    assert abs(m32 - m64) <= 0.1 * m64


def test_ratio_column_is_solver_output(rng):
    g = Grid(1.0, 1.0, 8, 8)
    p = ModelParams(0.2, 0.1, 1.0, bistable(0.25))
    u = rng.uniform(size=g.shape)
    s = Stepper(g, p).make_state(u)
    row = Monitor(g, p).row(s)
    _, rep = solve_velocity(forcing_gradE(p.model, u, g), 0.1, grid=g)
    assert row["regularity_ratio"] == rep.regularity_ratio


def test_zero_velocity_columns(unit4):
    p = ModelParams(0.2, 0.1, 1.0, bistable(0.25))
    row = _row(unit4, p, unit4.scalar(0.6))
    for key in ("omega_linf", "omega_l2sq", "div_omega_l2sq", "curl_omega_l2sq", "regularity_ratio", "weak_gap"):
        assert row[key] == 0.0


def test_monostable_entropy_budget(monostable_runs):
    for n, (g, p, res) in monostable_runs.items():
        led = res.ledger
        s, t = led.column("entropy"), led.column("t")
        budget = (s[0] - s + g.measure * p.r * t) / min(p.epsilon, 1.0)
        slack = np.concatenate([[0.0], np.cumsum(led.column("entropy_tol")[1:] * led.column("dt")[1:])])
        assert np.all(led.column("int_omega_energy") <= budget + slack), n


def test_gn_ratio_stable_under_refinement(monostable_runs):
    a = monostable_runs[32][2].ledger.column("gn_ratio")
    b = monostable_runs[64][2].ledger.column("gn_ratio")
    assert np.abs(a - b).max() <= 0.01 * np.abs(b).max()


# -- ledger -----------------------------------------------------------------------


def test_accumulators_trapezoid_and_monotone(bistable_runs):
    _, _, res = bistable_runs[32]
    led = res.ledger
    dt = led.column("dt")
    for col, vals in (
        ("int_grad_u_l2sq", led.column("grad_u_l2sq")),
        ("int_omega_energy", led.column("div_omega_l2sq") + led.column("omega_l2sq")),
    ):
        acc = np.concatenate([[0.0], np.cumsum(0.5 * dt[1:] * (vals[1:] + vals[:-1]))])
        got = led.column(col)
        np.testing.assert_allclose(got, acc, rtol=1e-12, atol=0)
        assert np.all(np.diff(got) >= 0)


def test_norm_columns_nonnegative(bistable_runs):
    led = bistable_runs[32][2].ledger
    for col in led.columns:
        if col.endswith(("sq", "linf")) or col.startswith("u_l"):
            assert np.all(led.column(col) >= 0), col


def test_csv_roundtrip(bistable_runs):
    led = bistable_runs[32][2].ledger
    buf = io.StringIO()
    led.to_csv(buf)
    text = buf.getvalue()
    assert text.splitlines()[1] == "# columns: " + ",".join(led.columns)
    back = read_ledger(io.StringIO(text))
    assert back.columns == led.columns and back.meta == {k: str(v) for k, v in led.meta.items()}
    for a, b in zip(led.rows, back.rows):
        for c in led.columns:
            x, y = a.get(c), b[c]
            assert (x is None and y is None) or x == y or (math.isnan(x) and math.isnan(y))


def test_read_ledger_rejects_foreign_file():
    with pytest.raises(ValueError):
        read_ledger(io.StringIO("a,b\n1,2\n"))


# -- guard ------------------------------------------------------------------------


def test_guard_quiet_on_stationary_run():
    g = Grid(1.0, 1.0, 8, 8)
    res = run(g.scalar(1.0), ModelParams(0.2, 0.1, 1.0, monostable()), g, RunControls(t_end=2.0, dt_max=0.05))
    assert res.ok and res.final.t == 2.0


def test_guard_linf_spike(unit4):
    p = ModelParams(0.2, 0.1, 1.0, monostable())
    u = unit4.scalar(1.0)
    u[1, 2] = 1e9
    verdict = blowup_guard(_row(unit4, p, u), GuardConfig(), unit4)
    assert verdict.reason == "linf" and "exceeds" in verdict.describe()


def test_guard_w1q_and_nan(unit4):
    p = ModelParams(0.2, 0.1, 1.0, monostable())
    u = unit4.scalar(1.0)
    u[1, 2] = 50.0
    row = _row(unit4, p, u)
    assert blowup_guard(row, GuardConfig(), unit4) is None
    assert blowup_guard(row, GuardConfig(w1q_cap=10.0), unit4).reason == "w1q"
    row["mass"] = math.nan
    assert blowup_guard(row, GuardConfig(), unit4).reason == "nan"
    assert blowup_guard(row, GuardConfig(nan_check=False), unit4) is None


def test_guard_aborts_run_with_report():
    g = Grid(1.0, 1.0, 8, 8)
    u0 = g.scalar(1.0)
    u0[3, 3] = 2e3
    res = run(u0, ModelParams(0.2, 0.1, 0.0, monostable()), g, RunControls(t_end=1.0))
    assert not res.ok and res.abort.reason == "linf" and res.abort.t == 0.0
    assert len(res.ledger) == 0


@pytest.mark.parametrize("bad", [dict(linf_cap=0.0), dict(w1q_cap=-1.0), dict(q=2.0)])
def test_guard_config_validation(bad):
    with pytest.raises(ValueError):
        GuardConfig(**bad)


def test_adversarial_overflow_trips_guard_before_nan():
    """Energy mode, no diffusion to speak of, steps far beyond the CFL bound."""
    g = Grid(1.0, 1.0, 16, 16)
    p = ModelParams(1e-6, 0.01, 0.0, bistable(0.25))
    stepper = Stepper(g, p, "energy")
    mon = Monitor(g, p)
    guard = GuardConfig()
    s = stepper.make_state(initial_density(g, "noise", lo=0.0, hi=1.0, seed=3))
    verdict = None
    with np.errstate(all="ignore"):
        for _ in range(200):
            verdict = blowup_guard(mon.peek(s), guard, g)
            if verdict is not None:
                break
            mon.record(s)
            s = stepper.step(s, 0.05)
    assert verdict is not None and verdict.reason in ("linf", "w1q")
    # the only non-finite entries allowed are the entropy columns, which are
    # undefined once u dips below zero
    for row in mon.ledger.rows:
        for key, val in row.items():
            if key in ("entropy", "sqrt_u_grad_l2sq") and row["entropy_flag"]:
                continue
            assert val is not None and math.isfinite(val), key
