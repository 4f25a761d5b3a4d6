"""Plain-text ``section.key = value`` run configuration."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable

from .evolution import MODES, ModelParams, RunControls
from .grid import Grid
from .linalg import BACKENDS
from .monitor import GuardConfig, MonitorConfig
from .reaction import KINDS, ReactionModel

INIT_KINDS = ("constant", "cosine", "noise", "file")


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "on", "yes", "1"):
        return True
    if low in ("false", "off", "no", "0"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _p_set(text: str) -> tuple:
    vals = tuple(float(tok) for tok in text.replace(";", ",").split(",") if tok.strip())
    if not vals:
        raise ValueError("empty p-set")
    return vals


def _int(text: str) -> int:
    v = float(text)
    if not v.is_integer():
        raise ValueError(f"expected an integer, got {text!r}")
    return int(v)


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any = None
    required: bool = False
    check: Callable[[Any], bool] | None = None
    rule: str = ""


def _pos(v):
    return v > 0


KEYS: dict[str, Key] = {
    "grid.lx": Key(float, 1.0, check=_pos, rule="> 0"),
    "grid.ly": Key(float, 1.0, check=_pos, rule="> 0"),
    "grid.nx": Key(_int, required=True, check=lambda v: v >= 2, rule=">= 2"),
    "grid.ny": Key(_int, required=True, check=lambda v: v >= 2, rule=">= 2"),
    "params.delta": Key(float, required=True, check=lambda v: 0 < v < 1, rule="in (0, 1)"),
    "params.epsilon": Key(float, required=True, check=_pos, rule="> 0"),
    "params.r": Key(float, required=True, check=lambda v: v >= 0, rule=">= 0"),
    "model.kind": Key(str, required=True, check=lambda v: v in KINDS, rule=f"one of {KINDS}"),
    "model.a": Key(float, check=lambda v: 0 < v < 1, rule="in (0, 1) (Allee threshold)"),
    "time.t_end": Key(float, required=True, check=_pos, rule="> 0"),
    "time.dt_max": Key(float, 1e-2, check=_pos, rule="> 0"),
    "time.safety": Key(float, 0.2, check=lambda v: 0 < v <= 1, rule="in (0, 1]"),
    "advection.mode": Key(str, "upwind", check=lambda v: v in MODES, rule=f"one of {MODES}"),
    "elliptic.tol": Key(float, 1e-10, check=_pos, rule="> 0"),
    "elliptic.backend": Key(str, "direct", check=lambda v: v in BACKENDS, rule=f"one of {BACKENDS}"),
    "init.kind": Key(str, required=True, check=lambda v: v in INIT_KINDS, rule=f"one of {INIT_KINDS}"),
    "init.value": Key(float, 1.0, check=lambda v: v >= 0, rule=">= 0"),
    "init.base": Key(float, 0.5),
    "init.amplitude": Key(float, 0.1),
    "init.mode_x": Key(_int, 1, check=lambda v: v >= 0, rule=">= 0"),
    "init.mode_y": Key(_int, 1, check=lambda v: v >= 0, rule=">= 0"),
    "init.lo": Key(float, 0.0, check=lambda v: v >= 0, rule=">= 0"),
    "init.hi": Key(float, 1.0, check=lambda v: v >= 0, rule=">= 0"),
    "init.file": Key(str, ""),
    "guard.linf_cap": Key(float, 1e3, check=_pos, rule="> 0"),
    "guard.w1q_cap": Key(float, 1e6, check=_pos, rule="> 0"),
    "guard.q": Key(float, 4.0, check=lambda v: v > 2, rule="> 2"),
    "guard.nan_check": Key(_bool, True),
    "monitor.p_set": Key(_p_set, (2.0, 4.0, 9.0), check=lambda v: all(p >= 2 for p in v), rule="all p >= 2"),
    "monitor.tol_c": Key(float, 10.0, check=_pos, rule="> 0"),
    "output.ledger": Key(str, "ledger.csv"),
    "output.snapshot_period": Key(float, 0.1, check=lambda v: v >= 0, rule=">= 0 (0 = every step)"),
    "output.snapshot_dir": Key(str, "snapshots"),
    "seed": Key(_int, 0),
}


@dataclass(frozen=True)
class SimConfig:
    values: dict

    def __getitem__(self, key: str):
        return self.values[key]

    def grid(self) -> Grid:
        v = self.values
        return Grid(v["grid.lx"], v["grid.ly"], v["grid.nx"], v["grid.ny"])

    def model(self) -> ReactionModel:
        return ReactionModel(self["model.kind"], self["model.a"] if self["model.kind"] == "bistable" else None)

    def params(self) -> ModelParams:
        return ModelParams(self["params.delta"], self["params.epsilon"], self["params.r"], self.model())

    def controls(self) -> RunControls:
        return RunControls(
            t_end=self["time.t_end"],
            dt_max=self["time.dt_max"],
            safety=self["time.safety"],
            mode=self["advection.mode"],
            tol=self["elliptic.tol"],
            backend=self["elliptic.backend"],
        )

    def guard(self) -> GuardConfig:
        return GuardConfig(self["guard.linf_cap"], self["guard.w1q_cap"], self["guard.q"], self["guard.nan_check"])

    def monitor_config(self) -> MonitorConfig:
        return MonitorConfig(self["monitor.p_set"], self["monitor.tol_c"], self["guard.q"], self["advection.mode"])

    def init_options(self) -> dict:
        v = self.values
        return {
            "value": v["init.value"],
            "base": v["init.base"],
            "amplitude": v["init.amplitude"],
            "mode_x": v["init.mode_x"],
            "mode_y": v["init.mode_y"],
            "lo": v["init.lo"],
            "hi": v["init.hi"],
            "file": v["init.file"],
            "seed": v["seed"],
        }

    def render(self) -> str:
        """Resolved configuration in the input syntax, keys in canonical order."""
        out = []
        for key in KEYS:
            val = self.values.get(key)
            if val is None:
                continue
            if isinstance(val, tuple):
                val = ",".join("%g" % p for p in val)
            elif isinstance(val, bool):
                val = "true" if val else "false"
            out.append(f"{key} = {val}")
        return "\n".join(out) + "\n"


def parse_config(text: str) -> SimConfig:
    """Parse and validate; every error names the offending key."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value', got {line!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r} (line {lineno})", key)
        if key in raw:
            raise ConfigError(f"duplicate key {key!r} (line {lineno})", key)
        raw[key] = val

    missing = [k for k, spec in KEYS.items() if spec.required and k not in raw]
    if missing:
        raise ConfigError("missing required keys: " + ", ".join(missing), missing[0])

    values: dict[str, Any] = {}
    for key, spec in KEYS.items():
        if key in raw:
            try:
                val = spec.parse(raw[key])
            except ValueError as exc:
                raise ConfigError(f"{key}: type mismatch for {raw[key]!r} ({exc})", key) from None
            if spec.check is not None and not spec.check(val):
                raise ConfigError(f"{key} = {raw[key]} violates constraint: must be {spec.rule}", key)
            values[key] = val
        else:
            values[key] = spec.default

    if values["model.kind"] == "bistable" and "model.a" not in raw:
        raise ConfigError("model.a is required when model.kind = bistable (a in (0, 1))", "model.a")
    if values["init.kind"] == "file" and not values["init.file"]:
        raise ConfigError("init.file is required when init.kind = file", "init.file")
    if values["init.lo"] > values["init.hi"]:
        raise ConfigError("init.lo must not exceed init.hi", "init.lo")
    if values["init.kind"] == "cosine" and abs(values["init.amplitude"]) > values["init.base"]:
        raise ConfigError("init.amplitude exceeds init.base: initial density would go negative", "init.amplitude")
    return SimConfig(values)


def load_config(path) -> SimConfig:
    with open(path) as fh:
        return parse_config(fh.read())
