"""JSON run configuration with command-line overrides."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

from .fields import GridSpec
from .scattering import DEFAULT_GUARD, ReflectionCoefficient, ScatteringData, validate


class ConfigError(ValueError):
    pass


DEFAULTS: dict = {
    "lambdas": [],
    "mus0": [],
    "guard_delta": DEFAULT_GUARD,
    "reflection": {"family": "none"},
    "grid": None,
    "halfline": {"P": None, "M": None, "dp": 0.05},
    "solver": {"tol": 1e-10, "max_iter": 200},
    "output": None,
    "seed": 0,
    "residual": {"source": "nsoliton", "input": None, "order_min": 1.8, "order_max": 2.2, "max_linf": None},
    "lax": {"t": None, "xi_re": 0.0, "xi_im": -0.45, "control_factor": 100.0,
            "order_min": 1.8, "order_max": 2.2},
    "asymptotics": {"T_values": [10.0, 20.0, 30.0], "eta_min": -5.0, "eta_max": 5.0, "n_eta": 201,
                    "tolerance": 1e-5, "floor": 1e-14},
    "cn": {"store_every": 100, "inner_tol": 1e-12, "tolerance": 5e-3},
}


@dataclass
class RunConfig:
    data: ScatteringData
    refl: ReflectionCoefficient
    grid: GridSpec | None
    halfline: dict
    solver: dict
    output: Path | None
    seed: int
    options: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    def section(self, name: str) -> dict:
        return self.options[name]


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def apply_override(raw: dict, assignment: str) -> None:
    """Apply ``dotted.key=value``; the value is parsed as JSON, falling back to a plain string."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    key, text = assignment.split("=", 1)
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        value = text
    parts = key.strip().split(".")
    node = raw
    for p in parts[:-1]:
        if node.get(p) is None:
            node[p] = {}
        if not isinstance(node[p], dict):
            raise ConfigError(f"cannot override below non-object key {p!r}")
        node = node[p]
    node[parts[-1]] = value


def load_config(path: str | Path | None, overrides: list[str] | None = None,
                flags: dict | None = None) -> RunConfig:
    """Read the config file (optional), apply ``--set`` overrides then explicit flags."""
    raw: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} does not exist")
        try:
            raw = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {p} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config root must be an object")
    if "scattering" in raw and isinstance(raw["scattering"], dict):
        raw = _merge(raw, raw.pop("scattering"))
    for ov in overrides or []:
        apply_override(raw, ov)
    for key, value in (flags or {}).items():
        if value is not None:
            apply_override(raw, f"{key}={json.dumps(value)}")
    merged = _merge(DEFAULTS, raw)
    return build(merged)


def build(merged: dict) -> RunConfig:
    try:
        data = validate(merged["lambdas"], merged["mus0"], float(merged["guard_delta"]))
        refl = ReflectionCoefficient.from_dict(merged["reflection"])
        grid = GridSpec.from_dict(merged["grid"]) if merged["grid"] else None
    except (TypeError, KeyError) as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    solver = dict(merged["solver"])
    tol = float(solver["tol"])
    if not 0 < tol <= 1e-2:
        raise ConfigError("solver.tol must lie in (0, 1e-2]")
    if int(solver["max_iter"]) < 1:
        raise ConfigError("solver.max_iter must be positive")
    solver = {"tol": tol, "max_iter": int(solver["max_iter"])}
    hl = dict(merged["halfline"])
    if hl.get("P") is not None and float(hl["P"]) <= 0:
        raise ConfigError("halfline.P must be positive")
    if hl.get("M") is not None and int(hl["M"]) < 2:
        raise ConfigError("halfline.M must be at least 2")
    if hl.get("dp") is not None and float(hl["dp"]) <= 0:
        raise ConfigError("halfline.dp must be positive")
    inp = merged["residual"].get("input")
    if inp is not None and not Path(inp).is_file():
        raise ConfigError(f"residual.input {inp} does not exist")
    options = {k: merged[k] for k in ("residual", "lax", "asymptotics", "cn")}
    out = Path(merged["output"]) if merged["output"] else None
    return RunConfig(data, refl, grid, hl, solver, out, int(merged["seed"]), options, merged)
