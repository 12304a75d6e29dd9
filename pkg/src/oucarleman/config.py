"""Strict JSON experiment configuration: load, validate, round-trip, hash."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import ou
from .quadratic import QuadraticSystem

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "save_config", "config_hash"]

_ENGINES = ("reference", "dyson_mc", "riemann")


class ConfigError(ValueError):
    def __init__(self, fieldname: str, message: str):
        self.fieldname = fieldname
        super().__init__(f"config field '{fieldname}': {message}")


def _require(cond: bool, fieldname: str, message: str):
    if not cond:
        raise ConfigError(fieldname, message)


def _matrix(raw, fieldname: str, rows: int, cols: int) -> list:
    _require(isinstance(raw, list) and len(raw) == rows, fieldname,
             f"expected {rows} rows of numbers")
    out = []
    for i, row in enumerate(raw):
        _require(isinstance(row, list) and len(row) == cols, fieldname,
                 f"row {i} must have {cols} entries")
        _require(all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in row),
                 fieldname, f"row {i} has a non-numeric entry")
        out.append([float(v) for v in row])
    return out


def _vector(raw, fieldname: str, size: int) -> list:
    _require(isinstance(raw, list) and len(raw) == size, fieldname,
             f"expected a length-{size} numeric array")
    _require(all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in raw),
             fieldname, "non-numeric entry")
    return [float(v) for v in raw]


@dataclass
class ExperimentConfig:
    raw: dict = field(repr=False)
    n: int = 0

    def __post_init__(self):
        r = self.raw
        _require(isinstance(r, dict), "<root>", "top level must be an object")
        sysraw = r.get("system")
        _require(isinstance(sysraw, dict), "system", "missing or not an object")
        n = sysraw.get("n")
        _require(isinstance(n, int) and n >= 1, "system.n", "must be a positive integer")
        self.n = n
        sysraw["f1"] = _matrix(sysraw.get("f1"), "system.f1", n, n)
        sysraw["f2"] = _matrix(sysraw.get("f2"), "system.f2", n, n * n)
        sysraw["theta"] = _matrix(sysraw.get("theta"), "system.theta", n, n)
        sysraw["sigma"] = _matrix(sysraw.get("sigma"), "system.sigma", n, n)
        sysraw["x_init"] = _vector(sysraw.get("x_init"), "system.x_init", n)
        sysraw["f0_init"] = _vector(sysraw.get("f0_init", [0.0] * n), "system.f0_init", n)
        _require(isinstance(r.get("horizon"), (int, float)) and r["horizon"] > 0,
                 "horizon", "must be a positive number")
        order = r.get("carleman_order", 2)
        if isinstance(order, dict):
            _require(set(order) == {"min", "max"} and all(isinstance(v, int) for v in order.values()),
                     "carleman_order", "range form needs integer 'min' and 'max'")
            _require(1 <= order["min"] <= order["max"], "carleman_order", "need 1 <= min <= max")
        else:
            _require(isinstance(order, int) and order >= 1, "carleman_order",
                     "must be a positive integer or a {min,max} object")
        r["carleman_order"] = order
        lchs = r.get("lchs", {})
        _require(isinstance(lchs, dict), "lchs", "must be an object")
        lchs.setdefault("beta", 0.8)
        lchs.setdefault("eps", 1e-2)
        lchs.setdefault("delta", 0.1)
        _require(0.0 < lchs["beta"] < 1.0, "lchs.beta", "must lie in (0, 1)")
        _require(0.0 < lchs["eps"] < 1.0, "lchs.eps", "must lie in (0, 1)")
        _require(0.0 < lchs["delta"] < 1.0, "lchs.delta", "must lie in (0, 1)")
        r["lchs"] = lchs
        mc = r.get("mc", {})
        _require(isinstance(mc, dict), "mc", "must be an object")
        mc.setdefault("duhamel_samples", 128)
        mc.setdefault("dyson_order", 3)
        mc.setdefault("dyson_samples", [8, 4, 2])
        _require(isinstance(mc["duhamel_samples"], int) and mc["duhamel_samples"] >= 1,
                 "mc.duhamel_samples", "must be a positive integer")
        _require(isinstance(mc["dyson_order"], int) and mc["dyson_order"] >= 1,
                 "mc.dyson_order", "must be a positive integer")
        _require(isinstance(mc["dyson_samples"], list)
                 and len(mc["dyson_samples"]) >= mc["dyson_order"]
                 and all(isinstance(v, int) and v >= 1 for v in mc["dyson_samples"]),
                 "mc.dyson_samples", "need one positive integer per series order")
        r["mc"] = mc
        _require(isinstance(r.get("paths", 200), int) and r.get("paths", 200) >= 1,
                 "paths", "must be a positive integer")
        r.setdefault("paths", 200)
        _require(isinstance(r.get("seed", 0), int), "seed", "must be an integer")
        r.setdefault("seed", 0)
        engine = r.setdefault("engine", "reference")
        _require(engine in _ENGINES, "engine", f"must be one of {_ENGINES}")
        gamma = r.setdefault("gamma", None)
        _require(gamma is None or (isinstance(gamma, (int, float)) and gamma > 0),
                 "gamma", "must be a positive number or null")
        r.setdefault("output_dir", "out")
        _require(isinstance(r["output_dir"], str), "output_dir", "must be a string")
        # eager precondition checks on the numeric content
        try:
            self.build_system()
        except ConfigError:
            raise
        except Exception as e:  # noqa: BLE001 - surfaced as a config error
            raise ConfigError("system", str(e)) from e

    # -- accessors ---------------------------------------------------------
    @property
    def horizon(self) -> float:
        return float(self.raw["horizon"])

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def engine(self) -> str:
        return self.raw["engine"]

    @property
    def paths(self) -> int:
        return int(self.raw["paths"])

    @property
    def output_dir(self) -> str:
        return self.raw["output_dir"]

    def orders(self) -> list:
        order = self.raw["carleman_order"]
        if isinstance(order, dict):
            return list(range(order["min"], order["max"] + 1))
        return [order]

    def build_system(self) -> QuadraticSystem:
        s = self.raw["system"]
        proc = ou.OUProcess(Theta=np.array(s["theta"]), Sigma=np.array(s["sigma"]),
                            f0_init=np.array(s["f0_init"]))
        return QuadraticSystem(n=self.n, F1=np.array(s["f1"]), F2=np.array(s["f2"]),
                               x_init=np.array(s["x_init"]), ou=proc)

    def to_json(self) -> str:
        return json.dumps(self.raw, indent=2, sort_keys=True)


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as e:
        raise ConfigError("<file>", f"not valid JSON: {e}") from e
    return ExperimentConfig(raw=raw)


def save_config(cfg: ExperimentConfig, path: str) -> None:
    with open(path, "w") as fh:
        fh.write(cfg.to_json() + "\n")


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(cfg.to_json().encode()).hexdigest()[:12]
