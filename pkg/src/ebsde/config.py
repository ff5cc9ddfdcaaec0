"""Experiment configuration: flat ``section.key = value`` files, presets and validation.

Grammar, one statement per line::

    # comment
    preset = example1          # optional, applied first
    seed = 7
    model.mu = 1.5
    model.kappa = [0.9, 0.9]   # Python literals: numbers, strings, lists, True/False, None
    driver.kind = "example1"   # bare words are read as strings

Later lines override earlier ones; unknown keys are rejected.
"""
from __future__ import annotations

import ast
import hashlib
import json
import math
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelCfg(_Section):
    drift: Literal["ou", "affine"] = "ou"
    mu: float = 1.5
    slope: float | None = None
    intercept: float = 0.0
    kappa: float | list[float] = 0.8
    v0: float = 0.0

    @field_validator("mu")
    @classmethod
    def _positive(cls, v):
        if v <= 0:
            raise ValueError("mu must be positive")
        return v


class GridCfg(_Section):
    h: float = 0.01
    T: float = 1.0
    max_steps: int | None = None

    @field_validator("h", "T")
    @classmethod
    def _positive(cls, v):
        if not (v > 0 and math.isfinite(v)):
            raise ValueError("must be a positive number")
        return v


class DriverCfg(_Section):
    kind: Literal["log", "exp", "power", "example1", "example2"] = "example1"
    C_v: float = 1.0
    delta: float = 0.5
    gamma: float = 0.5
    theta: float = 0.8
    b: float = 3.0
    constraint: Literal["full", "box", "axis"] = "full"
    box_lo: list[float] = Field(default_factory=list)
    box_hi: list[float] = Field(default_factory=list)
    free: list[int] = Field(default_factory=lambda: [0])
    truncate_at: float | None = None


class TrainCfg(_Section):
    solver: Literal["gebsde", "laebsde"] = "gebsde"
    batch: int = 64
    steps: int = 10000
    lr: float = 3e-4
    seed: int | None = None
    resample: bool = False
    lr_decay: bool = False
    eval_batch: int | None = None
    eval_every: int = 100
    zero_init: bool = False
    y0: float | None = None
    K: float | None = None
    checkpoint: str = "checkpoint.json"

    @field_validator("batch", "eval_every")
    @classmethod
    def _at_least_one(cls, v):
        if v < 1:
            raise ValueError("must be >= 1")
        return v


class EstimatorCfg(_Section):
    method: Literal["auto", "ratio", "linear_exp", "cole_hopf", "regression"] = "auto"
    M: int = 10000
    reps: int = 1
    K: float | None = None
    y0: float = 0.0
    degree: int = 4


class SimulateCfg(_Section):
    n_paths: int = 1000
    dump: bool = False


class EvaluateCfg(_Section):
    n_paths: int | None = None
    pinned: bool = False


class TableCfg(_Section):
    which: Literal["lambda", "methods", "err_h", "integral"] = "lambda"
    h_list: list[float] = Field(default_factory=lambda: [0.05, 0.02, 0.01])
    M_list: list[int] = Field(default_factory=lambda: [1000, 10000])
    reps: int = 10
    trainings: int = 2
    lambda_shift: float = 0.1
    n_paths: int = 20000


class UtilityCfg(_Section):
    kind: Literal["auto", "log", "exp", "power"] = "auto"
    x0: float = 1.0
    x_min: float = 0.1
    x_max: float = 2.0
    n_x: int = 20
    path_index: int = 0
    n_paths: int = 2000
    u0_x0: float | None = None


class OutputCfg(_Section):
    dir: str = "out"


class ExperimentConfig(_Section):
    preset: str | None = None
    seed: int = 0
    threads: int = 1
    model: ModelCfg = Field(default_factory=ModelCfg)
    grid: GridCfg = Field(default_factory=GridCfg)
    driver: DriverCfg = Field(default_factory=DriverCfg)
    train: TrainCfg = Field(default_factory=TrainCfg)
    estimator: EstimatorCfg = Field(default_factory=EstimatorCfg)
    simulate: SimulateCfg = Field(default_factory=SimulateCfg)
    evaluate: EvaluateCfg = Field(default_factory=EvaluateCfg)
    table: TableCfg = Field(default_factory=TableCfg)
    utility: UtilityCfg = Field(default_factory=UtilityCfg)
    output: OutputCfg = Field(default_factory=OutputCfg)

    @model_validator(mode="after")
    def _threads(self):
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        return self

    @property
    def train_seed(self) -> int:
        return self.seed if self.train.seed is None else self.train.seed

    def canonical(self) -> dict:
        """Everything that affects results (thread count and output location excluded)."""
        doc = self.model_dump()
        doc.pop("threads")
        doc.pop("output")
        doc.pop("preset")
        return doc

    def hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


PRESETS: dict[str, dict] = {
    "example1": {
        "model.mu": 1.5, "model.kappa": 0.8, "model.v0": 0.0,
        "driver.kind": "example1", "driver.C_v": 1.0,
        "grid.h": 0.01, "grid.T": 1.0,
        "train.batch": 64, "train.lr": 3e-4, "train.steps": 10000,
    },
    "example2": {
        "model.mu": 1.0, "model.kappa": math.sqrt(2.0), "model.v0": 0.0,
        "driver.kind": "example2", "driver.C_v": 0.75,
        "grid.h": 0.01, "grid.T": 1.0,
        "train.batch": 64, "train.lr": 3e-4, "train.steps": 10000,
    },
    # Monte Carlo tables use a common parameter set for both benchmarks
    "example1-mc": {
        "model.mu": 2.0, "model.kappa": 2.0, "model.v0": 0.5,
        "driver.kind": "example1", "driver.C_v": 1.0, "grid.h": 0.01, "estimator.M": 10000,
    },
    "example2-mc": {
        "model.mu": 2.0, "model.kappa": 2.0, "model.v0": 0.5,
        "driver.kind": "example2", "driver.C_v": 1.0, "grid.h": 0.01, "estimator.M": 10000,
    },
    "power-5.3": {
        "model.mu": 3.0, "model.kappa": 1.3, "model.v0": 0.0,
        "driver.kind": "power", "driver.delta": 0.5, "driver.theta": 0.8, "driver.b": 3.0,
        "grid.h": 0.01, "grid.T": 1.0, "estimator.M": 100000,
        "train.batch": 64, "train.lr": 3e-4, "train.steps": 10000,
    },
    "two-dim-5.3": {
        "model.mu": 3.0, "model.kappa": [1.3 / math.sqrt(2.0), 1.3 / math.sqrt(2.0)], "model.v0": 0.0,
        "driver.kind": "power", "driver.delta": 0.5, "driver.theta": 0.8, "driver.b": 3.0,
        "driver.constraint": "axis", "driver.free": [0],
        "grid.h": 0.01, "grid.T": 1.0,
        "train.batch": 64, "train.lr": 3e-4, "train.steps": 10000,
    },
}


def parse_value(text: str):
    text = text.strip()
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def parse_text(text: str) -> dict:
    """Flat mapping of dotted keys to Python values, in file order."""
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip() if not raw.lstrip().startswith("#") else ""
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value', got {raw!r}")
        key, val = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"line {n}: empty key")
        out[key] = parse_value(val)
    return out


def _nest(flat: dict) -> dict:
    doc: dict = {}
    for key, val in flat.items():
        parts = key.split(".")
        node = doc
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"key {key!r} conflicts with a scalar entry")
        node[parts[-1]] = val
    return doc


def build_config(flat: dict | None = None, preset: str | None = None) -> ExperimentConfig:
    """Apply the preset (argument or ``preset`` key), then the flat overrides, then validate."""
    flat = dict(flat or {})
    name = preset or flat.get("preset")
    merged = {}
    if name is not None:
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        merged.update(PRESETS[name])
        merged["preset"] = name
    merged.update({k: v for k, v in flat.items() if k != "preset"})
    try:
        return ExperimentConfig.model_validate(_nest(merged))
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path=None, overrides: dict | None = None, preset: str | None = None) -> ExperimentConfig:
    flat = parse_text(Path(path).read_text()) if path else {}
    flat.update(overrides or {})
    return build_config(flat, preset)


def dump_text(cfg: ExperimentConfig) -> str:
    """Serialize to the flat format; ``load_config`` of the result gives an equal config."""
    lines = []

    def walk(prefix, node):
        for k, v in node.items():
            key = f"{prefix}{k}"
            if isinstance(v, dict):
                walk(key + ".", v)
            else:
                lines.append(f"{key} = {v!r}")

    walk("", cfg.model_dump())
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- objects from a config


def build_model(cfg: ExperimentConfig):
    from .sde import FactorModel

    m = cfg.model
    if m.drift == "ou":
        return FactorModel.ou(m.mu, m.kappa, m.v0)
    slope = -m.mu if m.slope is None else m.slope
    return FactorModel.affine(slope, m.intercept, m.kappa, m.v0)


def build_grid(cfg: ExperimentConfig):
    from .sde import TimeGrid

    try:
        return TimeGrid(cfg.grid.h, cfg.grid.T, cfg.grid.max_steps)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def build_driver(cfg: ExperimentConfig):
    from .drivers import ConvexSet, Driver, RiskPremiumSpec

    d = cfg.driver
    dim = len(cfg.model.kappa) if isinstance(cfg.model.kappa, list) else 1
    if d.kind == "example1":
        drv = Driver.example1(d.C_v, dim)
    elif d.kind == "example2":
        drv = Driver.example2(d.C_v, dim)
    else:
        theta = RiskPremiumSpec.truncated_linear(d.theta, d.b, dim)
        if d.constraint == "full":
            pi = ConvexSet.full()
        elif d.constraint == "box":
            pi = ConvexSet.box(d.box_lo, d.box_hi)
        else:
            pi = ConvexSet.axis(d.free)
        try:
            if d.kind == "log":
                drv = Driver.log(theta, pi)
            elif d.kind == "exp":
                drv = Driver.exp(d.gamma, theta, pi)
            else:
                drv = Driver.power(d.delta, theta, pi)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    return drv.with_truncation(d.truncate_at) if d.truncate_at else drv
