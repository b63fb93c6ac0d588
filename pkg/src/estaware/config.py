"""Scenario configuration: strict JSON loading into dataclasses.

Unknown keys anywhere raise ``ConfigError``. Matrices may be given as a
full nested list, a flat list (diagonal) or a scalar (multiple of the
identity).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .deviation import DeviationOptions
from .dynamics import LtiSystem, cw_system, double_integrator_2d, mean_motion
from .scvx import ScvxOptions
from .solver_kernel import QpOptions
from .uncertainty import (ConstantRadiusModel, IlluminationRadiusModel, QuadraticRadiusModel,
                          UncertaintyModel)


class ConfigError(ValueError):
    pass


def _build(cls, data: Any, where: str):
    """Instantiate dataclass ``cls`` from ``data``, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for k, v in data.items():
        sub = _NESTED.get((cls, k))
        kwargs[k] = _build(sub, v, f"{where}.{k}") if sub is not None and v is not None else v
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def matrix(spec, n: int, where: str) -> np.ndarray:
    a = np.asarray(spec, dtype=float)
    if a.ndim == 0:
        return float(a) * np.eye(n)
    if a.ndim == 1 and a.size == n:
        return np.diag(a)
    if a.shape == (n, n):
        return a
    raise ConfigError(f"{where}: expected scalar, length-{n} diagonal or {n}x{n} matrix")


def vector(spec, n: int, where: str) -> np.ndarray:
    a = np.asarray(spec, dtype=float).ravel()
    if a.size != n:
        raise ConfigError(f"{where}: expected length {n}, got {a.size}")
    return a


@dataclass
class SystemConfig:
    kind: str = "double_integrator"  # "double_integrator" | "cw"
    dt: float = 0.25
    mean_motion: float | None = None  # rad/s; derived from semi_major_axis when None
    semi_major_axis: float = 6.778e6

    def __post_init__(self):
        if self.kind not in ("double_integrator", "cw"):
            raise ConfigError(f"system.kind: unknown system {self.kind!r}")
        if not self.dt > 0:
            raise ConfigError("system.dt must be positive")

    def build(self) -> LtiSystem:
        if self.kind == "double_integrator":
            return double_integrator_2d(self.dt)
        n = self.mean_motion if self.mean_motion is not None else mean_motion(a=self.semi_major_axis)
        return cw_system(n, self.dt)


@dataclass
class UncertaintyConfig:
    kind: str = "quadratic"  # "quadratic" | "illumination" | "constant"
    K: float = 0.1
    source: list = field(default_factory=lambda: [0.0, 0.0])
    r0: float = 0.1
    sun_direction: list = field(default_factory=lambda: [1.0, 0.0, 0.0])
    a2: float = 0.5
    a0: float = 0.05
    c: float = 0.1

    def __post_init__(self):
        if self.kind not in ("quadratic", "illumination", "constant"):
            raise ConfigError(f"uncertainty.kind: unknown model {self.kind!r}")

    def build(self, sys: LtiSystem) -> UncertaintyModel:
        try:
            if self.kind == "quadratic":
                return QuadraticRadiusModel(sys.C, self.K, vector(self.source, sys.ny, "uncertainty.source"),
                                            self.r0)
            if self.kind == "illumination":
                return IlluminationRadiusModel(sys.C, vector(self.sun_direction, 3, "uncertainty.sun_direction"),
                                               self.a2, self.a0)
            return ConstantRadiusModel(sys.C, self.c)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"uncertainty: {exc}") from exc


@dataclass
class PlannerConfig:
    kind: str = "deviation"  # "deviation" | "scvx"
    horizon: int = 20
    x0: list = field(default_factory=list)
    Q: Any = 1.0
    R: Any = 1.0
    Qf: Any = None
    eps: float = 1.0
    # deviation planner
    gamma: float = 1.0
    gamma_sweep: list = field(default_factory=list)
    deviation: DeviationOptions = field(default_factory=DeviationOptions)
    # rendezvous planner
    x_goal: list | None = None
    d: float = 5.0
    lambda_obs: float = 0.0
    u_max: float = 1.0
    scvx: ScvxOptions = field(default_factory=ScvxOptions)

    def __post_init__(self):
        if self.kind not in ("deviation", "scvx"):
            raise ConfigError(f"planner.kind: unknown planner {self.kind!r}")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ConfigError("planner.horizon must be a positive integer")
        self.horizon = int(self.horizon)
        if self.gamma < 0 or any(g < 0 for g in self.gamma_sweep):
            raise ConfigError("planner.gamma must be nonnegative")
        if self.lambda_obs < 0:
            raise ConfigError("planner.lambda_obs must be nonnegative")
        if not self.eps > 0:
            raise ConfigError("planner.eps must be positive")


@dataclass
class ObserverConfig:
    mode: str = "riccati"  # "riccati" | "poles"
    poles: list | None = None

    def __post_init__(self):
        if self.mode not in ("riccati", "poles"):
            raise ConfigError(f"evaluation.observer.mode: unknown mode {self.mode!r}")
        if self.mode == "poles" and not self.poles:
            raise ConfigError("evaluation.observer.poles required for pole placement")


@dataclass
class EvaluationConfig:
    runs: int = 1000
    seed: int = 0
    observer: ObserverConfig = field(default_factory=ObserverConfig)
    x0_offset: list | None = None  # default: magnitude eps along the all-ones direction
    chunk: int = 2000

    def __post_init__(self):
        if int(self.runs) != self.runs or self.runs < 1:
            raise ConfigError("evaluation.runs must be a positive integer")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ConfigError("evaluation.seed must be a nonnegative integer")
        self.runs, self.seed = int(self.runs), int(self.seed)


@dataclass
class ValidationConfig:
    ranges: list = field(default_factory=lambda: list(range(10, 50, 5)))
    sun_angles: list = field(default_factory=lambda: list(range(0, 195, 15)))
    rotations_per_angle: int = 50
    radial_factor: int = 12
    c0: float = 0.05
    c1: float = 0.002
    c2: float = 2e-5
    noise: float = 0.2


@dataclass
class ScenarioConfig:
    name: str = "scenario"
    system: SystemConfig = field(default_factory=SystemConfig)
    uncertainty: UncertaintyConfig = field(default_factory=UncertaintyConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    validation: ValidationConfig = field(default_factory=ValidationConfig)
    output: str = "out"

    def to_dict(self) -> dict:
        return _jsonable(dataclasses.asdict(self))

    def digest(self) -> str:
        """Short SHA-256 of the canonical JSON form (after overrides)."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


_NESTED = {
    (ScenarioConfig, "system"): SystemConfig,
    (ScenarioConfig, "uncertainty"): UncertaintyConfig,
    (ScenarioConfig, "planner"): PlannerConfig,
    (ScenarioConfig, "evaluation"): EvaluationConfig,
    (ScenarioConfig, "validation"): ValidationConfig,
    (PlannerConfig, "deviation"): DeviationOptions,
    (PlannerConfig, "scvx"): ScvxOptions,
    (ScvxOptions, "qp"): QpOptions,
    (EvaluationConfig, "observer"): ObserverConfig,
}


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, np.generic):
        return v.item()
    return v


def parse_config(data: dict) -> ScenarioConfig:
    return _build(ScenarioConfig, data, "config")


def load_config(path) -> ScenarioConfig:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_config(data)


def bundled_scenarios() -> dict[str, Path]:
    root = Path(__file__).parent / "scenarios"
    return {p.stem: p for p in sorted(root.glob("*.json"))}
