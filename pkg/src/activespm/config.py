"""JSON configuration documents for the command-line tools and the service.

Every document carries ``schema_version`` and rejects unknown fields, so a
typo in a grid definition fails loudly instead of silently running the
defaults.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError

SCHEMA_VERSION = 1


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class InitSettings(_Strict):
    window_k: int = Field(5, ge=1)
    n_try: int = Field(10, ge=1)
    diag_init: float = Field(0.99, gt=0.0, lt=1.0)
    min_separation: float = Field(0.5, ge=0.0)

    def build(self):
        from .init import InitSearchConfig
        return InitSearchConfig(**self.model_dump())


class ScenarioSettings(_Strict):
    p: int = Field(10, ge=1)
    delta: float = Field(3.0, ge=0.0)
    budget_B: float = Field(0.2, gt=0.0, lt=1.0)
    w_exp: float = Field(0.5, ge=0.0, le=1.0)
    t_init: int = Field(100, ge=1)
    t_stream: int = Field(500, ge=1)
    ic_run_range: tuple[int, int] = (60, 85)
    oc_run_len: int = Field(5, ge=1)

    @field_validator("ic_run_range")
    @classmethod
    def _range(cls, v):
        if v[0] < 1 or v[0] > v[1]:
            raise ValueError("ic_run_range must be [lo, hi] with 1 <= lo <= hi")
        return v

    def build(self, replicates: int = 1, root_seed: int = 0):
        from .bench.scenario import ScenarioConfig
        return ScenarioConfig(**self.model_dump(), replicates=replicates, root_seed=root_seed)


class MonitorSettings(_Strict):
    budget_B: float = Field(..., gt=0.0, lt=1.0)
    w_exr: float = Field(0.5, ge=0.0, le=1.0)
    lam: float = Field(0.3, gt=0.0, le=1.0)
    bootstrap_m: int = Field(199, ge=1)
    bootstrap_len: int = Field(50, ge=1)
    strategy: Literal["proposed", "random", "equispaced", "none"] = "proposed"
    exploration_gate: bool = False
    budget_gate: Literal["spending", "printed"] = "spending"
    challenger: bool = True
    state_ceiling: Literal["observed", "current"] = "observed"
    refit_iter: int = Field(10, ge=1)
    full_iter: int = Field(100, ge=1)
    tol: float = Field(1e-6, gt=0.0)
    init: InitSettings = InitSettings()

    def build(self):
        from .monitor import MonitorConfig
        d = self.model_dump(exclude={"init"})
        return MonitorConfig(**d, init_cfg=self.init.build())


class MethodSettings(_Strict):
    alpha: float = Field(0.01, gt=0.0, lt=1.0)
    lam: float = Field(0.3, gt=0.0, le=1.0)
    mewma_reference: Literal["all", "initial"] = "all"
    bootstrap_m: int = Field(199, ge=1)
    bootstrap_len: int = Field(50, ge=1)
    exploration_gate: bool = False
    budget_gate: Literal["spending", "printed"] = "spending"
    challenger: bool = True
    state_ceiling: Literal["observed", "current"] = "observed"
    init: InitSettings = InitSettings()

    def build(self):
        from .bench.methods import MethodOptions
        d = self.model_dump(exclude={"init"})
        return MethodOptions(**d, init_cfg=self.init.build())


class SimulateConfig(_Strict):
    """Either the benchmark scenario generator or a fitted model (with
    optional fixed first/last states)."""

    schema_version: Literal[1]
    command: Literal["simulate"] = "simulate"
    seed: int = 0
    source: Literal["scenario", "model"] = "scenario"
    scenario: ScenarioSettings = ScenarioSettings()
    model_path: Optional[str] = None
    length: Optional[int] = Field(None, ge=1)
    start_state: Optional[int] = Field(None, ge=1)
    end_state: Optional[int] = Field(None, ge=1)

    @model_validator(mode="after")
    def _model_source(self):
        if self.source == "model" and (self.model_path is None or self.length is None):
            raise ValueError("source 'model' needs model_path and length")
        return self


class FitConfig(_Strict):
    schema_version: Literal[1]
    command: Literal["fit"] = "fit"
    seed: int = 0
    stream_path: str
    label_column: str = "label"
    n_min: int = Field(1, ge=1)
    n_max: int = Field(3, ge=1)
    max_iter: int = Field(100, ge=1)
    tol: float = Field(1e-6, gt=0.0)
    init: InitSettings = InitSettings()

    @model_validator(mode="after")
    def _bounds(self):
        if self.n_max < self.n_min:
            raise ValueError("n_max must be >= n_min")
        return self


class MonitorRunConfig(_Strict):
    schema_version: Literal[1]
    command: Literal["monitor"] = "monitor"
    seed: int = 0
    stream_path: str
    oracle_path: str
    t_init: int = Field(..., ge=2)
    monitor: MonitorSettings
    snapshots: bool = True


class BenchmarkConfig(_Strict):
    schema_version: Literal[1]
    command: Literal["benchmark"] = "benchmark"
    seed: int = 0
    methods: tuple[str, ...] = ("proposed", "mewma", "unsupervised", "random", "equispaced")
    dims: tuple[int, ...] = (10,)
    deltas: tuple[float, ...] = (0.0, 0.6, 1.2, 1.8, 2.4, 3.0)
    budgets: tuple[float, ...] = (0.01, 0.0575, 0.105, 0.1525, 0.2)
    w_exps: tuple[float, ...] = (0.5,)
    replicates: int = Field(16, ge=1)
    scenario: ScenarioSettings = ScenarioSettings()
    options: MethodSettings = MethodSettings()
    record_runtime: bool = False
    plots: bool = True

    @field_validator("methods")
    @classmethod
    def _methods(cls, v):
        from .bench.methods import METHODS
        bad = [m for m in v if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}; choose from {list(METHODS)}")
        return v

    @field_validator("budgets")
    @classmethod
    def _budgets(cls, v):
        if any(not 0.0 < b < 1.0 for b in v):
            raise ValueError("budgets must lie in (0, 1)")
        return v

    def build(self, seed: Optional[int] = None, replicates: Optional[int] = None):
        from .bench.grid import GridSpec
        reps = self.replicates if replicates is None else replicates
        root = self.seed if seed is None else seed
        return GridSpec(methods=self.methods, dims=self.dims, deltas=self.deltas,
                        budgets=self.budgets, w_exps=self.w_exps, replicates=reps,
                        root_seed=root, base=self.scenario.build(reps, root),
                        options=self.options.build())


CONFIG_TYPES = {"simulate": SimulateConfig, "fit": FitConfig, "monitor": MonitorRunConfig,
                "benchmark": BenchmarkConfig}


def _describe(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in err["loc"]) or "<root>"
        lines.append(f"field '{loc}': {err['msg']}")
    return "; ".join(lines)


def parse_config(text: str, command: str, source: str = "<config>"):
    """Validate a JSON document for ``command``; raises ConfigError with a
    line/column (syntax) or field path (content) diagnostic."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{source}: the configuration must be a JSON object")
    declared = doc.get("command", command)
    if declared != command:
        raise ConfigError(f"{source}: field 'command': expected '{command}', got '{declared}'")
    try:
        return CONFIG_TYPES[command].model_validate(doc)
    except ValidationError as exc:
        raise ConfigError(f"{source}: {_describe(exc)}") from None


def load_config(path, command: str):
    return parse_config(Path(path).read_text(encoding="utf-8"), command, str(path))
