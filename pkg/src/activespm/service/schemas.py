"""Request and response bodies of the HTTP service."""
from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field

from ..config import MonitorSettings, ScenarioSettings


class _Body(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelDoc(_Body):
    n_states: int
    p: int
    initial: list[float]
    transition: list[list[float]]
    means: list[list[float]]
    covariance: list[list[float]]


class SessionCreate(_Body):
    init_observations: list[list[float]] = Field(..., min_length=2)
    stream_length: int = Field(..., ge=1)
    monitor: MonitorSettings
    seed: int = 0


class SessionInfo(_Body):
    session_id: str
    t: int
    stream_length: int
    n_states: int
    label_budget: int
    remaining_budget: int
    pending_label: Optional[int] = None


class Observation(_Body):
    y: list[float] = Field(..., min_length=1)


class StepResponse(_Body):
    t: int
    predicted: int
    posterior: list[float]
    label_requested: bool
    label_source: str
    n_states: int
    remaining_budget: int


class LabelBody(_Body):
    state: int = Field(..., ge=1)


class LabelResponse(_Body):
    t: int
    state: int
    n_states: int
    remaining_budget: int


class DecisionRow(_Body):
    t: int
    predicted: int
    labeled: bool
    label_source: str
    true_state_if_labeled: Optional[int]
    entropy: float
    p_exp: Optional[float]
    v2: float
    p_exr: float
    B_t: float
    n_states: int


class SimulateRequest(_Body):
    scenario: ScenarioSettings = ScenarioSettings()
    seed: int = 0


class SimulateResponse(_Body):
    states: list[int]
    observations: list[list[float]]
    t_init: int


class FitRequest(_Body):
    observations: list[list[float]] = Field(..., min_length=2)
    labels: Optional[list[int]] = None
    n_min: int = Field(1, ge=1)
    n_max: int = Field(3, ge=1)


class FitResponse(_Body):
    model: ModelDoc
    log_likelihood: float
    aic: dict[int, float]
    predicted: list[int]


class Health(_Body):
    status: Literal["ok"] = "ok"
    version: str
