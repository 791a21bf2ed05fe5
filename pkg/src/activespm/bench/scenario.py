"""Synthetic monitoring streams with rare, alternating out-of-control runs."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..phmm import ModelParams


@dataclass(frozen=True)
class ScenarioConfig:
    p: int = 10
    delta: float = 3.0
    budget_B: float = 0.2
    w_exp: float = 0.5
    t_init: int = 100
    t_stream: int = 500
    ic_run_range: tuple = (60, 85)
    oc_run_len: int = 5
    replicates: int = 16
    root_seed: int = 0

    def __post_init__(self):
        lo, hi = self.ic_run_range
        if lo > hi or lo < 1:
            raise ValueError("ic_run_range must be a positive interval [lo, hi]")
        if min(self.p, self.t_init, self.t_stream, self.oc_run_len, self.replicates) < 1:
            raise ValueError("counts must be positive")
        if self.delta < 0:
            raise ValueError("delta must be non-negative")

    @property
    def switch_time(self) -> int:
        """Last absolute time (1-based) at which an OC run uses state 2."""
        return self.t_init + self.t_stream // 2


def ar_covariance(p: int, rho: float = 0.75) -> np.ndarray:
    idx = np.arange(p)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def state_means(p: int, delta: float) -> np.ndarray:
    """Rows: IC mean (zero), first OC shift, second OC shift."""
    means = np.zeros((3, p))
    means[1, 0] = delta
    if p > 1:
        means[2, 1] = delta
    else:
        means[2, 0] = delta
    return means


def true_model(cfg: ScenarioConfig, n_states: int = 3, diag: float = 0.99) -> ModelParams:
    """Generator parameters packaged as a pHMM (used for oracle starts)."""
    initial = np.zeros(n_states)
    initial[0] = 1.0
    A = np.full((n_states, n_states), (1.0 - diag) / max(n_states - 1, 1))
    np.fill_diagonal(A, diag if n_states > 1 else 1.0)
    return ModelParams(initial, A, state_means(cfg.p, cfg.delta)[:n_states], ar_covariance(cfg.p))


def scenario_seed(cfg: ScenarioConfig, replicate: int) -> np.random.SeedSequence:
    """Stream seed from the cell coordinates that shape the data only."""
    return np.random.SeedSequence([cfg.root_seed, cfg.p, int(round(cfg.delta * 1000)), replicate])


def generate_states(cfg: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    lo, hi = cfg.ic_run_range
    states = np.ones(cfg.t_init + cfg.t_stream, dtype=np.int64)
    t = cfg.t_init  # 0-based position of the next stream step
    end = cfg.t_init + cfg.t_stream
    while t < end:
        t += int(rng.integers(lo, hi + 1))
        if t >= end:
            break
        oc = 2 if t + 1 <= cfg.switch_time else 3
        states[t:min(t + cfg.oc_run_len, end)] = oc
        t += cfg.oc_run_len
    return states


def generate_scenario(cfg: ScenarioConfig, seed):
    """Return ``(states, observations)`` for ``t_init + t_stream`` steps."""
    rng = np.random.default_rng(seed)
    states = generate_states(cfg, rng)
    means = state_means(cfg.p, cfg.delta)
    L = np.linalg.cholesky(ar_covariance(cfg.p))
    Z = rng.standard_normal((states.size, cfg.p))
    return states, means[states - 1] + Z @ L.T
