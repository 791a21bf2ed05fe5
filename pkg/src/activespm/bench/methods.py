"""The monitoring strategies compared in the simulation study.

Every strategy receives the same in-control initial block and stream. The
pHMM-based ones share all fitting machinery and differ only in who decides
to buy labels.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy import linalg
from scipy.stats import chi2

from ..errors import ModelSelectionError, StarvedStateError, ImpossibleLabelingError
from ..init import InitSearchConfig, init_search
from ..monitor import MonitorConfig, MonitorResult, run_stream
from ..phmm import ModelParams, ObservationStream, fit
from ..stats import robust_location_scatter
from .scenario import ScenarioConfig, ar_covariance, generate_scenario, scenario_seed, state_means

METHODS = ("proposed", "mewma", "unsupervised", "random", "equispaced",
           "proposed_true", "proposed_both")
ACTIVE_METHODS = ("proposed", "random", "equispaced", "proposed_true", "proposed_both")
MEWMA_REFERENCES = ("all", "initial")


@dataclass(frozen=True)
class MethodOptions:
    """Settings shared by every strategy of a benchmark run."""

    alpha: float = 0.01
    lam: float = 0.3
    mewma_reference: str = "all"
    bootstrap_m: int = 199
    bootstrap_len: int = 50
    exploration_gate: bool = False
    budget_gate: str = "spending"
    challenger: bool = True
    state_ceiling: str = "observed"
    init_cfg: InitSearchConfig = field(default_factory=InitSearchConfig)

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.mewma_reference not in MEWMA_REFERENCES:
            raise ValueError(f"mewma_reference must be one of {MEWMA_REFERENCES}")

    def monitor_config(self, budget_B: float, w_exp: float, strategy: str) -> MonitorConfig:
        return MonitorConfig(budget_B=budget_B, w_exr=1.0 - w_exp, lam=self.lam,
                             bootstrap_m=self.bootstrap_m, bootstrap_len=self.bootstrap_len,
                             init_cfg=self.init_cfg, strategy=strategy,
                             exploration_gate=self.exploration_gate,
                             budget_gate=self.budget_gate, challenger=self.challenger,
                             state_ceiling=self.state_ceiling)


def mewma_statistics(init_observations, observations, lam: float = 0.3,
                     reference: str = "all") -> np.ndarray:
    """V^2 of a MEWMA chart around a robust in-control estimate, with the
    accumulator starting at zero before the first stream observation.

    ``reference="all"`` estimates the in-control mean and covariance from
    the initial block and the stream together, relying on the trimming to
    discard the (rare) out-of-control rows; ``"initial"`` uses the initial
    block only, which with ~100 rows inflates the false-alarm rate well
    above the nominal level.
    """
    Y0 = np.atleast_2d(np.asarray(init_observations, dtype=float))
    Y = np.atleast_2d(np.asarray(observations, dtype=float))
    if reference not in MEWMA_REFERENCES:
        raise ValueError(f"reference must be one of {MEWMA_REFERENCES}")
    est = robust_location_scatter(np.vstack([Y0, Y]) if reference == "all" else Y0)
    L = linalg.cholesky(est.scatter, lower=True)
    z = np.zeros(Y.shape[1])
    Z = np.empty_like(Y)
    for t, y in enumerate(Y):
        z = lam * (y - est.location) + (1.0 - lam) * z
        Z[t] = z
    W = linalg.solve_triangular(L, Z.T, lower=True)
    return (2.0 - lam) / lam * np.sum(W * W, axis=0)


def competitor_mewma(init_observations, observations, alpha: float = 0.01,
                     lam: float = 0.3, reference: str = "all") -> np.ndarray:
    """Binary classification: 2 (OC) when V^2 exceeds the chi-square
    ``1 - alpha`` quantile, else 1."""
    v2 = mewma_statistics(init_observations, observations, lam, reference)
    ucl = chi2.ppf(1.0 - alpha, np.atleast_2d(observations).shape[1])
    return np.where(v2 > ucl, 2, 1).astype(np.int64)


def competitor_unsupervised(init_stream: ObservationStream, observations, cfg: MonitorConfig,
                            rng_seed: int = 0, initializer=None) -> MonitorResult:
    """The pHMM pipeline without any labels beyond the initial block."""
    return run_stream(init_stream, observations, _no_oracle, replace(cfg, strategy="none"),
                      rng_seed, initializer)


def competitor_random(init_stream, observations, oracle, cfg: MonitorConfig, rng_seed: int = 0,
                      initializer=None) -> MonitorResult:
    return run_stream(init_stream, observations, oracle, replace(cfg, strategy="random"),
                      rng_seed, initializer)


def competitor_equispaced(init_stream, observations, oracle, cfg: MonitorConfig,
                          rng_seed: int = 0, initializer=None) -> MonitorResult:
    return run_stream(init_stream, observations, oracle, replace(cfg, strategy="equispaced"),
                      rng_seed, initializer)


def _no_oracle(t: int) -> int:
    raise RuntimeError(f"no labels are available (requested t={t})")


def true_start(scen: ScenarioConfig, n_states: int) -> ModelParams:
    """Start at the generating means (the first ``n_states`` of them) and
    covariance, with the usual IC-first initial law and sticky transitions."""
    means = state_means(scen.p, scen.delta)[:n_states]
    initial = np.zeros(n_states)
    initial[0] = 1.0
    A = np.full((n_states, n_states), 0.01 / max(n_states - 1, 1))
    np.fill_diagonal(A, 0.99 if n_states > 1 else 1.0)
    return ModelParams(initial, A, means, ar_covariance(scen.p))


def make_true_initializer(scen: ScenarioConfig, combine: bool = False) -> Callable:
    """Initializer starting from the generating parameters.

    State counts beyond the generator's three fall back to the data-driven
    search. With ``combine`` the data-driven fit also runs and the more
    likely of the two is kept.
    """

    def initializer(stream, n_states, cfg=InitSearchConfig(), ladder=None, **kw):
        ladder = {} if ladder is None else ladder
        searched = None
        if combine or n_states > 3:
            searched = init_search(stream, n_states, cfg, ladder)
        if n_states > 3:
            return searched
        try:
            res = fit(stream, true_start(scen, n_states))
        except (ImpossibleLabelingError, StarvedStateError):
            if searched is None:
                raise ModelSelectionError(f"true start failed for N={n_states}")
            return searched
        ladder.setdefault(n_states, res.model)
        if searched is not None and searched.posterior.log_likelihood > res.posterior.log_likelihood:
            return searched
        return res

    return initializer


@dataclass
class CellOutcome:
    predictions: np.ndarray
    labels_used: int
    runtime_ms: float
    result: Optional[MonitorResult] = None


def monitor_seed(scen: ScenarioConfig, replicate: int) -> int:
    """Seed for bootstrap draws and random labeling; shared by all methods."""
    return int(scenario_seed(scen, replicate).generate_state(1)[0])


def run_method(method: str, scen: ScenarioConfig, replicate: int,
               options: MethodOptions = MethodOptions(), data=None) -> CellOutcome:
    """Run one strategy on the replicate's stream; ``data`` may carry a
    pre-generated ``(states, observations)`` pair."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    states, Y = generate_scenario(scen, scenario_seed(scen, replicate)) if data is None else data
    Y0, Ys = Y[: scen.t_init], Y[scen.t_init:]
    started = time.perf_counter()
    if method == "mewma":
        pred = competitor_mewma(Y0, Ys, options.alpha, options.lam, options.mewma_reference)
        return CellOutcome(pred, 0, 1000.0 * (time.perf_counter() - started))

    init_stream = ObservationStream.with_initial_ic(Y0, scen.t_init)
    strategy = {"unsupervised": "none"}.get(method, method)
    if method in ("proposed_true", "proposed_both"):
        strategy = "proposed"
    cfg = options.monitor_config(scen.budget_B, scen.w_exp, strategy)
    initializer = None
    if method == "proposed_true":
        initializer = make_true_initializer(scen)
    elif method == "proposed_both":
        initializer = make_true_initializer(scen, combine=True)

    def oracle(t):
        return int(states[t - 1])

    res = run_stream(init_stream, Ys, oracle, cfg, monitor_seed(scen, replicate), initializer)
    return CellOutcome(res.predictions, len(res.labeled), 1000.0 * (time.perf_counter() - started),
                       res)
