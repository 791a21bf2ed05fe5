"""Stream-based active learning loop for process monitoring.

:class:`StreamMonitor` consumes one observation at a time. After each
observation it refits the pHMM, predicts the state, and decides whether to
buy the label. Exploitation asks for labels where the posterior entropy is
unusually high compared with sequences simulated from the fitted model;
exploration asks where a MEWMA statistic is far from every known state.
:func:`run_stream` drives a monitor over a whole stream with a label oracle.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import linalg
from scipy.stats import chi2

from . import _kernels
from .errors import OracleError
from .init import InitSearchConfig, init_one_state, init_search, newest_row_candidate
from .phmm import ModelParams, ObservationStream, predict_state, select_model
from .sampler import simulate_batch

STRATEGIES = ("proposed", "random", "equispaced", "none")
BUDGET_GATES = ("spending", "printed")
STATE_CEILINGS = ("observed", "current")
LOG_COLUMNS = ("t", "predicted", "labeled", "label_source", "true_state_if_labeled",
               "entropy", "p_exp", "v2", "p_exr", "B_t", "n_states")


@dataclass(frozen=True)
class MonitorConfig:
    """Settings of one monitoring run.

    ``strategy`` selects who decides on labels: the entropy/MEWMA criteria
    (``"proposed"``), a coin flip with the current budget rate
    (``"random"``), a fixed grid every ``1/B`` steps (``"equispaced"``) or
    nobody (``"none"``). Everything else about fitting and prediction is
    shared by all strategies.

    ``budget_gate`` picks the extra condition a criterion label must pass:
    ``"spending"`` allows a label only while the fraction of stream steps
    labeled so far is below ``budget_B``; ``"printed"`` uses the literal
    ``B_t < budget_B`` test. ``exploration_gate`` restricts exploration
    labels to steps predicted out of control.

    The candidate state counts at each refit run from the largest observed
    label up to one more than that (``state_ceiling="observed"``) or one
    more than the current model's count (``"current"``), which lets an
    unlabeled stream keep adding states. ``challenger`` additionally tries,
    for each count, a fresh start placed at the newest smoothed observation
    when that observation is among the most outlying ones.
    """

    budget_B: float
    w_exr: float = 0.5
    lam: float = 0.3
    bootstrap_m: int = 199
    bootstrap_len: int = 50
    init_cfg: InitSearchConfig = field(default_factory=InitSearchConfig)
    strategy: str = "proposed"
    exploration_gate: bool = False
    budget_gate: str = "spending"
    refit_iter: int = 10
    full_iter: int = 100
    tol: float = 1e-6
    refresh_tol: float = 1e-3
    challenger: bool = True
    state_ceiling: str = "observed"

    def __post_init__(self):
        if not 0.0 < self.budget_B < 1.0:
            raise ValueError("budget_B must lie in (0, 1)")
        if not 0.0 <= self.w_exr <= 1.0:
            raise ValueError("w_exr must lie in [0, 1]")
        if not 0.0 < self.lam <= 1.0:
            raise ValueError("lam must lie in (0, 1]")
        if self.bootstrap_m < 1 or self.bootstrap_len < 1:
            raise ValueError("bootstrap sizes must be positive")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")
        if self.budget_gate not in BUDGET_GATES:
            raise ValueError(f"budget_gate must be one of {BUDGET_GATES}")
        if self.state_ceiling not in STATE_CEILINGS:
            raise ValueError(f"state_ceiling must be one of {STATE_CEILINGS}")

    @property
    def w_exp(self) -> float:
        return 1.0 - self.w_exr


@dataclass
class DecisionRecord:
    t: int
    predicted: int
    posterior: np.ndarray
    entropy: float
    p_exp: float
    v2: float
    p_exr: float
    labeled: bool
    label_source: str
    B_t: float
    n_states: int
    true_state: Optional[int] = None


def entropy(posterior) -> float:
    """Natural-log entropy; zero-probability terms contribute nothing."""
    g = np.asarray(posterior, dtype=float)
    nz = g[g > 0]
    return float(max(0.0, -np.sum(nz * np.log(nz))))


def _entropy_rows(G: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(G > 0, G * np.log(np.where(G > 0, G, 1.0)), 0.0)
    return np.maximum(-terms.sum(axis=1), 0.0)


def bootstrap_entropies(model: ModelParams, m: int, length: int, rng_seed) -> np.ndarray:
    """Entropy of the final-step filtered posterior for ``m`` sequences of
    ``length`` steps simulated from ``model``."""
    rng = np.random.default_rng(rng_seed)
    _, Y = simulate_batch(model, m, length, rng)
    log_b = model.log_densities(Y.reshape(-1, model.p)).reshape(m, length, model.n_states)
    return _entropy_rows(_kernels.filter_last(log_b, model.initial, model.transition))


def entropy_pvalue(simulated: np.ndarray, observed: float) -> float:
    return (1.0 + np.count_nonzero(simulated >= observed)) / (1.0 + simulated.size)


def exploitation_pvalue(model: ModelParams, observed_entropy: float, cfg: MonitorConfig,
                        rng_seed) -> float:
    """Add-one bootstrap p-value of an observed posterior entropy."""
    if model.n_states < 2:
        raise ValueError("exploitation needs at least two states")
    sims = bootstrap_entropies(model, cfg.bootstrap_m, cfg.bootstrap_len, rng_seed)
    return entropy_pvalue(sims, observed_entropy)


def exploration_statistic(accumulators: np.ndarray, y, model: ModelParams, lam: float):
    """Update one MEWMA accumulator per state and return the smallest
    standardized distance together with the new accumulators.

    Accumulators are resized to the model's state count; states without a
    previous accumulator start from zero.
    """
    y = np.asarray(y, dtype=float)
    N, p = model.n_states, model.p
    z = np.zeros((N, p))
    if accumulators is not None and len(accumulators):
        keep = min(N, len(accumulators))
        z[:keep] = accumulators[:keep]
    z = lam * (y[None, :] - model.means) + (1.0 - lam) * z
    w = linalg.solve_triangular(model.chol, z.T, lower=True, check_finite=False)
    v2_each = (2.0 - lam) / lam * np.sum(w * w, axis=0)
    return float(v2_each.min()), z


def exploration_pvalue(v2: float, p: int) -> float:
    """Upper-tail chi-square probability with ``p`` degrees of freedom."""
    if v2 < 0:
        raise ValueError("v2 must be non-negative")
    return float(chi2.sf(v2, p))


def equispaced_steps(budget_B: float, T: int) -> set:
    """Stream steps (1-based) at which the equispaced strategy labels."""
    n = math.floor(budget_B * T)
    return {min(T, math.floor(j / budget_B + 0.5)) for j in range(1, n + 1)}


@dataclass
class StepResult:
    t: int
    predicted: int
    posterior: np.ndarray
    label_requested: bool
    label_source: str


class StreamMonitor:
    """Incremental monitor over a stream of known length ``T``.

    ``init_observations`` are the in-control rows available before the
    stream starts. Call :meth:`observe` for each new observation; when the
    returned step requests a label, call :meth:`supply_label` before the
    next observation.
    """

    def __init__(self, init_observations, T: int, cfg: MonitorConfig, rng_seed: int = 0,
                 initializer: Optional[Callable] = None):
        Y0 = np.atleast_2d(np.asarray(init_observations, dtype=float))
        self.cfg = cfg
        self.seed = int(rng_seed)
        self.t_init, self.p = Y0.shape
        self.T = int(T)
        self.initializer = initializer
        self._Y = np.zeros((self.t_init + self.T, self.p))
        self._Y[: self.t_init] = Y0
        self._labels = np.zeros(self.t_init + self.T, dtype=np.int64)
        self._labels[: self.t_init] = 1
        self._n = self.t_init

        self.budget_total = math.floor(cfg.budget_B * self.T)
        self.b = self.budget_total
        self.labeled: list[int] = []
        self.log: list[DecisionRecord] = []
        self.predictions = np.zeros(self.T, dtype=np.int64)
        self.pending: Optional[DecisionRecord] = None
        self._equi = (equispaced_steps(cfg.budget_B, self.T)
                      if cfg.strategy == "equispaced" else set())
        self._boot: Optional[tuple] = None

        first = self._initial_stream()
        fitted = (init_search(first, 1, cfg.init_cfg, max_iter=cfg.full_iter, tol=cfg.tol)
                  if initializer is None else initializer(first, 1, cfg.init_cfg, {}))
        self.model: ModelParams = fitted.model
        self.fits: dict = {1: fitted.model}
        self.z = np.zeros((1, self.p))

    def _initial_stream(self) -> ObservationStream:
        return ObservationStream(self._Y[: self.t_init], self._labels[: self.t_init], self.t_init)

    def current_stream(self) -> ObservationStream:
        return ObservationStream(self._Y[: self._n], self._labels[: self._n], self.t_init)

    @property
    def observed_states(self) -> set:
        return {int(s) for s in np.unique(self._labels[: self._n]) if s > 0}

    @property
    def finished(self) -> bool:
        return self._n >= self.t_init + self.T

    def _refit(self, warm_iter: int):
        stream = self.current_stream()
        n_min = max(1, stream.max_label)
        grow = self.cfg.state_ceiling == "current"
        n_max = (max(n_min, self.model.n_states) if grow else n_min) + 1
        sel = select_model(stream, n_min, n_max, self.cfg.init_cfg, warm_starts=self.fits,
                           warm_iter=warm_iter, max_iter=self.cfg.full_iter, tol=self.cfg.tol,
                           initializer=self.initializer,
                           extra_starts=self._challenger if self.cfg.challenger else None)
        self.fits.update({n: r.model for n, r in sel.fits.items()})
        self.model = sel.model
        return sel

    def _challenger(self, stream: ObservationStream, n: int, ladder: dict) -> list:
        if n < 2:
            return []
        if 0 not in ladder:
            ladder[0] = init_one_state(stream)
        previous = ladder[0] if n == 2 else ladder.get(n - 1)
        if previous is None:
            return []
        cand = newest_row_candidate(stream, ladder[0], previous, self.cfg.init_cfg)
        return [] if cand is None else [cand]

    def _gate_open(self, B_t: float, step: int) -> bool:
        if self.b <= 0:
            return False
        if self.cfg.budget_gate == "printed":
            return B_t < self.cfg.budget_B
        return len(self.labeled) / step < self.cfg.budget_B

    def _exploitation_p(self, model: ModelParams, h: float, t: int) -> float:
        cached = self._boot
        if cached is None or cached[0].max_abs_diff(model) > self.cfg.refresh_tol:
            sims = bootstrap_entropies(model, self.cfg.bootstrap_m, self.cfg.bootstrap_len,
                                       [self.seed, t, 7])
            self._boot = cached = (model, sims)
        return entropy_pvalue(cached[1], h)

    def observe(self, y) -> StepResult:
        if self.pending is not None:
            raise RuntimeError(f"label for t={self.pending.t} has not been supplied")
        if self.finished:
            raise RuntimeError("the stream is already complete")
        y = np.asarray(y, dtype=float).reshape(-1)
        if y.size != self.p:
            raise ValueError(f"expected an observation of length {self.p}, got {y.size}")
        cfg = self.cfg
        self._Y[self._n] = y
        self._n += 1
        t = self._n
        step = t - self.t_init
        B_t = self.b / (self.T + self.t_init - t + 1)

        sel = self._refit(cfg.refit_iter)
        model = sel.model
        probs, xhat = predict_state(sel.posterior, t)
        h = entropy(probs)
        N = model.n_states

        if N == 1:
            p_exp = 1.0
        elif cfg.strategy == "proposed" and self.b > 0 and cfg.w_exp > 0:
            p_exp = self._exploitation_p(model, h, t)
        else:
            p_exp = math.nan
        v2, self.z = exploration_statistic(self.z, y, model, cfg.lam)
        p_exr = exploration_pvalue(v2, self.p)

        source = "none"
        if cfg.strategy == "proposed":
            gate = self._gate_open(B_t, step)
            if p_exp < cfg.w_exp * B_t and gate:
                source = "exploitation"
            elif (p_exr < cfg.w_exr * B_t and gate
                  and (xhat > 1 or not cfg.exploration_gate)):
                source = "exploration"
        elif cfg.strategy == "random":
            u = np.random.default_rng([self.seed, t, 11]).random()
            if self.b > 0 and u < B_t:
                source = "random"
        elif cfg.strategy == "equispaced":
            if self.b > 0 and step in self._equi:
                source = "equispaced"

        record = DecisionRecord(t, xhat, probs, h, p_exp, v2, p_exr, False, source, B_t, N)
        self.predictions[step - 1] = xhat
        if source == "none":
            self.log.append(record)
        else:
            self.pending = record
        return StepResult(t, xhat, probs, source != "none", source)

    def supply_label(self, state: int) -> None:
        """Record the revealed state for the pending step and refit."""
        record = self.pending
        if record is None:
            raise RuntimeError("no label has been requested")
        state = int(state)
        if state < 1:
            raise ValueError("states are 1-based")
        is_new = state not in self.observed_states
        idx = record.t - 1
        self._labels[idx] = state
        self.b -= 1
        self.labeled.append(record.t)
        if len(self.labeled) > self.budget_total:
            raise AssertionError("label budget exceeded")
        record.labeled = True
        record.true_state = state
        record.predicted = state
        self.predictions[record.t - self.t_init - 1] = state
        self.log.append(record)
        self.pending = None
        if is_new:
            self.fits = {}
        self._refit(self.cfg.full_iter)

    def decline_label(self) -> None:
        """Drop the pending request without spending budget."""
        if self.pending is None:
            raise RuntimeError("no label has been requested")
        self.pending.label_source = "none"
        self.log.append(self.pending)
        self.pending = None


@dataclass
class MonitorResult:
    predictions: np.ndarray
    labeled: list
    log: list
    model: ModelParams


def run_stream(init_stream: ObservationStream, stream, oracle: Callable[[int], int],
               cfg: MonitorConfig, rng_seed: int = 0,
               initializer: Optional[Callable] = None,
               on_label: Optional[Callable[[int, ModelParams], None]] = None) -> MonitorResult:
    """Run the monitor over ``stream`` (T x p), asking ``oracle(t)`` for the
    state at absolute 1-based time ``t`` whenever a label is bought.

    ``on_label(t, model)`` is called after the refit that follows each
    label. An oracle failure raises :class:`OracleError` carrying the
    partial decision log in its ``log`` attribute.
    """
    Y = np.atleast_2d(np.asarray(stream, dtype=float))
    mon = StreamMonitor(init_stream.observations, len(Y), cfg, rng_seed, initializer)
    for y in Y:
        step = mon.observe(y)
        if step.label_requested:
            try:
                state = int(oracle(step.t))
            except Exception as exc:
                err = OracleError(f"oracle failed at t={step.t}: {exc}")
                err.log = list(mon.log)
                raise err from exc
            mon.supply_label(state)
            if on_label is not None:
                on_label(step.t, mon.model)
    return MonitorResult(mon.predictions.copy(), list(mon.labeled), mon.log, mon.model)


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return "" if math.isnan(x) else repr(x)
    return str(x)


def log_to_csv(log, fh=None) -> str:
    """Serialize decision records; returns the text if ``fh`` is None."""
    out = io.StringIO() if fh is None else fh
    w = csv.writer(out, lineterminator="\n")
    w.writerow(LOG_COLUMNS)
    for r in log:
        w.writerow([r.t, r.predicted, int(r.labeled), r.label_source, _fmt(r.true_state),
                    _fmt(float(r.entropy)), _fmt(float(r.p_exp)), _fmt(float(r.v2)),
                    _fmt(float(r.p_exr)), _fmt(float(r.B_t)), r.n_states])
    return out.getvalue() if fh is None else ""
