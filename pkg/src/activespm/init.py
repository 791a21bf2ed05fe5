"""Starting values for constrained EM.

The one-state model comes from a robust location/scatter estimate. A model
with N >= 2 states starts from the means of the (N-1)-state model plus one
new mean, taken from the moving-average rows that are farthest (in
Mahalanobis distance under the robust scatter) from every mean already
estimated. Each candidate is fitted and the most likely one is kept.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg

from .errors import ImpossibleLabelingError, ModelSelectionError, StarvedStateError
from .phmm import DEFAULT_MAX_ITER, DEFAULT_TOL, FitResult, ModelParams, ObservationStream, fit
from .stats import moving_average, robust_location_scatter


@dataclass(frozen=True)
class InitSearchConfig:
    window_k: int = 5
    n_try: int = 10
    diag_init: float = 0.99
    min_separation: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.diag_init < 1.0:
            raise ValueError("diag_init must lie in (0, 1)")
        if self.window_k < 1 or self.n_try < 1:
            raise ValueError("window_k and n_try must be positive")
        if self.min_separation < 0:
            raise ValueError("min_separation must be non-negative")


def init_one_state(stream: ObservationStream) -> ModelParams:
    """One-state model from a robust estimate of the (mostly IC) data."""
    if stream.T <= stream.p + 1:
        raise ValueError(f"need T > p + 1 observations, got T={stream.T}, p={stream.p}")
    est = robust_location_scatter(stream.observations)
    return ModelParams([1.0], [[1.0]], est.location[None, :], est.scatter)


def initial_transition(n_states: int, diag: float) -> np.ndarray:
    if n_states == 1:
        return np.ones((1, 1))
    A = np.full((n_states, n_states), (1.0 - diag) / (n_states - 1))
    np.fill_diagonal(A, diag)
    return A


def _find(models, n_states: int) -> Optional[ModelParams]:
    found = None
    for m in models:
        if m.n_states == n_states:
            found = m
    return found


def init_candidates(stream: ObservationStream, prev_models, n_states: int,
                    cfg: InitSearchConfig = InitSearchConfig()) -> list:
    """Starting models for an ``n_states``-state fit.

    ``prev_models`` must contain the robust one-state model and a fitted
    model with ``n_states - 1`` states (the last such entry is used). Labels
    are never read here.
    """
    if n_states < 2:
        raise ValueError("candidates are only defined for N >= 2")
    prev_models = list(prev_models)
    # the first one-state entry is the robust estimate by convention
    robust = next((m for m in prev_models if m.n_states == 1), None)
    previous = robust if n_states == 2 else _find(prev_models, n_states - 1)
    if robust is None or previous is None:
        raise ValueError(f"need a one-state model and a {n_states - 1}-state model")

    smoothed, w_rows, score = _ranking(stream, robust, previous, cfg.window_k)
    order = np.argsort(-score, kind="stable")

    chosen: list[int] = []
    sep2 = cfg.min_separation ** 2
    for idx in order:
        if len(chosen) == cfg.n_try:
            break
        if chosen and np.min(np.sum((w_rows[chosen] - w_rows[idx]) ** 2, axis=1)) < sep2:
            continue
        chosen.append(int(idx))

    return [_candidate(previous, smoothed[i], robust, cfg) for i in chosen]


def _ranking(stream, robust, previous, window_k):
    """Moving-average rows, their whitened form, and each row's smallest
    squared Mahalanobis distance to the means of ``previous``."""
    L = robust.chol
    smoothed = moving_average(stream.observations, min(window_k, stream.T))
    w_rows = linalg.solve_triangular(L, smoothed.T, lower=True, check_finite=False).T
    w_means = linalg.solve_triangular(L, previous.means.T, lower=True, check_finite=False).T
    d2 = np.sum((w_rows[:, None, :] - w_means[None, :, :]) ** 2, axis=2)
    return smoothed, w_rows, d2.min(axis=1)


def _candidate(previous: ModelParams, new_mean, robust: ModelParams, cfg) -> ModelParams:
    n_states = previous.n_states + 1
    initial = np.zeros(n_states)
    initial[0] = 1.0
    return ModelParams(initial, initial_transition(n_states, cfg.diag_init),
                       np.vstack([previous.means, new_mean]), robust.covariance)


def newest_row_candidate(stream: ObservationStream, robust: ModelParams, previous: ModelParams,
                         cfg: InitSearchConfig = InitSearchConfig()) -> Optional[ModelParams]:
    """Starting model built from the latest moving-average row, or None
    unless that row ranks among the ``n_try`` highest-scoring rows."""
    smoothed, _, score = _ranking(stream, robust, previous, cfg.window_k)
    if np.count_nonzero(score[:-1] > score[-1]) >= cfg.n_try:
        return None
    return _candidate(previous, smoothed[-1], robust, cfg)


def init_search(stream: ObservationStream, n_states: int,
                cfg: InitSearchConfig = InitSearchConfig(), ladder: Optional[dict] = None, *,
                max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL) -> FitResult:
    """Fit every candidate start and return the most likely fit.

    ``ladder`` maps state counts to already fitted models on the same data;
    missing rungs below ``n_states`` are fitted on a copy of the stream
    whose labels above the rung are dropped. The robust one-state model is
    stored in the ladder under key 0.
    """
    ladder = {} if ladder is None else ladder
    if 0 not in ladder:
        ladder[0] = init_one_state(stream)
    robust = ladder[0]
    if n_states == 1:
        return fit(stream, robust, max_iter=max_iter, tol=tol)

    if n_states - 1 not in ladder:
        rung = n_states - 1
        sub = stream.with_labels_at_most(rung)
        ladder[rung] = init_search(sub, rung, cfg, ladder, max_iter=max_iter, tol=tol).model
    previous = ladder[n_states - 1]

    best = None
    failures = []
    for cand in init_candidates(stream, [robust, previous], n_states, cfg):
        try:
            res = fit(stream, cand, max_iter=max_iter, tol=tol)
        except (ImpossibleLabelingError, StarvedStateError) as exc:
            failures.append(exc)
            continue
        if best is None or res.posterior.log_likelihood > best.posterior.log_likelihood:
            best = res
    if best is None:
        raise ModelSelectionError(f"all {n_states}-state candidates failed: {failures}")
    return best
