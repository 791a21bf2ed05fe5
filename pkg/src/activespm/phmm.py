"""Partially hidden Markov model with Gaussian emissions and a shared
covariance matrix.

States are numbered from 1 (state 1 is in-control). A label track uses 0
for "unlabeled" and a state index otherwise; labeled positions constrain
the forward and backward recursions so that only the revealed state keeps
probability mass.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Optional

import numpy as np
from scipy import linalg

from . import _kernels
from .errors import ImpossibleLabelingError, ModelSelectionError, StarvedStateError
from .stats import LOG_2PI, check_symmetric, log_det_from_chol, safe_cholesky

STOCHASTIC_TOL = 1e-10
STARVATION_MASS = 1e-8
DEFAULT_MAX_ITER = 100
DEFAULT_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Parameters ``(initial, transition, means, covariance)`` of a pHMM."""

    initial: np.ndarray
    transition: np.ndarray
    means: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        initial = np.atleast_1d(np.array(self.initial, dtype=float))
        transition = np.atleast_2d(np.array(self.transition, dtype=float))
        means = np.atleast_2d(np.array(self.means, dtype=float))
        cov = np.atleast_2d(np.array(self.covariance, dtype=float))
        n = initial.size
        if transition.shape != (n, n) or means.shape[0] != n:
            raise ValueError(
                f"inconsistent state count: initial {initial.shape}, "
                f"transition {transition.shape}, means {means.shape}")
        p = means.shape[1]
        if cov.shape != (p, p):
            raise ValueError(f"covariance must be {p}x{p}, got {cov.shape}")
        if np.any(initial < 0) or abs(initial.sum() - 1.0) > STOCHASTIC_TOL:
            raise ValueError("initial distribution is not on the simplex")
        if np.any(transition < 0) or np.any(np.abs(transition.sum(axis=1) - 1.0) > STOCHASTIC_TOL):
            raise ValueError("transition matrix is not row-stochastic")
        check_symmetric(cov)
        for name, value in (("initial", initial), ("transition", transition),
                            ("means", means), ("covariance", cov)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        _ = self.chol

    @property
    def n_states(self) -> int:
        return self.initial.size

    @property
    def p(self) -> int:
        return self.means.shape[1]

    @cached_property
    def chol(self) -> np.ndarray:
        return safe_cholesky(self.covariance)

    def log_densities(self, Y) -> np.ndarray:
        """(T, N) matrix of ``log phi(y_t; mu_i, Sigma)``."""
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        L = self.chol
        wy = linalg.solve_triangular(L, Y.T, lower=True, check_finite=False)
        wm = linalg.solve_triangular(L, self.means.T, lower=True, check_finite=False)
        quad = (np.sum(wy * wy, axis=0)[:, None] - 2.0 * (wy.T @ wm)
                + np.sum(wm * wm, axis=0)[None, :])
        np.maximum(quad, 0.0, out=quad)
        return -0.5 * (self.p * LOG_2PI + log_det_from_chol(L) + quad)

    def permuted(self, perm) -> "ModelParams":
        """Model with state ``k`` renamed to ``perm[k]`` (0-based)."""
        perm = np.asarray(perm)
        inv = np.argsort(perm)
        return ModelParams(self.initial[inv], self.transition[np.ix_(inv, inv)],
                           self.means[inv], self.covariance)

    def max_abs_diff(self, other: "ModelParams") -> float:
        if other.n_states != self.n_states or other.p != self.p:
            return math.inf
        return max(float(np.max(np.abs(a - b))) for a, b in (
            (self.initial, other.initial), (self.transition, other.transition),
            (self.means, other.means), (self.covariance, other.covariance)))

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "p": self.p,
            "initial": self.initial.tolist(),
            "transition": self.transition.tolist(),
            "means": self.means.tolist(),
            "covariance": self.covariance.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelParams":
        model = cls(doc["initial"], doc["transition"], doc["means"], doc["covariance"])
        if model.n_states != doc.get("n_states", model.n_states) or model.p != doc.get("p", model.p):
            raise ValueError("n_states/p fields disagree with array shapes")
        return model

    def to_json(self, **kwargs) -> str:
        # float repr is the shortest string that round-trips exactly
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_json(cls, text: str) -> "ModelParams":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class ObservationStream:
    """Observations ``Y`` (T x p) with a partial label track.

    ``labels[t] == 0`` means unlabeled. ``t_init`` counts the leading rows
    known to be in-control.
    """

    observations: np.ndarray
    labels: Optional[np.ndarray] = None
    t_init: int = 0

    def __post_init__(self):
        Y = np.array(self.observations, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        labels = (np.zeros(Y.shape[0], dtype=np.int64) if self.labels is None
                  else np.asarray(self.labels, dtype=np.int64).copy())
        if labels.shape != (Y.shape[0],):
            raise ValueError("labels must have one entry per observation")
        if np.any(labels < 0):
            raise ValueError("labels must be 0 (unlabeled) or a state index >= 1")
        if not 0 <= self.t_init <= Y.shape[0]:
            raise ValueError("t_init must lie in [0, T]")
        Y.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "observations", Y)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def with_initial_ic(cls, observations, t_init: int, labels=None) -> "ObservationStream":
        """Stream whose first ``t_init`` rows are labeled as state 1."""
        Y = np.asarray(observations, dtype=float)
        lab = np.zeros(len(Y), dtype=np.int64) if labels is None else np.array(labels, dtype=np.int64)
        lab[:t_init] = 1
        return cls(Y, lab, t_init)

    @property
    def T(self) -> int:
        return self.observations.shape[0]

    @property
    def p(self) -> int:
        return self.observations.shape[1]

    @property
    def max_label(self) -> int:
        return int(self.labels.max(initial=0))

    @property
    def observed_states(self) -> set:
        return {int(s) for s in np.unique(self.labels) if s > 0}

    def unlabeled(self) -> "ObservationStream":
        return ObservationStream(self.observations, None, self.t_init)

    def with_labels_at_most(self, n: int) -> "ObservationStream":
        """Copy where labels naming states above ``n`` are dropped."""
        lab = np.where(self.labels > n, 0, self.labels)
        return ObservationStream(self.observations, lab, self.t_init)


@dataclass(frozen=True, eq=False)
class PosteriorSummary:
    """Smoothed posteriors for one stream under one model.

    ``log_scale_factors[t]`` is the log of the t-th forward normalizer,
    including the emission shift, so their sum is the log-likelihood.
    """

    gamma: np.ndarray
    xi_sums: np.ndarray
    log_likelihood: float
    log_scale_factors: np.ndarray = field(repr=False)

    @property
    def T(self) -> int:
        return self.gamma.shape[0]


class FitResult(NamedTuple):
    model: ModelParams
    posterior: PosteriorSummary
    trace: list


def allowed_states(labels: np.ndarray, n_states: int) -> np.ndarray:
    labels = np.asarray(labels)
    allowed = np.ones((labels.size, n_states), dtype=np.bool_)
    lab = labels > 0
    if np.any(lab):
        allowed[lab] = False
        rows = np.flatnonzero(lab)
        cols = labels[lab] - 1
        ok = cols < n_states
        allowed[rows[ok], cols[ok]] = True
    return allowed


def forward_backward(stream: ObservationStream, model: ModelParams) -> PosteriorSummary:
    """Constrained, scaled forward-backward pass.

    Raises ``ImpossibleLabelingError`` (1-based ``t``) when no state path is
    compatible with the labels and the model.
    """
    if stream.p != model.p:
        raise ValueError(f"stream has p={stream.p}, model has p={model.p}")
    log_b = model.log_densities(stream.observations)
    allowed = allowed_states(stream.labels, model.n_states)
    gamma, xi_sum, log_scale, fail = _kernels.forward_backward(
        log_b, allowed, model.initial, model.transition)
    if fail >= 0:
        raise ImpossibleLabelingError(int(fail) + 1)
    return PosteriorSummary(gamma, xi_sum, float(np.sum(log_scale)), log_scale)


def _m_step(Y: np.ndarray, post: PosteriorSummary, old: ModelParams) -> ModelParams:
    gamma = post.gamma
    T, p = Y.shape
    mass = gamma.sum(axis=0)
    starved = np.flatnonzero(mass < STARVATION_MASS)
    if starved.size:
        i = int(starved[0])
        raise StarvedStateError(i + 1, float(mass[i]))

    initial = gamma[0] / gamma[0].sum()

    row = post.xi_sums.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        transition = np.where(row > 0, post.xi_sums / row, old.transition)
    transition /= transition.sum(axis=1, keepdims=True)

    centre = Y.mean(axis=0)
    Yc = Y - centre
    means_c = (gamma.T @ Yc) / mass[:, None]
    # sum_i sum_t g_ti (y_t - mu_i)(y_t - mu_i)' = Y'Y - sum_i n_i mu_i mu_i'
    cov = (Yc.T @ Yc - (means_c.T * mass) @ means_c) / T
    cov = 0.5 * (cov + cov.T)
    return ModelParams(initial, transition, means_c + centre, cov)


def em_step(stream: ObservationStream, model: ModelParams):
    """One constrained Baum-Welch iteration.

    Returns ``(new_model, log_likelihood_of_input_model)``.
    """
    post = forward_backward(stream, model)
    return _m_step(stream.observations, post, model), post.log_likelihood


def fit(stream: ObservationStream, init: ModelParams, max_iter: int = DEFAULT_MAX_ITER,
        tol: float = DEFAULT_TOL) -> FitResult:
    """Iterate EM from ``init`` until the absolute log-likelihood change is
    below ``tol`` or ``max_iter`` M-steps have been taken.

    ``trace`` lists the log-likelihood of every visited model, ending with
    the returned one.
    """
    model = init
    post = forward_backward(stream, model)
    trace = [post.log_likelihood]
    for _ in range(max_iter):
        model = _m_step(stream.observations, post, model)
        post = forward_backward(stream, model)
        trace.append(post.log_likelihood)
        if abs(trace[-1] - trace[-2]) < tol:
            break
    return FitResult(model, post, trace)


def predict_state(summary: PosteriorSummary, t: int):
    """Posterior row at 1-based time ``t`` and its argmax state (1-based).

    Ties go to the smallest state index.
    """
    if not 1 <= t <= summary.T:
        raise IndexError(f"t={t} outside 1..{summary.T}")
    probs = summary.gamma[t - 1].copy()
    return probs, int(np.argmax(probs)) + 1


def n_free_params(n_states: int, p: int) -> int:
    return (n_states - 1) + n_states * (n_states - 1) + n_states * p + p * (p + 1) // 2


def aic(model: ModelParams, log_likelihood: float) -> float:
    return -2.0 * log_likelihood + 2.0 * n_free_params(model.n_states, model.p)


class Selection(NamedTuple):
    model: ModelParams
    posterior: PosteriorSummary
    aic: float
    fits: dict  # n_states -> FitResult of every candidate that fitted
    aics: dict  # n_states -> AIC


def select_model(stream: ObservationStream, n_min: int, n_max: int, cfg=None, *,
                 warm_starts: Optional[dict] = None, warm_iter: int = DEFAULT_MAX_ITER,
                 max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL,
                 initializer=None, extra_starts=None) -> Selection:
    """Fit every state count in ``[n_min, n_max]`` and keep the minimum AIC.

    For counts present in ``warm_starts`` EM starts from the given model
    (at most ``warm_iter`` iterations); other counts, and warm starts that
    fail, go through ``initializer(stream, n, cfg, ladder)`` which defaults
    to the multi-start search in :mod:`activespm.init`. When given,
    ``extra_starts(stream, n, ladder)`` supplies additional starting models
    for a warm-started count; each is fitted with ``max_iter`` iterations
    and the most likely fit is kept. Counts whose fit fails are skipped.
    """
    from .init import InitSearchConfig, init_search

    if cfg is None:
        cfg = InitSearchConfig()
    if initializer is None:
        def initializer(s, n, c, ladder):
            return init_search(s, n, c, ladder, max_iter=max_iter, tol=tol)
    n_min = max(1, n_min, stream.max_label)
    if n_max < n_min:
        raise ValueError(f"n_max={n_max} is below the lower bound {n_min}")
    warm_starts = warm_starts or {}

    fits: dict = {}
    aics: dict = {}
    ladder: dict = {}
    errors = []
    for n in range(n_min, n_max + 1):
        result = None
        if n in warm_starts:
            try:
                result = fit(stream, warm_starts[n], max_iter=warm_iter, tol=tol)
            except (ImpossibleLabelingError, StarvedStateError) as exc:
                errors.append((n, exc))
            if extra_starts is not None:
                for start in extra_starts(stream, n, ladder):
                    try:
                        alt = fit(stream, start, max_iter=max_iter, tol=tol)
                    except (ImpossibleLabelingError, StarvedStateError) as exc:
                        errors.append((n, exc))
                        continue
                    if result is None or alt.posterior.log_likelihood > result.posterior.log_likelihood:
                        result = alt
        if result is None:
            try:
                result = initializer(stream, n, cfg, ladder)
            except (ImpossibleLabelingError, StarvedStateError, ModelSelectionError) as exc:
                errors.append((n, exc))
                continue
        ladder[n] = result.model
        fits[n] = result
        aics[n] = aic(result.model, result.posterior.log_likelihood)
    if not fits:
        raise ModelSelectionError(
            f"no candidate in [{n_min}, {n_max}] could be fitted: {errors}")
    best = min(aics, key=lambda n: (aics[n], n))
    return Selection(fits[best].model, fits[best].posterior, aics[best], fits, aics)
