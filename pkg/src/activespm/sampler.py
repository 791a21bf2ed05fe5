"""Simulation from a fitted pHMM, optionally pinning the first and/or last
state of the sequence.

With a fixed last state ``j`` the next-state law is reweighted by the
backward table ``beta[t, h] = P(x_T = j | x_t = h)``, built once per
sequence.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InfeasibleConstraintError
from .phmm import ModelParams


@dataclass(frozen=True)
class EndpointConstraint:
    length: int
    start: Optional[int] = None
    end: Optional[int] = None

    def __post_init__(self):
        if self.length < 1:
            raise ValueError("length must be positive")
        for s in (self.start, self.end):
            if s is not None and s < 1:
                raise ValueError("fixed states are 1-based indices")

    def check(self, n_states: int) -> None:
        for s in (self.start, self.end):
            if s is not None and s > n_states:
                raise ValueError(f"fixed state {s} exceeds N={n_states}")


def endpoint_table(model: ModelParams, constraint: EndpointConstraint) -> Optional[np.ndarray]:
    """(T, N) table of ``P(x_T = end | x_t = h)``, or None if the end is free."""
    if constraint.end is None:
        return None
    T, N = constraint.length, model.n_states
    beta = np.zeros((T, N))
    beta[T - 1, constraint.end - 1] = 1.0
    for t in range(T - 2, -1, -1):
        beta[t] = model.transition @ beta[t + 1]
    return beta


def _step_probs(model: ModelParams, t: int, current: Optional[int],
                constraint: EndpointConstraint, beta: Optional[np.ndarray]) -> np.ndarray:
    N = model.n_states
    if t == 1:
        if constraint.start is not None:
            prior = np.zeros(N)
            prior[constraint.start - 1] = 1.0
        else:
            prior = model.initial.copy()
    else:
        if current is None:
            raise ValueError("the previous state is required for t > 1")
        prior = model.transition[current - 1].copy()
    if beta is None:
        return prior
    w = prior * beta[t - 1]
    total = w.sum()
    if not total > 0.0:
        raise InfeasibleConstraintError(
            f"state {constraint.end} cannot be reached at T={constraint.length} (t={t})")
    return w / total


def conditional_step_probs(model: ModelParams, t: int, current: Optional[int],
                           constraint: EndpointConstraint) -> np.ndarray:
    """Distribution of the state at 1-based time ``t``.

    ``current`` is the (1-based) state at ``t - 1`` and is ignored for
    ``t == 1``. Four cases arise: free start and end gives the initial
    distribution; a known current state with a free end gives a row of the
    transition matrix; a fixed end reweights either by the probability of
    reaching it.
    """
    constraint.check(model.n_states)
    if not 1 <= t <= constraint.length:
        raise ValueError(f"t={t} outside 1..{constraint.length}")
    return _step_probs(model, t, current, constraint, endpoint_table(model, constraint))


def draw_emissions(model: ModelParams, states: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    z = rng.standard_normal(states.shape + (model.p,))
    return model.means[states - 1] + z @ model.chol.T


def endpoint_marginals(model: ModelParams, constraint: EndpointConstraint) -> np.ndarray:
    """(T, N) marginal laws ``P(x_t = h | endpoints)`` from the forward
    table (started at the fixed first state or at the initial law) times
    the backward table."""
    constraint.check(model.n_states)
    T, N = constraint.length, model.n_states
    alpha = np.zeros((T, N))
    if constraint.start is None:
        alpha[0] = model.initial
    else:
        alpha[0, constraint.start - 1] = 1.0
    for t in range(1, T):
        alpha[t] = alpha[t - 1] @ model.transition
    beta = endpoint_table(model, constraint)
    joint = alpha if beta is None else alpha * beta
    total = joint.sum(axis=1, keepdims=True)
    if not np.all(total > 0.0):
        raise InfeasibleConstraintError(
            f"state {constraint.end} cannot be reached at T={constraint.length}")
    return joint / total


def _inverse_cdf(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Row-wise categorical draws (0-based); never returns a zero-probability
    category."""
    cum = np.cumsum(probs, axis=-1)
    idx = np.count_nonzero(u[..., None] >= cum, axis=-1)
    idx = np.minimum(idx, probs.shape[-1] - 1)
    # rounding can leave u just above the last positive mass; step back
    bad = np.take_along_axis(probs, idx[..., None], axis=-1)[..., 0] <= 0.0
    if np.any(bad):
        last_pos = probs.shape[-1] - 1 - np.argmax((probs > 0)[..., ::-1], axis=-1)
        idx = np.where(bad, last_pos, idx)
    return idx


def sample_state_paths(model: ModelParams, constraint: EndpointConstraint, n_paths: int,
                       rng: np.random.Generator) -> np.ndarray:
    """``(n_paths, T)`` 1-based state paths honoring the endpoint constraint."""
    constraint.check(model.n_states)
    T, N = constraint.length, model.n_states
    beta = endpoint_table(model, constraint)
    u = rng.random((n_paths, T))
    states = np.empty((n_paths, T), dtype=np.int64)
    states[:, 0] = _inverse_cdf(_step_probs(model, 1, None, constraint, beta)[None, :], u[:, 0])
    for t in range(2, T + 1):
        prior = model.transition[states[:, t - 2]]
        if beta is not None:
            prior = prior * beta[t - 1]
            total = prior.sum(axis=1, keepdims=True)
            if not np.all(total > 0.0):
                raise InfeasibleConstraintError(
                    f"state {constraint.end} cannot be reached at T={T} (t={t})")
            prior = prior / total
        states[:, t - 1] = _inverse_cdf(prior, u[:, t - 1])
    return states + 1


def simulate_sequence(model: ModelParams, constraint: EndpointConstraint, rng_seed):
    """Draw ``(states, observations)``; states are 1-based."""
    rng = np.random.default_rng(rng_seed)
    states = sample_state_paths(model, constraint, 1, rng)[0]
    return states, draw_emissions(model, states, rng)


def simulate_batch(model: ModelParams, n_sequences: int, length: int, rng: np.random.Generator):
    """Many unconstrained sequences at once; returns (M, L) states and
    (M, L, p) observations."""
    states = sample_state_paths(model, EndpointConstraint(length), n_sequences, rng)
    return states, draw_emissions(model, states, rng)
