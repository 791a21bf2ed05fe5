import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from activespm.errors import ImpossibleLabelingError, ModelSelectionError, StarvedStateError
from activespm.init import init_search
from activespm.phmm import (ModelParams, ObservationStream, aic, em_step, fit, forward_backward,
                            n_free_params, predict_state, select_model)
from activespm.sampler import EndpointConstraint, simulate_sequence
from activespm.stats import GaussianParams, gaussian_logpdf

from oracles import enumerate_posteriors, random_model


def two_state_model(p=2, delta=5.0):
    means = np.zeros((2, p))
    means[1, 0] = delta
    return ModelParams([1.0, 0.0], [[0.97, 0.03], [0.05, 0.95]], means, np.eye(p))


def two_state_stream(seed, T=200, p=2, delta=5.0):
    return simulate_sequence(two_state_model(p, delta), EndpointConstraint(T), seed)


def rel_close(a, b, rtol=1e-9):
    return np.all(np.abs(np.asarray(a) - np.asarray(b)) <= rtol * np.maximum(1.0, np.abs(b)))


# -- containers --------------------------------------------------------------

def test_model_validates_constraints():
    with pytest.raises(ValueError):
        ModelParams([0.5, 0.6], [[1, 0], [0, 1]], np.zeros((2, 1)), [[1.0]])
    with pytest.raises(ValueError):
        ModelParams([1, 0], [[0.9, 0.2], [0, 1]], np.zeros((2, 1)), [[1.0]])
    with pytest.raises(ValueError):
        ModelParams([1, 0], [[1, 0], [0, 1]], np.zeros((3, 1)), [[1.0]])


def test_model_is_immutable():
    m = two_state_model()
    with pytest.raises(ValueError):
        m.means[0, 0] = 1.0


def test_json_round_trip_is_exact():
    m = random_model(np.random.default_rng(5), 3, 4)
    back = ModelParams.from_json(m.to_json())
    for name in ("initial", "transition", "means", "covariance"):
        assert np.array_equal(getattr(back, name), getattr(m, name))
    doc = m.to_dict()
    assert doc["n_states"] == 3 and doc["p"] == 4


def test_stream_labels():
    s = ObservationStream.with_initial_ic(np.zeros((5, 2)), 3)
    assert s.labels.tolist() == [1, 1, 1, 0, 0]
    with pytest.raises(ValueError):
        ObservationStream(np.zeros((3, 1)), [0, -1, 0])


# -- forward-backward ----------------------------------------------------------

def test_single_state_posterior_and_likelihood():
    rng = np.random.default_rng(0)
    Y = rng.standard_normal((30, 3))
    cov = np.array([[1.0, 0.2, 0.0], [0.2, 1.5, 0.1], [0.0, 0.1, 0.7]])
    m = ModelParams([1.0], [[1.0]], np.ones((1, 3)), cov)
    post = forward_backward(ObservationStream(Y), m)
    assert np.all(post.gamma == 1.0)
    expected = gaussian_logpdf(Y, GaussianParams(np.ones(3), cov)).sum()
    assert post.log_likelihood == pytest.approx(expected, rel=1e-12)


def test_fully_labeled_posterior_is_one_hot():
    rng = np.random.default_rng(1)
    m = random_model(rng, 3, 2)
    labels = rng.integers(1, 4, size=12)
    A = m.transition  # dirichlet rows are strictly positive, so any path is feasible
    assert np.all(A > 0)
    post = forward_backward(ObservationStream(rng.standard_normal((12, 2)), labels), m)
    assert np.array_equal(post.gamma, np.eye(3)[labels - 1])


def test_matches_path_enumeration_unlabeled():
    rng = np.random.default_rng(2)
    m = random_model(rng, 2, 2)
    Y = rng.standard_normal((6, 2)) * 2
    post = forward_backward(ObservationStream(Y), m)
    g, xi, ll = enumerate_posteriors(m, Y)
    assert rel_close(post.gamma, g) and rel_close(post.xi_sums, xi)
    assert post.log_likelihood == pytest.approx(ll, rel=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(4, 7), st.integers(1, 2), st.integers(0, 2**31 - 1))
def test_matches_path_enumeration_mixed_labels(N, T, p, seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng, N, p)
    Y = rng.standard_normal((T, p)) * 2
    labels = np.where(rng.random(T) < 0.3, rng.integers(1, N + 1, size=T), 0)
    post = forward_backward(ObservationStream(Y, labels), m)
    g, xi, ll = enumerate_posteriors(m, Y, labels)
    assert rel_close(post.gamma, g) and rel_close(post.xi_sums, xi)
    assert post.log_likelihood == pytest.approx(ll, rel=1e-9)
    lab = labels > 0
    assert np.array_equal(post.gamma[lab], np.eye(N)[labels[lab] - 1])
    np.testing.assert_allclose(post.gamma.sum(axis=1), 1.0, atol=1e-10)


def test_impossible_labeling_reports_time():
    m = ModelParams([1.0, 0.0], [[1.0, 0.0], [0.0, 1.0]], [[0.0], [3.0]], [[1.0]])
    stream = ObservationStream(np.zeros((5, 1)), [0, 0, 0, 2, 0])
    with pytest.raises(ImpossibleLabelingError) as info:
        forward_backward(stream, m)
    assert info.value.t == 4


def test_label_beyond_state_count_is_impossible():
    m = two_state_model(p=1)
    with pytest.raises(ImpossibleLabelingError):
        forward_backward(ObservationStream(np.zeros((3, 1)), [0, 3, 0]), m)


def test_far_observations_do_not_underflow():
    m = two_state_model(p=2)
    Y = np.full((400, 2), 60.0)
    post = forward_backward(ObservationStream(Y), m)
    assert np.isfinite(post.log_likelihood)
    np.testing.assert_allclose(post.gamma.sum(axis=1), 1.0, atol=1e-10)


# -- EM ---------------------------------------------------------------------

def test_em_step_returns_input_likelihood_and_improves():
    states, Y = two_state_stream(3, T=50)
    stream = ObservationStream(Y)
    start = ModelParams([0.5, 0.5], [[0.8, 0.2], [0.3, 0.7]], [[0.5, 0.0], [3.0, 0.5]], np.eye(2))
    new, ll_old = em_step(stream, start)
    assert ll_old == pytest.approx(forward_backward(stream, start).log_likelihood, abs=0)
    assert forward_backward(stream, new).log_likelihood >= ll_old - 1e-9


def test_em_single_state_fixed_point():
    Y = np.random.default_rng(4).standard_normal((40, 2))
    m = ModelParams([1.0], [[1.0]], Y.mean(axis=0, keepdims=True), np.cov(Y.T, bias=True))
    new, _ = em_step(ObservationStream(Y), m)
    assert np.array_equal(new.initial, m.initial) and np.array_equal(new.transition, [[1.0]])
    np.testing.assert_allclose(new.means, m.means, atol=1e-12)
    np.testing.assert_allclose(new.covariance, m.covariance, atol=1e-12)


def test_em_fully_labeled_means_are_class_averages():
    states, Y = two_state_stream(6, T=60)
    new, _ = em_step(ObservationStream(Y, states), two_state_model())
    for i in (1, 2):
        np.testing.assert_allclose(new.means[i - 1], Y[states == i].mean(axis=0), rtol=0,
                                   atol=1e-12)


def test_em_pooled_covariance_formula():
    states, Y = two_state_stream(7, T=80)
    new, _ = em_step(ObservationStream(Y, states), two_state_model())
    resid = Y - new.means[states - 1]
    np.testing.assert_allclose(new.covariance, resid.T @ resid / len(Y), atol=1e-12)


def test_em_starved_state():
    m = ModelParams([1.0, 0.0], [[0.99, 0.01], [0.5, 0.5]], [[0.0], [1e4]], [[1.0]])
    Y = np.random.default_rng(0).standard_normal((30, 1))
    with pytest.raises(StarvedStateError) as info:
        em_step(ObservationStream(Y), m)
    assert info.value.state == 2


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.integers(0, 2**31 - 1))
def test_em_preserves_stochastic_constraints(N, seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng, N, 2)
    Y = rng.standard_normal((40, 2)) * 2
    try:
        new, _ = em_step(ObservationStream(Y), m)
    except StarvedStateError:
        return
    assert abs(new.initial.sum() - 1) < 1e-10 and np.all(new.initial >= 0)
    np.testing.assert_allclose(new.transition.sum(axis=1), 1.0, atol=1e-10)
    assert np.all(new.transition >= 0)


def test_fit_trace_is_monotone():
    for seed in range(5):
        states, Y = two_state_stream(seed, T=150, delta=2.0)
        start = ModelParams([0.5, 0.5], [[0.9, 0.1], [0.1, 0.9]], [[-1.0, 0.0], [1.0, 0.0]],
                            np.eye(2))
        res = fit(ObservationStream(Y), start)
        assert np.all(np.diff(res.trace) >= -1e-9)


def test_fit_converged_input_stops_early():
    states, Y = two_state_stream(11, T=150)
    res = fit(ObservationStream(Y), two_state_model(), max_iter=500, tol=1e-10)
    again = fit(ObservationStream(Y), res.model, max_iter=500, tol=1e-6)
    assert len(again.trace) <= 3
    assert abs(again.trace[-1] - again.trace[0]) < 1e-6


def test_fit_recovers_separated_means():
    # 50-seed calibration: worst infinity-norm error 0.23
    truth = np.array([[0.0, 0.0], [5.0, 0.0]])
    for seed in range(10):
        states, Y = two_state_stream(1000 + seed, T=400)
        labels = np.zeros(400, dtype=np.int64)
        idx = np.random.default_rng(seed).choice(400, 40, replace=False)
        labels[idx] = states[idx]
        res = init_search(ObservationStream(Y, labels), 2)
        assert np.abs(res.model.means - truth).max() < 0.3


# -- prediction, AIC, selection ----------------------------------------------

def _summary(rows):
    from activespm.phmm import PosteriorSummary
    g = np.asarray(rows, dtype=float)
    return PosteriorSummary(g, np.zeros((g.shape[1],) * 2), 0.0, np.zeros(len(g)))


def test_predict_state_examples():
    s = _summary([[0.2, 0.8], [0.5, 0.5], [1.0, 0.0]])
    assert predict_state(s, 1)[1] == 2
    assert predict_state(s, 2)[1] == 1
    probs, point = predict_state(s, 3)
    assert point == 1 and probs.tolist() == [1.0, 0.0]
    with pytest.raises(IndexError):
        predict_state(s, 4)


def test_labeled_prediction_is_label():
    states, Y = two_state_stream(2, T=30)
    labels = np.zeros(30, dtype=np.int64)
    labels[7] = 2
    post = forward_backward(ObservationStream(Y, labels), two_state_model())
    probs, point = predict_state(post, 8)
    assert point == 2 and probs[1] == 1.0


def test_prediction_permutation_equivariant():
    rng = np.random.default_rng(9)
    m = random_model(rng, 3, 2)
    Y = rng.standard_normal((15, 2)) * 2
    labels = np.zeros(15, dtype=np.int64)
    labels[[2, 9]] = [1, 3]
    perm = np.array([2, 0, 1])  # old state k becomes state perm[k]
    post = forward_backward(ObservationStream(Y, labels), m)
    post_p = forward_backward(ObservationStream(Y, np.where(labels > 0, perm[labels - 1] + 1, 0)),
                              m.permuted(perm))
    for t in range(1, 16):
        assert predict_state(post_p, t)[1] == perm[predict_state(post, t)[1] - 1] + 1


def test_aic_parameter_counts():
    assert aic(ModelParams([1, 0], np.eye(2), np.zeros((2, 10)), np.eye(10)), 0.0) == 156.0
    assert aic(ModelParams([1], [[1]], np.zeros((1, 10)), np.eye(10)), 0.0) == 130.0
    m3 = ModelParams([1, 0, 0], np.eye(3), np.zeros((3, 20)), np.eye(20))
    assert aic(m3, -100.0) == 756.0
    assert n_free_params(3, 20) == 278


def test_select_single_gaussian_prefers_one_state():
    # 50-seed calibration: N=1 chosen in 47/50 runs
    picks = [select_model(ObservationStream(np.random.default_rng(s).standard_normal((200, 2))),
                          1, 2).model.n_states for s in range(50)]
    assert np.mean(np.array(picks) == 1) >= 0.9


def test_select_two_clusters_prefers_two_states():
    # 50-seed calibration: N=2 chosen in 50/50 runs
    picks = [select_model(ObservationStream(two_state_stream(s)[1]), 1, 2).model.n_states
             for s in range(50)]
    assert np.mean(np.array(picks) == 2) >= 0.9


def test_select_respects_label_lower_bound():
    rng = np.random.default_rng(0)
    Y = rng.standard_normal((120, 2))
    Y[40:45] += 6
    Y[80:85] -= 6
    labels = np.zeros(120, dtype=np.int64)
    labels[[0, 41, 81]] = [1, 2, 3]
    sel = select_model(ObservationStream(Y, labels), 1, 4)
    assert sel.model.n_states >= 3
    assert min(sel.aics) >= 3


def test_select_invariant_to_density_offset(monkeypatch):
    Y = two_state_stream(21)[1]
    base = select_model(ObservationStream(Y), 1, 3)
    original = ModelParams.log_densities
    monkeypatch.setattr(ModelParams, "log_densities", lambda self, X: original(self, X) + 123.0)
    shifted = select_model(ObservationStream(Y), 1, 3)
    assert shifted.model.n_states == base.model.n_states
    diffs = {n: shifted.aics[n] - base.aics[n] for n in base.aics}
    assert max(diffs.values()) - min(diffs.values()) < 1e-6


def test_select_all_failures_raise():
    def failing(stream, n, cfg, ladder):
        raise ModelSelectionError("nope")
    with pytest.raises(ModelSelectionError):
        select_model(ObservationStream(np.zeros((10, 1)) + np.arange(10)[:, None]), 1, 2,
                     initializer=failing)
