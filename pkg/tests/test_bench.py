import math
from dataclasses import replace

import numpy as np
import pytest

from activespm.bench.grid import (FULL_BUDGETS, FULL_DELTAS, FULL_DIMS, RESULT_COLUMNS,
                                  GridSpec, budget_violations, mean_se, results_csv,
                                  run_grid, summarize, summary_csv)
from activespm.bench.ingest import read_feature_csv, split_initial, write_feature_csv
from activespm.bench.methods import (MethodOptions, competitor_mewma, mewma_statistics,
                                     run_method, true_start)
from activespm.bench.metrics import compute_metrics, confusion_matrix, macro_f1
from activespm.bench.plots import write_all
from activespm.bench.scenario import (ScenarioConfig, ar_covariance, generate_scenario,
                                      generate_states, scenario_seed, state_means)
from activespm.errors import InputDataError

SMALL = ScenarioConfig(p=2, delta=4.0, budget_B=0.1, t_init=40, t_stream=150,
                       ic_run_range=(20, 30), oc_run_len=5)
FAST = MethodOptions(bootstrap_m=49, bootstrap_len=30, challenger=True)


# -- scenario ------------------------------------------------------------------

def test_covariance_entries():
    for p in (3, 10):
        S = ar_covariance(p)
        assert S[0, 1] == 0.75 and S[0, 2] == 0.5625 and S[1, 1] == 1.0


def test_shift_vectors():
    m = state_means(3, 1.2)
    assert m[0].tolist() == [0, 0, 0]
    assert m[1].tolist() == [1.2, 0, 0]
    assert m[2].tolist() == [0, 1.2, 0]


def test_state_layout():
    cfg = ScenarioConfig()
    for rep in range(5):
        s = generate_states(cfg, np.random.default_rng(rep))
        assert s.size == 600 and np.all(s[:100] == 1)
        oc = np.flatnonzero(s > 1)
        runs = np.split(oc, np.flatnonzero(np.diff(oc) > 1) + 1)
        for run in runs:
            assert len(run) == 5 or run[-1] == 599
            assert len(set(s[run])) == 1
            assert s[run[0]] == (2 if run[0] + 1 <= 350 else 3)
        gaps = np.diff([r[0] for r in runs]) - 5
        assert np.all((gaps >= 60) & (gaps <= 85))
        assert 60 <= runs[0][0] - 100 <= 85


def test_zero_shift_is_pure_ic():
    cfg = ScenarioConfig(p=4, delta=0.0)
    states, Y = generate_scenario(cfg, scenario_seed(cfg, 0))
    assert np.any(states > 1)
    # replay the generator's draws without any mean: identical rows
    rng = np.random.default_rng(scenario_seed(cfg, 0))
    generate_states(cfg, rng)
    noise = rng.standard_normal(Y.shape) @ np.linalg.cholesky(ar_covariance(4)).T
    assert np.array_equal(Y, noise)


def test_scenario_seed_excludes_budget_and_weight():
    a = scenario_seed(ScenarioConfig(budget_B=0.01, w_exp=0.0), 3).entropy
    b = scenario_seed(ScenarioConfig(budget_B=0.2, w_exp=1.0), 3).entropy
    assert a == b


# -- metrics -------------------------------------------------------------------

def test_metrics_hand_example():
    true = np.array([2] * 12 + [1] * 10)
    pred = np.array([2] * 8 + [1] * 4 + [2] * 2 + [1] * 8)
    m = compute_metrics(true, pred)
    assert (m.tp, m.fp, m.fn) == (8, 2, 4)
    assert m.precision == 0.8
    assert m.recall == pytest.approx(2 / 3, abs=1e-15)
    assert m.f1 == pytest.approx(0.7272727273, abs=1e-9)


def test_metrics_edge_cases():
    true = np.array([1, 1, 2, 3, 1])
    assert compute_metrics(true, true).f1 == 1.0
    all_ic = compute_metrics(true, np.ones(5, dtype=int))
    assert all_ic.recall == 0.0 and all_ic.f1 == 0.0 and all_ic.precision == 0.0
    # OC states are interchangeable for the binary score
    assert compute_metrics(true, np.array([1, 1, 3, 2, 1])).f1 == 1.0
    with pytest.raises(ValueError):
        compute_metrics(true, true[:3])


def test_confusion_and_macro_f1():
    true = np.array([1, 1, 2, 3])
    pred = np.array([1, 2, 2, 1])
    C = confusion_matrix(true, pred)
    assert C[1, 1] == 1 and C[1, 2] == 1 and C[2, 2] == 1 and C[3, 1] == 1
    f1_1 = 2 * 0.5 * 0.5 / 1.0
    f1_2 = 2 * 0.5 * 1.0 / 1.5
    assert macro_f1(C) == pytest.approx((f1_1 + f1_2 + 0.0) / 3, abs=1e-15)


def test_mean_se():
    m, se = mean_se([1.0, 2.0, 3.0])
    assert m == 2.0 and se == pytest.approx(1 / math.sqrt(3), abs=1e-15)
    assert math.isnan(mean_se([1.0])[1])


# -- competitors ---------------------------------------------------------------

def test_mewma_at_mean_is_ic():
    rng = np.random.default_rng(0)
    Y0 = rng.standard_normal((100, 3))
    est_loc = mewma_statistics(Y0, np.zeros((1, 3)), reference="initial")
    assert est_loc.shape == (1,)
    from activespm.stats import robust_location_scatter
    mu = robust_location_scatter(Y0).location
    assert mewma_statistics(Y0, mu[None, :], reference="initial")[0] == 0.0
    assert competitor_mewma(Y0, mu[None, :], reference="initial")[0] == 1


def test_mewma_is_binary_and_detects_shift():
    rng = np.random.default_rng(1)
    Y0 = rng.standard_normal((100, 3))
    Y = rng.standard_normal((200, 3))
    Y[100:] += 3.0
    pred = competitor_mewma(Y0, Y, reference="initial")
    assert set(np.unique(pred)) <= {1, 2}
    assert pred[110:].mean() > 1.9


def test_mewma_pooled_reference_detects_rare_shift():
    rng = np.random.default_rng(2)
    Y0 = rng.standard_normal((100, 3))
    Y = rng.standard_normal((400, 3))
    Y[200:210] += 4.0
    pred = competitor_mewma(Y0, Y)
    assert pred[202:210].mean() == 2.0
    assert pred[:200].mean() < 1.05


def test_mewma_false_alarm_rate():
    # in-control streams: OC rate within 0.01 of alpha over 16 x 500 steps
    cfg = ScenarioConfig(delta=0.0)
    rates = []
    for rep in range(16):
        _, Y = generate_scenario(cfg, scenario_seed(cfg, rep))
        rates.append(np.mean(competitor_mewma(Y[:100], Y[100:], alpha=0.01) == 2))
    assert abs(np.mean(rates) - 0.01) <= 0.01


def test_run_method_rejects_unknown():
    with pytest.raises(ValueError):
        run_method("oracle", SMALL, 0)


def test_true_start_parameters():
    m = true_start(ScenarioConfig(p=3, delta=2.0), 3)
    assert m.initial.tolist() == [1, 0, 0]
    np.testing.assert_allclose(np.diag(m.transition), 0.99)
    assert np.array_equal(m.means, state_means(3, 2.0))


@pytest.mark.parametrize("method", ["random", "equispaced", "proposed"])
def test_zero_budget_collapse(method):
    scen = replace(SMALL, budget_B=0.005)
    base = run_method("unsupervised", scen, 0, FAST)
    out = run_method(method, scen, 0, FAST)
    assert out.labels_used == 0
    assert np.array_equal(out.predictions, base.predictions)


def test_equispaced_label_count():
    out = run_method("equispaced", replace(SMALL, budget_B=0.2), 1, FAST)
    assert out.labels_used == 30
    steps = sorted(t - SMALL.t_init for t in out.result.labeled)
    assert steps == list(range(5, 151, 5))


def test_random_label_count_concentrates():
    used = [run_method("random", replace(SMALL, budget_B=0.2), r, FAST).labels_used
            for r in range(6)]
    assert max(used) <= 30
    assert abs(np.mean(used) - 30) <= 3


def test_unsupervised_state_selection():
    # 50-seed calibration: see the acceptance notes in the decision ledger
    picks_sep, picks_flat = [], []
    sep = replace(SMALL, delta=5.0, t_stream=100, ic_run_range=(15, 20))
    flat = replace(sep, delta=0.0)
    for r in range(50):
        picks_sep.append(run_method("unsupervised", sep, r, FAST).result.model.n_states)
        picks_flat.append(run_method("unsupervised", flat, r, FAST).result.model.n_states)
    assert np.mean(np.array(picks_sep) >= 2) >= 0.9
    assert np.mean(np.array(picks_flat) == 1) >= 0.9


# -- grid ----------------------------------------------------------------------

def test_full_grid_shape():
    spec = GridSpec(methods=("proposed", "mewma", "unsupervised", "random", "equispaced",
                             "proposed_true"),
                    dims=FULL_DIMS, deltas=FULL_DELTAS, budgets=FULL_BUDGETS, replicates=1)
    assert len(spec.scenarios()) == 5 * 6 * 3
    assert len(spec.cells()) == 5 * 6 * 3 * 6
    assert FULL_BUDGETS == (0.01, 0.0575, 0.105, 0.1525, 0.2)


def test_grid_rejects_unknown_method():
    with pytest.raises(ValueError):
        GridSpec(methods=("magic",))


def one_cell(method="proposed", **kw):
    return GridSpec(methods=(method,), deltas=(4.0,), budgets=(0.1,), replicates=1,
                    base=SMALL, options=FAST, **kw)


def test_one_cell_one_row():
    res = run_grid(one_cell())
    text = results_csv(res)
    lines = text.splitlines()
    assert lines[0] == ",".join(RESULT_COLUMNS)
    assert len(lines) == 2
    assert res.failures == [] and budget_violations(res) == []


def test_grid_determinism_and_sharing():
    spec = GridSpec(methods=("mewma", "unsupervised", "equispaced"), deltas=(4.0,),
                    budgets=(0.05, 0.1), replicates=2, base=SMALL, options=FAST)
    a = run_grid(spec)
    b = run_grid(spec)
    assert results_csv(a) == results_csv(b)
    # label-free methods do not depend on the budget
    for m in ("mewma", "unsupervised"):
        r1 = [r.f1 for r in a.select(method=m, budget=0.05)]
        r2 = [r.f1 for r in a.select(method=m, budget=0.1)]
        assert r1 == r2
    summary = summarize(a)
    assert len(summary) == 3 * 2
    assert summary_csv(summary).count("\n") == 7


def test_grid_parallel_matches_serial():
    spec = GridSpec(methods=("mewma", "equispaced"), deltas=(4.0,), budgets=(0.1,),
                    replicates=2, base=SMALL, options=FAST)
    assert results_csv(run_grid(spec, workers=2)) == results_csv(run_grid(spec))


def test_grid_records_failures(monkeypatch):
    import activespm.bench.grid as grid

    def boom(*a, **k):
        raise FloatingPointError("diverged")

    monkeypatch.setattr(grid, "run_method", boom)
    res = run_grid(one_cell())
    assert len(res.failures) == 1 and "diverged" in res.failures[0].error
    assert results_csv(res).splitlines()[1].split(",")[10] == ""


def test_plots_written(tmp_path):
    spec = GridSpec(methods=("mewma", "equispaced"), deltas=(3.0, 4.0), budgets=(0.1,),
                    replicates=1, base=SMALL, options=FAST)
    paths = write_all(summarize(run_grid(spec)), tmp_path)
    assert paths and all(p.suffix == ".svg" and p.stat().st_size > 0 for p in paths)
    again = write_all(summarize(run_grid(spec)), tmp_path / "b")
    assert [p.read_bytes() for p in paths] == [p.read_bytes() for p in again]


# -- ingestion -----------------------------------------------------------------

def test_feature_csv_round_trip(tmp_path):
    Y = np.random.default_rng(0).standard_normal((6, 3))
    labels = np.array([1, 0, 0, 2, 0, 0])
    path = tmp_path / "s.csv"
    write_feature_csv(path, Y, labels)
    Y2, l2 = read_feature_csv(path)
    assert np.array_equal(Y, Y2) and np.array_equal(labels, l2)
    write_feature_csv(path, Y)
    assert read_feature_csv(path)[1] is None


def test_feature_csv_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("y1,y2\n1.0,oops\n")
    with pytest.raises(InputDataError, match="bad.csv:2"):
        read_feature_csv(bad)
    bad.write_text("y1,y2\n1.0\n")
    with pytest.raises(InputDataError):
        read_feature_csv(bad)
    bad.write_text("")
    with pytest.raises(InputDataError):
        read_feature_csv(bad)
    with pytest.raises(InputDataError):
        split_initial(np.zeros((5, 2)), None, 5)


def test_split_initial():
    Y = np.arange(20.0).reshape(10, 2)
    init, rest = split_initial(Y, None, 4)
    assert init.T == 4 and np.all(init.labels == 1)
    assert np.array_equal(rest, Y[4:])
