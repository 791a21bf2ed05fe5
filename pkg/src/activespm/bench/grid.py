"""Experiment grids: expansion into cells, parallel execution, CSV output
and per-cell summaries."""
from __future__ import annotations

import csv
import io
import math
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import product
from typing import Iterable, Optional

import numpy as np

from .methods import ACTIVE_METHODS, METHODS, MethodOptions, run_method
from .metrics import compute_metrics
from .scenario import ScenarioConfig, generate_scenario, scenario_seed

RESULT_COLUMNS = ("method", "p", "delta", "budget", "w_exp", "replicate", "f1", "precision",
                  "recall", "macro_f1", "labels_used", "runtime_ms")
SUMMARY_COLUMNS = ("method", "p", "delta", "budget", "w_exp", "n", "f1_mean", "f1_se",
                   "precision_mean", "precision_se", "recall_mean", "recall_se",
                   "labels_mean", "failures")
FULL_BUDGETS = (0.01, 0.0575, 0.105, 0.1525, 0.2)
FULL_DELTAS = (0.0, 0.6, 1.2, 1.8, 2.4, 3.0)
FULL_DIMS = (10, 20, 30)
# methods whose output ignores the budget and the weights
LABEL_FREE = ("mewma", "unsupervised")


@dataclass(frozen=True)
class GridSpec:
    methods: tuple = ("proposed", "mewma", "unsupervised", "random", "equispaced")
    dims: tuple = (10,)
    deltas: tuple = FULL_DELTAS
    budgets: tuple = FULL_BUDGETS
    w_exps: tuple = (0.5,)
    replicates: int = 16
    root_seed: int = 0
    base: ScenarioConfig = field(default_factory=ScenarioConfig)
    options: MethodOptions = field(default_factory=MethodOptions)

    def __post_init__(self):
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}; expected a subset of {METHODS}")
        if self.replicates < 1:
            raise ValueError("replicates must be positive")

    def scenarios(self) -> list:
        return [replace(self.base, p=p, delta=d, budget_B=b, w_exp=w,
                        replicates=self.replicates, root_seed=self.root_seed)
                for p, d, b, w in product(self.dims, self.deltas, self.budgets, self.w_exps)]

    def cells(self) -> list:
        """(method, scenario, replicate) triples in a fixed order."""
        return [(m, s, r) for s in self.scenarios() for m in self.methods
                for r in range(self.replicates)]


@dataclass
class CellRow:
    method: str
    p: int
    delta: float
    budget: float
    w_exp: float
    replicate: int
    f1: float = math.nan
    precision: float = math.nan
    recall: float = math.nan
    macro_f1: float = math.nan
    labels_used: int = -1
    runtime_ms: float = math.nan
    error: Optional[str] = None
    t_stream: int = 500

    @property
    def budget_limit(self) -> int:
        return math.floor(self.budget * self.t_stream)


@dataclass
class GridResult:
    rows: list
    failures: list

    def select(self, **where) -> list:
        return [r for r in self.rows if all(getattr(r, k) == v for k, v in where.items())]


def _task_key(method: str, scen: ScenarioConfig, rep: int):
    if method in LABEL_FREE:
        return (method, scen.p, scen.delta, rep)
    return (method, scen.p, scen.delta, scen.budget_B, scen.w_exp, rep)


def _run_task(args):
    method, scen, rep, options = args
    try:
        states, Y = generate_scenario(scen, scenario_seed(scen, rep))
        out = run_method(method, scen, rep, options, data=(states, Y))
        m = compute_metrics(states[scen.t_init:], out.predictions)
        return dict(f1=m.f1, precision=m.precision, recall=m.recall, macro_f1=m.macro_f1,
                    labels_used=out.labels_used, runtime_ms=out.runtime_ms, error=None)
    except Exception as exc:  # recorded per cell, never fatal for the grid
        return dict(error=f"{type(exc).__name__}: {exc}\n{traceback.format_exc(limit=3)}")


def run_grid(spec: GridSpec, workers: int = 1, progress=None) -> GridResult:
    """Run every cell; label-free methods are computed once per stream and
    shared across budgets and weights. Output order does not depend on
    completion order."""
    cells = spec.cells()
    keys = [_task_key(m, s, r) for m, s, r in cells]
    unique: dict = {}
    for (m, s, r), k in zip(cells, keys):
        unique.setdefault(k, (m, s, r, spec.options))
    tasks = list(unique.items())

    results: dict = {}
    if workers <= 1:
        for i, (k, args) in enumerate(tasks):
            results[k] = _run_task(args)
            if progress:
                progress(i + 1, len(tasks))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for i, (k, res) in enumerate(zip([k for k, _ in tasks],
                                             pool.map(_run_task, [a for _, a in tasks]))):
                results[k] = res
                if progress:
                    progress(i + 1, len(tasks))

    rows, failures = [], []
    for (m, s, r), k in zip(cells, keys):
        row = CellRow(m, s.p, s.delta, s.budget_B, s.w_exp, r, t_stream=s.t_stream)
        for name, value in results[k].items():
            setattr(row, name, value)
        rows.append(row)
        if row.error:
            failures.append(row)
    return GridResult(rows, failures)


def _fmt(x) -> str:
    if isinstance(x, float):
        return "" if math.isnan(x) else repr(x)
    return str(x)


def results_csv(result: GridResult, record_runtime: bool = False) -> str:
    """Per-replicate CSV. Runtimes are left blank unless requested so that
    reruns produce identical files."""
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for r in result.rows:
        vals = [r.method, r.p, float(r.delta), float(r.budget), float(r.w_exp), r.replicate,
                float(r.f1), float(r.precision), float(r.recall), float(r.macro_f1),
                r.labels_used if r.error is None else "",
                float(r.runtime_ms) if record_runtime else math.nan]
        w.writerow([_fmt(v) for v in vals])
    return out.getvalue()


def failures_csv(result: GridResult) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(("method", "p", "delta", "budget", "w_exp", "replicate", "error"))
    for r in result.failures:
        w.writerow([r.method, r.p, repr(float(r.delta)), repr(float(r.budget)),
                    repr(float(r.w_exp)), r.replicate, r.error.splitlines()[0]])
    return out.getvalue()


def mean_se(values: Iterable[float]) -> tuple:
    """Mean and standard error of the mean (NaN SE for fewer than 2 values)."""
    v = np.asarray([x for x in values if not math.isnan(x)], dtype=float)
    if v.size == 0:
        return math.nan, math.nan
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else math.nan
    return float(v.mean()), se


@dataclass(frozen=True)
class SummaryRow:
    method: str
    p: int
    delta: float
    budget: float
    w_exp: float
    n: int
    f1: tuple
    precision: tuple
    recall: tuple
    labels_mean: float
    failures: int


def summarize(result: GridResult) -> list:
    groups: dict = {}
    for r in result.rows:
        groups.setdefault((r.method, r.p, r.delta, r.budget, r.w_exp), []).append(r)
    out = []
    for key, rows in groups.items():
        ok = [r for r in rows if r.error is None]
        out.append(SummaryRow(*key, len(ok), mean_se(r.f1 for r in ok),
                              mean_se(r.precision for r in ok), mean_se(r.recall for r in ok),
                              mean_se(float(r.labels_used) for r in ok)[0],
                              len(rows) - len(ok)))
    return out


def summary_csv(summary: list) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for s in summary:
        vals = [s.method, s.p, float(s.delta), float(s.budget), float(s.w_exp), s.n,
                *s.f1, *s.precision, *s.recall, float(s.labels_mean), s.failures]
        w.writerow([_fmt(v) for v in vals])
    return out.getvalue()


def budget_violations(result: GridResult) -> list:
    """Rows of active methods that used more labels than the budget allows."""
    return [r for r in result.rows if r.method in ACTIVE_METHODS and r.error is None
            and r.labels_used > r.budget_limit]
