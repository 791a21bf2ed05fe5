"""SVG panel grids of benchmark summaries.

Files are byte-reproducible: a fixed hash salt and no date metadata.
Error bars are one standard error of the mean.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

SVG_METADATA = {"Date": None, "Creator": None}
METHOD_LABELS = {"proposed": "proposed", "mewma": "MEWMA", "unsupervised": "unsupervised",
                 "random": "random", "equispaced": "equispaced", "proposed_true": "true",
                 "proposed_both": "both"}


def _tag(values) -> str:
    return "-".join(f"{v:g}" for v in values)


def _save(fig, path: Path) -> Path:
    with matplotlib.rc_context({"svg.hashsalt": "activespm", "svg.fonttype": "none"}):
        fig.savefig(path, format="svg", metadata=SVG_METADATA)
    plt.close(fig)
    return path


def _series(summary, x_attr: str, line_attr: str, metric: str, **where):
    """{line value: (xs, means, ses)} for the rows matching ``where``."""
    out: dict = {}
    for s in summary:
        if any(getattr(s, k) != v for k, v in where.items()):
            continue
        mean, se = getattr(s, metric)
        out.setdefault(getattr(s, line_attr), []).append((getattr(s, x_attr), mean, se))
    return {k: tuple(zip(*sorted(v))) for k, v in out.items()}


def _grid(n_rows: int, n_cols: int):
    fig, axes = plt.subplots(n_rows, n_cols, figsize=(3.2 * n_cols, 2.6 * n_rows),
                             squeeze=False, sharey=True)
    return fig, axes


def _plot_lines(ax, series: dict, label_fn=str):
    for key in sorted(series, key=str):
        xs, means, ses = series[key]
        ses = [0.0 if se != se else se for se in ses]  # NaN SE with one replicate
        ax.errorbar(xs, means, yerr=ses, marker="o", ms=3, capsize=2, label=label_fn(key))


def _uniq(summary, attr):
    return sorted({getattr(s, attr) for s in summary})


def f1_vs_delta(summary, out_dir, methods=None) -> Path:
    """Rows: dimension p; columns: budget; x: shift size; lines: methods."""
    methods = methods or _uniq(summary, "method")
    summary = [s for s in summary if s.method in methods]
    dims, budgets = _uniq(summary, "p"), _uniq(summary, "budget")
    fig, axes = _grid(len(dims), len(budgets))
    for i, p in enumerate(dims):
        for j, b in enumerate(budgets):
            ax = axes[i, j]
            _plot_lines(ax, _series(summary, "delta", "method", "f1", p=p, budget=b),
                        lambda m: METHOD_LABELS.get(m, m))
            ax.set_title(f"p={p}, B={b:g}", fontsize=9)
            ax.set_xlabel("shift size")
            if j == 0:
                ax.set_ylabel("F1 (mean ± SE)")
    axes[0, -1].legend(fontsize=7)
    fig.tight_layout()
    return _save(fig, Path(out_dir) / f"f1_vs_delta_p{_tag(dims)}_B{_tag(budgets)}.svg")


def f1_vs_budget(summary, out_dir, methods=None) -> Path:
    """Rows: dimension p; columns: shift size; x: budget; lines: methods."""
    methods = methods or _uniq(summary, "method")
    summary = [s for s in summary if s.method in methods]
    dims, deltas = _uniq(summary, "p"), _uniq(summary, "delta")
    fig, axes = _grid(len(dims), len(deltas))
    for i, p in enumerate(dims):
        for j, d in enumerate(deltas):
            ax = axes[i, j]
            _plot_lines(ax, _series(summary, "budget", "method", "f1", p=p, delta=d),
                        lambda m: METHOD_LABELS.get(m, m))
            ax.set_title(f"p={p}, shift={d:g}", fontsize=9)
            ax.set_xlabel("budget")
            if j == 0:
                ax.set_ylabel("F1 (mean ± SE)")
    axes[0, -1].legend(fontsize=7)
    fig.tight_layout()
    return _save(fig, Path(out_dir) / f"f1_vs_budget_p{_tag(dims)}_delta{_tag(deltas)}.svg")


def weight_sweep(summary, out_dir, method: str = "proposed") -> Path:
    """Rows: F1, precision, recall; columns: budget; x: shift; lines: w_exp."""
    summary = [s for s in summary if s.method == method]
    budgets, dims = _uniq(summary, "budget"), _uniq(summary, "p")
    metrics = ("f1", "precision", "recall")
    fig, axes = _grid(len(metrics), len(budgets))
    for i, metric in enumerate(metrics):
        for j, b in enumerate(budgets):
            ax = axes[i, j]
            _plot_lines(ax, _series(summary, "delta", "w_exp", metric, budget=b),
                        lambda w: f"w_exp={w:g}")
            ax.set_title(f"B={b:g}", fontsize=9)
            ax.set_xlabel("shift size")
            if j == 0:
                ax.set_ylabel(f"{metric} (mean ± SE)")
    axes[0, -1].legend(fontsize=7)
    fig.tight_layout()
    return _save(fig, Path(out_dir) / f"weights_p{_tag(dims)}_B{_tag(budgets)}.svg")


def initialization(summary, out_dir) -> Path:
    """F1 vs shift per budget for the three initialization variants."""
    keep = ("proposed", "proposed_true", "proposed_both")
    summary = [s for s in summary if s.method in keep]
    budgets, dims = _uniq(summary, "budget"), _uniq(summary, "p")
    fig, axes = _grid(1, len(budgets))
    for j, b in enumerate(budgets):
        ax = axes[0, j]
        _plot_lines(ax, _series(summary, "delta", "method", "f1", budget=b),
                    lambda m: METHOD_LABELS.get(m, m))
        ax.set_title(f"B={b:g}", fontsize=9)
        ax.set_xlabel("shift size")
        if j == 0:
            ax.set_ylabel("F1 (mean ± SE)")
    axes[0, -1].legend(fontsize=7)
    fig.tight_layout()
    return _save(fig, Path(out_dir) / f"init_p{_tag(dims)}_B{_tag(budgets)}.svg")


def write_all(summary, out_dir) -> list:
    """Every panel grid that the summary has data for."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    if not summary:
        return paths
    base = [s for s in summary if s.method not in ("proposed_true", "proposed_both")]
    ws = _uniq(summary, "w_exp")
    default_w = 0.5 if 0.5 in ws else ws[0]
    base_w = [s for s in base if s.w_exp == default_w]
    if base_w:
        paths.append(f1_vs_delta(base_w, out_dir))
        paths.append(f1_vs_budget(base_w, out_dir))
    if len(ws) > 1:
        paths.append(weight_sweep(summary, out_dir))
    if any(s.method in ("proposed_true", "proposed_both") for s in summary):
        paths.append(initialization([s for s in summary if s.w_exp == default_w], out_dir))
    return paths
