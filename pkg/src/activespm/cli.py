"""Command-line front end.

Each command reads one JSON configuration, writes a run manifest into the
output directory before computing anything, then writes its outputs there.
``rerun`` replays a manifest. Exit codes: 0 success, 2 configuration error,
3 numerical failure, 4 I/O failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from importlib import metadata
from pathlib import Path
from typing import Optional

import numpy as np

from . import config as cfgmod
from .errors import ActiveSPMError, ConfigError, InputDataError, OracleError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
MANIFEST_NAME = "manifest.json"


def build_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def _write_text(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def write_manifest(out_dir: Path, command: str, config_path: Optional[str], config: dict,
                   seed: int, workers: int = 1, replicates: Optional[int] = None) -> Path:
    """Record the invocation; the embedded configuration makes the run
    replayable even if the original file changes."""
    doc = {"command": command, "config_path": config_path, "config": config,
           "root_seed": seed, "output_dir": str(out_dir), "version": build_version(),
           "workers": workers, "replicates": replicates}
    path = out_dir / MANIFEST_NAME
    _write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


# -- commands ---------------------------------------------------------------

def cmd_simulate(conf: cfgmod.SimulateConfig, out: Path, seed: int, **_) -> None:
    from .bench.ingest import write_feature_csv
    from .bench.scenario import generate_scenario
    from .phmm import ModelParams
    from .sampler import EndpointConstraint, simulate_sequence

    if conf.source == "scenario":
        scen = conf.scenario.build(root_seed=seed)
        states, Y = generate_scenario(scen, np.random.SeedSequence([seed]))
    else:
        model = ModelParams.from_json(Path(conf.model_path).read_text(encoding="utf-8"))
        cons = EndpointConstraint(conf.length, conf.start_state, conf.end_state)
        try:
            cons.check(model.n_states)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        states, Y = simulate_sequence(model, cons, np.random.SeedSequence([seed]))
    write_feature_csv(out / "stream.csv", Y)
    _write_states(out / "states.csv", states)


def _write_states(path: Path, states) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("t", "state"))
        for t, s in enumerate(states, start=1):
            w.writerow((t, int(s)))


def read_states(path) -> dict:
    """Oracle file with columns t, state; returns {t: state}."""
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"t", "state"} <= set(reader.fieldnames):
            raise InputDataError(f"{path}: expected a header with columns t,state")
        for lineno, row in enumerate(reader, start=2):
            try:
                out[int(row["t"])] = int(row["state"])
            except (TypeError, ValueError):
                raise InputDataError(f"{path}:{lineno}: malformed row {row}") from None
    return out


def cmd_fit(conf: cfgmod.FitConfig, out: Path, seed: int, **_) -> None:
    from .bench.ingest import read_feature_csv
    from .phmm import ObservationStream, predict_state, select_model

    Y, labels = read_feature_csv(conf.stream_path, conf.label_column)
    stream = ObservationStream(Y, labels)
    sel = select_model(stream, conf.n_min, conf.n_max, conf.init.build(),
                       max_iter=conf.max_iter, tol=conf.tol)
    _write_text(out / "model.json", sel.model.to_json(indent=2) + "\n")
    with open(out / "posterior.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", *[f"p{i + 1}" for i in range(sel.model.n_states)], "predicted"])
        for t in range(1, stream.T + 1):
            probs, point = predict_state(sel.posterior, t)
            w.writerow([t, *[repr(float(v)) for v in probs], point])
    with open(out / "selection.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("n_states", "log_likelihood", "aic", "selected"))
        for n in sorted(sel.aics):
            w.writerow((n, repr(float(sel.fits[n].posterior.log_likelihood)),
                        repr(float(sel.aics[n])), int(n == sel.model.n_states)))


def cmd_monitor(conf: cfgmod.MonitorRunConfig, out: Path, seed: int, **_) -> None:
    from .bench.ingest import read_feature_csv, split_initial
    from .bench.metrics import compute_metrics
    from .monitor import log_to_csv, run_stream

    Y, _ = read_feature_csv(conf.stream_path)
    truth = read_states(conf.oracle_path)
    init_stream, rest = split_initial(Y, None, conf.t_init)
    mcfg = conf.monitor.build()
    snap_dir = out / "models"
    if conf.snapshots:
        snap_dir.mkdir(exist_ok=True)

    def oracle(t: int) -> int:
        if t not in truth:
            raise KeyError(f"no oracle row for t={t}")
        return truth[t]

    def snapshot(t, model):
        if conf.snapshots:
            _write_text(snap_dir / f"model_t{t:05d}.json", model.to_json(indent=2) + "\n")

    try:
        res = run_stream(init_stream, rest, oracle, mcfg, seed, on_label=snapshot)
    except OracleError as exc:
        _write_text(out / "decision_log.partial.csv", log_to_csv(exc.log))
        raise
    _write_text(out / "decision_log.csv", log_to_csv(res.log))
    _write_text(out / "model.json", res.model.to_json(indent=2) + "\n")
    summary = {"stream_length": int(len(rest)), "labels_used": len(res.labeled),
               "label_budget": math.floor(mcfg.budget_B * len(rest)),
               "final_n_states": res.model.n_states}
    steps = range(conf.t_init + 1, conf.t_init + len(rest) + 1)
    if all(t in truth for t in steps):
        m = compute_metrics([truth[t] for t in steps], res.predictions)
        summary.update(f1=m.f1, precision=m.precision, recall=m.recall, macro_f1=m.macro_f1)
    _write_text(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")


def cmd_benchmark(conf: cfgmod.BenchmarkConfig, out: Path, seed: int, workers: int = 1,
                  replicates: Optional[int] = None, **_) -> None:
    from .bench import grid, plots

    spec = conf.build(seed=seed, replicates=replicates)
    result = grid.run_grid(spec, workers=workers, progress=_progress)
    _write_text(out / "results.csv", grid.results_csv(result, conf.record_runtime))
    _write_text(out / "failures.csv", grid.failures_csv(result))
    summary = grid.summarize(result)
    _write_text(out / "summary.csv", grid.summary_csv(summary))
    if conf.plots:
        plots.write_all(summary, out / "plots")
    viol = grid.budget_violations(result)
    if viol:
        raise AssertionError(f"{len(viol)} runs exceeded their label budget")
    if result.failures:
        print(f"warning: {len(result.failures)} of {len(result.rows)} cells failed; "
              f"see failures.csv", file=sys.stderr)


def _progress(done: int, total: int) -> None:
    if done == total or done % 25 == 0:
        print(f"  {done}/{total} runs", file=sys.stderr)


def cmd_report(results_path: Path, out: Path) -> None:
    """Summary CSV and plots from an existing results CSV."""
    from .bench import grid, plots

    rows = []
    with open(results_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(grid.RESULT_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise InputDataError(f"{results_path}: missing columns {sorted(missing)}")
        for rec in reader:
            def num(key):
                return float(rec[key]) if rec[key] else math.nan
            row = grid.CellRow(rec["method"], int(rec["p"]), float(rec["delta"]),
                               float(rec["budget"]), float(rec["w_exp"]), int(rec["replicate"]),
                               num("f1"), num("precision"), num("recall"), num("macro_f1"),
                               int(rec["labels_used"]) if rec["labels_used"] else -1,
                               num("runtime_ms"))
            if not rec["f1"]:
                row.error = "failed"
            rows.append(row)
    result = grid.GridResult(rows, [r for r in rows if r.error])
    summary = grid.summarize(result)
    _write_text(out / "summary.csv", grid.summary_csv(summary))
    plots.write_all(summary, out / "plots")


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "monitor": cmd_monitor,
            "benchmark": cmd_benchmark}


def execute(command: str, config_doc: dict, config_path: Optional[str], out: Path,
            seed: Optional[int], workers: int, replicates: Optional[int]) -> None:
    conf = cfgmod.CONFIG_TYPES[command].model_validate(config_doc)
    root_seed = conf.seed if seed is None else seed
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out, command, config_path, config_doc, root_seed, workers, replicates)
    COMMANDS[command](conf, out, root_seed, workers=workers, replicates=replicates)


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="activespm", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON configuration file")
        sp.add_argument("--seed", type=int, help="root seed (overrides the configuration)")
        sp.add_argument("--out", required=True, help="output directory")
        if name == "benchmark":
            sp.add_argument("--workers", type=int, default=1)
            sp.add_argument("--replicates", type=int)
    rp = sub.add_parser("report", help="summaries and plots from a results CSV")
    rp.add_argument("--results", required=True)
    rp.add_argument("--out", required=True)
    mp = sub.add_parser("rerun", help="replay a run manifest")
    mp.add_argument("--manifest", required=True)
    mp.add_argument("--out", help="output directory (default: the manifest's)")
    sv = sub.add_parser("serve", help="start the HTTP service")
    sv.add_argument("--host", default="127.0.0.1")
    sv.add_argument("--port", type=int, default=8000)
    return ap


def run(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "serve":
            import uvicorn
            uvicorn.run("activespm.service.app:app", host=args.host, port=args.port)
            return EXIT_OK
        if args.command == "report":
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            cmd_report(Path(args.results), out)
            return EXIT_OK
        if args.command == "rerun":
            man = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
            try:
                command, doc = man["command"], man["config"]
            except (KeyError, TypeError):
                raise ConfigError(f"{args.manifest}: not a run manifest") from None
            if command not in COMMANDS:
                raise ConfigError(f"{args.manifest}: unknown command {command!r}")
            out = Path(args.out or man["output_dir"])
            execute(command, doc, man.get("config_path"), out, man["root_seed"],
                    man.get("workers", 1), man.get("replicates"))
            return EXIT_OK
        text = Path(args.config).read_text(encoding="utf-8")
        conf = cfgmod.parse_config(text, args.command, args.config)
        execute(args.command, conf.model_dump(mode="json"), args.config, Path(args.out),
                args.seed, getattr(args, "workers", 1), getattr(args, "replicates", None))
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OracleError, InputDataError, OSError, json.JSONDecodeError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ActiveSPMError, ValueError, np.linalg.LinAlgError, FloatingPointError,
            AssertionError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
