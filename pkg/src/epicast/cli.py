"""Command line entry point: ``epicast backtest | score | report | simulate``.

Exit codes: 0 success, 1 configuration or input error, 2 some tasks failed.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import harness
from .corpus import DataError, load_phases, load_series, preprocess, write_series

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL = 0, 1, 2
log = logging.getLogger("epicast")


def _models_override(text: str | None):
    if not text:
        return None
    return [{"model": m.strip()} for m in text.split(",") if m.strip()]


def _load_config(args) -> harness.BacktestConfig:
    overrides = {"seed": args.seed, "draws": args.draws, "models": _models_override(args.models)}
    return harness.BacktestConfig.from_file(args.config, **overrides)


def cmd_backtest(args) -> int:
    cfg = _load_config(args)
    store = harness.run_backtest(cfg, jobs=args.jobs)
    failed = [r for r in store.manifest() if r["status"] != "ok"]
    print(f"forecasts written to {store.root} ({len(failed)} failed task(s))")
    return EXIT_PARTIAL if failed else EXIT_OK


def _store_inputs(store: harness.ForecastStore, input_path):
    cfg = store.config() if (store.root / "config.json").exists() else {}
    cases = input_path or cfg.get("cases")
    if not cases:
        raise harness.ConfigError("no observations given (use --input)")
    series = {k: preprocess(v) for k, v in load_series(cases).items()}
    phases = load_phases(cfg["phases"]) if cfg.get("phases") else {}
    return series, phases, cfg


def cmd_score(args) -> int:
    store = harness.ForecastStore(args.store)
    if not store.manifest_path.exists():
        raise harness.ConfigError(f"{store.root} is not a forecast store (no manifest.csv)")
    series, phases, cfg = _store_inputs(store, args.input)
    if args.phases:
        phases = load_phases(args.phases)
    paths = harness.run_scoring(store, series, phases, cfg.get("log_offset"))
    paths["best_variants"] = harness.write_grid_report(store)
    for name in sorted(paths):
        print(f"{name}: {paths[name]}")
    failed = [r for r in store.manifest() if r["status"] != "ok"]
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_report(args) -> int:
    from .plotting import render_report  # matplotlib only needed here

    store = harness.ForecastStore(args.store)
    scores_dir = store.root / "scores"
    if not (scores_dir / "summary.csv").exists():
        raise harness.ConfigError(f"no scores in {store.root}; run 'epicast score' first")
    series, _, _ = _store_inputs(store, args.input)
    rows = harness.read_csv(scores_dir / "summary.csv")
    overall = [r for r in rows if r["grouping"] == "overall" and r["week"] == "all"]
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["model", "n", "mean_crps", "relative_skill", "coverage_50", "coverage_95"])
    for r in overall:
        writer.writerow([r["model"], r["n"], r["mean_crps"], r["relative_skill"],
                         r["coverage_50"], r["coverage_95"]])
    for p in render_report(store.root, series, args.figures):
        log.info("figure %s", p)
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .synthetic import synthetic_corpus, write_phases

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    series, phases = synthetic_corpus(args.regions, seed=args.seed if args.seed is not None else 0)
    write_series(out / "cases.csv", series)
    write_phases(out / "phases.csv", phases)
    config = {
        "cases": "cases.csv",
        "phases": "phases.csv",
        "output": "store",
        "first_origin": "2020-03-15",
        "last_date": "2021-03-15",
        "draws": 500,
        "seed": 1,
        "models": [{"model": f} for f in harness.FAMILIES],
    }
    (out / "config.json").write_text(json.dumps(config, indent=2))
    print(f"synthetic corpus written to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="epicast", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("backtest", help="fit every model at every origin")
    b.add_argument("--config", required=True)
    b.add_argument("--jobs", type=int, default=1)
    b.add_argument("--seed", type=int)
    b.add_argument("--models", help="comma-separated model families (overrides the config)")
    b.add_argument("--draws", type=int)
    b.set_defaults(func=cmd_backtest)

    s = sub.add_parser("score", help="score a forecast store against observations")
    s.add_argument("--store", required=True)
    s.add_argument("--input", help="observed cases CSV (defaults to the config's cases)")
    s.add_argument("--phases")
    s.set_defaults(func=cmd_score)

    r = sub.add_parser("report", help="print the summary table and render figures")
    r.add_argument("--store", required=True)
    r.add_argument("--input")
    r.add_argument("--figures", help="figure directory (default <store>/figures)")
    r.set_defaults(func=cmd_report)

    m = sub.add_parser("simulate", help="write a synthetic corpus and a matching config")
    m.add_argument("--out", required=True)
    m.add_argument("--regions", type=int, default=6)
    m.add_argument("--seed", type=int)
    m.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", 1) is not None and getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (harness.ConfigError, DataError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
