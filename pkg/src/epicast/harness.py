"""Rolling-origin backtests: model grid, forecast store, scoring and summaries.

Store layout::

    <output>/config.json                      resolved configuration
    <output>/manifest.csv                     one row per (model, region, origin)
    <output>/forecasts/<model>/<region>/<origin>.csv   D x 14 sample matrix
    <output>/scores/*.csv                     written by :func:`run_scoring`
"""

from __future__ import annotations

import csv
import datetime as dt
import itertools
import json
import logging
import os
import re
import tempfile
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from . import gp, renewal, sarima, scoring, trendcast
from .corpus import (
    DEFAULT_LOG_OFFSET,
    TRAIN_DAYS,
    PhaseLabel,
    RegionSeries,
    forecast_origins,
    load_phases,
    load_series,
    preprocess,
    training_window,
)
from .forecast import DEFAULT_DRAWS, HORIZON, ForecastDraws
from .samplers import ChainSpec, seeded_rng

log = logging.getLogger(__name__)

FAMILIES = ("cori", "renewal-rw", "sarima", "trend", "gp")
MANIFEST_FIELDS = ["model", "family", "region", "origin", "status", "path", "reason", "max_rhat"]
QUANTILES = (0.025, 0.25, 0.5, 0.75, 0.975)

PARAM_DEFAULTS = {
    "cori": {"tau": 7},
    "renewal-rw": {},
    "sarima": {"p": 1, "d": 0, "q": 1},
    "trend": {"tau": trendcast.DEFAULT_TAU, "n_changepoints": trendcast.DEFAULT_CHANGEPOINTS},
    "gp": {"rho_short": 7},
}
GI_KEYS = ("gi_mean", "gi_sd", "gi_mean_sd", "gi_sd_sd", "max_gi_days")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelVariant:
    family: str
    params: tuple = ()  # sorted (key, value) pairs

    @property
    def model_id(self) -> str:
        if not self.params:
            return self.family
        inner = ",".join(f"{k}={_fmt(v)}" for k, v in self.params)
        return f"{self.family}[{inner}]"

    @property
    def settings(self) -> dict:
        out = dict(PARAM_DEFAULTS[self.family])
        out.update(dict(self.params))
        return out


def _fmt(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.=-]+", "_", text)


@dataclass
class BacktestConfig:
    cases: str
    output: str
    phases: str | None = None
    regions: list[str] | None = None
    first_origin: str | None = None
    last_date: str | None = None
    train_window: int = TRAIN_DAYS
    horizon: int = HORIZON
    draws: int = DEFAULT_DRAWS
    seed: int = 1
    chains: int = 4
    iterations: int = 1000
    warmup: int = 500
    log_offset: float = DEFAULT_LOG_OFFSET
    models: list = field(default_factory=lambda: [{"model": f} for f in FAMILIES])

    def __post_init__(self):
        if self.horizon != HORIZON:
            raise ConfigError(f"horizon must be {HORIZON}")
        if self.train_window != TRAIN_DAYS:
            raise ConfigError(f"train_window must be {TRAIN_DAYS}")
        if self.draws < 2:
            raise ConfigError("draws must be at least 2")
        if self.log_offset <= 0:
            raise ConfigError("log_offset must be positive")
        try:
            ChainSpec(self.chains, self.iterations, self.warmup)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        self.variants()  # validates the model list

    @classmethod
    def from_file(cls, path, **overrides) -> "BacktestConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        raw.update({k: v for k, v in overrides.items() if v is not None})
        for key in ("cases", "phases", "output"):
            if raw.get(key) and not os.path.isabs(raw[key]):
                raw[key] = str((path.parent / raw[key]).resolve())
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "cases" not in raw or "output" not in raw:
            raise ConfigError("config needs 'cases' and 'output'")
        return cls(**raw)

    @property
    def chain_spec(self) -> ChainSpec:
        return ChainSpec(self.chains, self.iterations, self.warmup, self.seed)

    def variants(self) -> list[ModelVariant]:
        """Expand every model entry's parameter grid (list values are grid axes)."""
        out = []
        for entry in self.models:
            entry = {"model": entry} if isinstance(entry, str) else dict(entry)
            family = entry.pop("model", None)
            if family not in FAMILIES:
                raise ConfigError(f"unknown model {family!r}; expected one of {FAMILIES}")
            allowed = set(PARAM_DEFAULTS[family]) | (
                set(GI_KEYS) if family in ("cori", "renewal-rw") else set()
            )
            bad = set(entry) - allowed
            if bad:
                raise ConfigError(f"unknown parameters for {family}: {sorted(bad)}")
            keys = sorted(entry)
            axes = [v if isinstance(v, list) else [v] for v in (entry[k] for k in keys)]
            for combo in itertools.product(*axes):
                v = ModelVariant(family, tuple(zip(keys, combo)))
                _check_variant(v)
                out.append(v)
        ids = [v.model_id for v in out]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate model variants in config")
        return out

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def _check_variant(v: ModelVariant) -> None:
    s = v.settings
    try:
        if v.family == "cori" and not (1 <= int(s["tau"]) <= TRAIN_DAYS - 1):
            raise ValueError("tau must lie in 1..55")
        if v.family == "sarima":
            sarima.SarimaOrder(int(s["p"]), int(s["d"]), int(s["q"]))
        if v.family == "trend" and float(s["tau"]) <= 0:
            raise ValueError("tau must be positive")
        if v.family == "gp" and float(s["rho_short"]) <= 0:
            raise ValueError("rho_short must be positive")
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{v.model_id}: {exc}") from None


def _generation_interval(settings: Mapping) -> renewal.GenerationInterval:
    kw = {}
    for key, attr in (("gi_mean", "mean"), ("gi_sd", "sd"), ("gi_mean_sd", "mean_sd"),
                      ("gi_sd_sd", "sd_sd"), ("max_gi_days", "max_days")):
        if key in settings:
            kw[attr] = settings[key]
    return renewal.GenerationInterval(**kw)


def forecast_variant(
    variant: ModelVariant,
    window,
    n_draws: int,
    spec: ChainSpec,
    rng: np.random.Generator,
) -> tuple[ForecastDraws, float]:
    """Fit one model variant on one window; returns the forecast and its max rhat."""
    s = variant.settings
    mid = variant.model_id
    if variant.family == "cori":
        fc = renewal.forecast_cori(
            window, int(s["tau"]), _generation_interval(s), n_draws, rng, model_id=mid
        )
        return fc, 1.0
    if variant.family == "renewal-rw":
        gi = _generation_interval(s)
        fit = renewal.fit_renewal_rw(window, gi, spec, rng)
        fc = renewal.forecast_renewal_rw(fit, window, gi, HORIZON, rng, n_draws, model_id=mid)
        return fc, fit.max_rhat
    if variant.family == "sarima":
        order = sarima.SarimaOrder(int(s["p"]), int(s["d"]), int(s["q"]))
        fit = sarima.fit_sarima(window, order, spec, rng)
        return sarima.forecast_sarima(fit, window, HORIZON, rng, n_draws, model_id=mid), fit.max_rhat
    if variant.family == "trend":
        fit = trendcast.fit_trend(window, float(s["tau"]), int(s["n_changepoints"]), spec, rng)
        return trendcast.forecast_trend(fit, window, HORIZON, rng, n_draws, model_id=mid), fit.max_rhat
    if variant.family == "gp":
        fit = gp.fit_gp(window, gp.KernelConfig(rho_short=float(s["rho_short"])), spec, rng)
        return gp.forecast_gp(fit, HORIZON, rng, n_draws, model_id=mid), float(np.max(fit.rhat))
    raise ConfigError(f"unknown model family {variant.family!r}")


# --- forecast store ---------------------------------------------------------


class ForecastStore:
    def __init__(self, root):
        self.root = Path(root)

    @property
    def manifest_path(self) -> Path:
        return self.root / "manifest.csv"

    def entry_path(self, model_id: str, region: str, origin: dt.date) -> Path:
        return self.root / "forecasts" / _slug(model_id) / _slug(region) / f"{origin.isoformat()}.csv"

    def write(self, fc: ForecastDraws) -> Path:
        path = self.entry_path(fc.model_id, fc.region_id, fc.origin)
        path.parent.mkdir(parents=True, exist_ok=True)
        header = ",".join(f"day{h + 1}" for h in range(fc.horizon))
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        try:
            with os.fdopen(fd, "w") as fh:
                np.savetxt(fh, fc.draws, fmt="%d", delimiter=",", header=header, comments="")
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        return path

    def read(self, model_id: str, region: str, origin: dt.date) -> ForecastDraws:
        path = self.entry_path(model_id, region, origin)
        draws = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
        return ForecastDraws(model_id, region, origin, draws)

    def is_complete(self, model_id: str, region: str, origin: dt.date, n_draws: int) -> bool:
        path = self.entry_path(model_id, region, origin)
        if not path.exists():
            return False
        try:
            fc = self.read(model_id, region, origin)
        except (OSError, ValueError):
            return False
        return fc.draws.shape == (n_draws, HORIZON)

    def manifest(self) -> list[dict]:
        if not self.manifest_path.exists():
            return []
        with open(self.manifest_path, newline="") as fh:
            return list(csv.DictReader(fh))

    def write_manifest(self, rows: Iterable[Mapping]) -> None:
        rows = sorted(rows, key=lambda r: (r["model"], r["region"], r["origin"]))
        _atomic_csv(self.manifest_path, MANIFEST_FIELDS, rows)

    def config(self) -> dict:
        return json.loads((self.root / "config.json").read_text())


def _atomic_csv(path: Path, fields, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    with os.fdopen(fd, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: r.get(k, "") for k in fields})
    os.replace(tmp, path)


@dataclass(frozen=True)
class _Task:
    variant: ModelVariant
    series: RegionSeries
    origin: dt.date
    n_draws: int
    spec: ChainSpec
    seed: int
    log_offset: float
    root: str


def _run_task(task: _Task) -> dict:
    store = ForecastStore(task.root)
    mid = task.variant.model_id
    row = {
        "model": mid,
        "family": task.variant.family,
        "region": task.series.region_id,
        "origin": task.origin.isoformat(),
    }
    try:
        window = training_window(task.series, task.origin, task.log_offset)
        rng = seeded_rng(task.seed, (task.series.region_id, task.origin.isoformat(), mid))
        fc, max_rhat = forecast_variant(task.variant, window, task.n_draws, task.spec, rng)
        path = store.write(fc)
    except Exception as exc:  # recorded per task; the run continues
        log.warning("%s %s %s failed: %s", mid, task.series.region_id, task.origin, exc)
        return {**row, "status": "failed", "path": "", "reason": f"{type(exc).__name__}: {exc}"}
    return {
        **row,
        "status": "ok",
        "path": str(path.relative_to(store.root)),
        "reason": "",
        "max_rhat": f"{max_rhat:.4f}",
    }


def load_inputs(cfg: BacktestConfig):
    series = {k: preprocess(v) for k, v in load_series(cfg.cases).items()}
    if cfg.regions:
        missing = set(cfg.regions) - set(series)
        if missing:
            raise ConfigError(f"regions not in the input: {sorted(missing)}")
        series = {k: series[k] for k in cfg.regions}
    phases = load_phases(cfg.phases) if cfg.phases else {}
    return series, phases


def plan_tasks(cfg: BacktestConfig, series: Mapping[str, RegionSeries]) -> list[tuple]:
    """All (variant, region, origin) triples of the experiment."""
    out = []
    for variant in cfg.variants():
        for region in sorted(series):
            s = series[region]
            first = cfg.first_origin or (s.start + dt.timedelta(days=TRAIN_DAYS)).isoformat()
            last = cfg.last_date or s.end.isoformat()
            for origin in forecast_origins(s, first, last, cfg.horizon):
                out.append((variant, region, origin))
    return out


def run_backtest(cfg: BacktestConfig, jobs: int = 1, progress=None) -> ForecastStore:
    """Fill the store; complete entries from earlier runs are kept as they are."""
    series, _ = load_inputs(cfg)
    store = ForecastStore(cfg.output)
    store.root.mkdir(parents=True, exist_ok=True)
    (store.root / "config.json").write_text(cfg.to_json())

    previous = {(r["model"], r["region"], r["origin"]): r for r in store.manifest()}
    rows, tasks = [], []
    for variant, region, origin in plan_tasks(cfg, series):
        key = (variant.model_id, region, origin.isoformat())
        if store.is_complete(variant.model_id, region, origin, cfg.draws):
            prev = previous.get(key, {})
            rows.append({
                "model": key[0], "family": variant.family, "region": region, "origin": key[2],
                "status": "ok",
                "path": str(store.entry_path(*key[:2], origin).relative_to(store.root)),
                "reason": "", "max_rhat": prev.get("max_rhat", ""),
            })
            continue
        tasks.append(
            _Task(variant, series[region], origin, cfg.draws, cfg.chain_spec, cfg.seed,
                  cfg.log_offset, str(store.root))
        )
    log.info("%d task(s) to run, %d already complete", len(tasks), len(rows))
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for i, row in enumerate(pool.map(_run_task, tasks, chunksize=4)):
                rows.append(row)
                if progress:
                    progress(i + 1, len(tasks))
    else:
        for i, task in enumerate(tasks):
            rows.append(_run_task(task))
            if progress:
                progress(i + 1, len(tasks))
    store.write_manifest(rows)
    return store


# --- scoring ----------------------------------------------------------------

SCORE_FIELDS = [
    "model", "family", "region", "origin", "week", "target_end", "phase", "observed",
    "crps_log", "pit", "covered_50", "covered_95", "dispersion", "bias",
    "mean", "median", "q025", "q975",
]
SUMMARY_FIELDS = [
    "grouping", "group", "week", "model", "n", "mean_crps", "median_crps", "relative_skill",
    "coverage_50", "coverage_95", "mean_dispersion", "mean_bias",
]


def _num(x) -> str:
    return repr(float(x))


def run_scoring(
    store: ForecastStore,
    series: Mapping[str, RegionSeries],
    phases: Mapping[str, PhaseLabel] | None = None,
    log_offset: float | None = None,
) -> dict[str, Path]:
    """Score every complete store entry and write records, summaries and ribbons."""
    phases = phases or {}
    if log_offset is None:
        try:
            log_offset = float(store.config().get("log_offset", DEFAULT_LOG_OFFSET))
        except OSError:
            log_offset = DEFAULT_LOG_OFFSET
    entries = [r for r in store.manifest() if r["status"] == "ok"]
    if not entries:
        raise ValueError(f"no complete forecasts in {store.root}")

    score_rows, ribbon_rows = [], []
    hot: dict[tuple, dict] = {}
    for e in entries:
        origin = dt.date.fromisoformat(e["origin"])
        region = e["region"]
        if region not in series:
            raise KeyError(f"no observations for region {region!r}")
        s = series[region]
        fc = store.read(e["model"], region, origin)
        # PIT randomization uses its own deterministic stream
        pit_rng = seeded_rng(0, ("pit", region, e["origin"], e["model"]))
        records = scoring.score_forecast(fc, s, phases.get(region), log_offset, pit_rng)
        weeks = scoring.weekly_aggregate(fc)
        for rec, wk in zip(records, weeks):
            q025, q975 = np.quantile(wk, [0.025, 0.975])
            score_rows.append({
                "model": e["model"], "family": e["family"], "region": region,
                "origin": e["origin"], "week": rec.week, "target_end": rec.target_end.isoformat(),
                "phase": rec.phase, "observed": _num(rec.observed), "crps_log": _num(rec.crps_log),
                "pit": _num(rec.pit), "covered_50": int(rec.covered_50),
                "covered_95": int(rec.covered_95), "dispersion": _num(rec.dispersion),
                "bias": _num(rec.bias), "mean": _num(np.mean(wk)), "median": _num(rec.median),
                "q025": _num(q025), "q975": _num(q975),
            })
            target = rec.target_end
            label, included = scoring.hotspot_label(s, target)
            h = hot.setdefault((region, e["origin"], rec.week), {
                "region": region, "origin": e["origin"], "week": rec.week,
                "target_date": target.isoformat(), "label": label, "included": int(included),
            })
            h[e["model"]] = _num(scoring.hotspot_prob(fc, s, rec.week))
        qs = fc.quantiles(QUANTILES)
        for hday, target in enumerate(fc.target_dates):
            ribbon_rows.append({
                "model": e["model"], "region": region, "origin": e["origin"],
                "target_date": target.isoformat(), "horizon_day": hday + 1,
                **{f"q{int(round(q * 1000)):04d}": _num(qs[i, hday]) for i, q in enumerate(QUANTILES)},
            })

    out_dir = store.root / "scores"
    models = sorted({e["model"] for e in entries})
    paths = {
        "scores": out_dir / "scores.csv",
        "hotspots": out_dir / "hotspots.csv",
        "hotspot_auc": out_dir / "hotspot_auc.csv",
        "summary": out_dir / "summary.csv",
        "pairwise": out_dir / "pairwise.csv",
        "ribbons": out_dir / "ribbons.csv",
    }
    key = lambda r: (r["model"], r["region"], r["origin"], r["week"])
    score_rows.sort(key=key)
    _atomic_csv(paths["scores"], SCORE_FIELDS, score_rows)
    hot_rows = sorted(hot.values(), key=lambda r: (r["region"], r["origin"], r["week"]))
    _atomic_csv(paths["hotspots"], ["region", "origin", "week", "target_date", "label",
                                    "included"] + models, hot_rows)
    _atomic_csv(paths["hotspot_auc"], ["model", "week", "n", "positives", "auc"],
                hotspot_auc_rows(hot_rows, models))
    summary, pairwise = summarize(score_rows)
    _atomic_csv(paths["summary"], SUMMARY_FIELDS, summary)
    _atomic_csv(paths["pairwise"], ["model", "versus", "ratio"], pairwise)
    ribbon_fields = ["model", "region", "origin", "target_date", "horizon_day"] + [
        f"q{int(round(q * 1000)):04d}" for q in QUANTILES
    ]
    ribbon_rows.sort(key=lambda r: (r["model"], r["region"], r["origin"], r["horizon_day"]))
    _atomic_csv(paths["ribbons"], ribbon_fields, ribbon_rows)
    return paths


def hotspot_auc_rows(hot_rows, models) -> list[dict]:
    out = []
    for m in models:
        for week in ("all", 1, 2):
            sel = [r for r in hot_rows if r["included"] and m in r and (week == "all" or r["week"] == week)]
            labels = [r["label"] for r in sel]
            probs = [float(r[m]) for r in sel]
            try:
                value = _num(scoring.auc(probs, labels))
            except ValueError:
                value = ""
            out.append({"model": m, "week": week, "n": len(sel), "positives": sum(labels), "auc": value})
    return out


def _group_summary(rows, grouping, group, week) -> list[dict]:
    by_model: dict[str, list] = defaultdict(list)
    for r in rows:
        by_model[r["model"]].append(r)
    # relative skill over the targets every model shares
    targets = None
    per_model = {}
    for m, rs in by_model.items():
        d = {(r["region"], r["origin"], r["week"]): float(r["crps_log"]) for r in rs}
        per_model[m] = d
        targets = set(d) if targets is None else targets & set(d)
    skill = {}
    if targets:
        table = scoring.relative_skill({m: {t: d[t] for t in targets} for m, d in per_model.items()})
        skill = table.as_dict()
    out = []
    for m in sorted(by_model):
        rs = by_model[m]
        crps = np.array([float(r["crps_log"]) for r in rs])
        out.append({
            "grouping": grouping, "group": group, "week": week, "model": m, "n": len(rs),
            "mean_crps": _num(crps.mean()), "median_crps": _num(np.median(crps)),
            "relative_skill": _num(skill[m]) if m in skill else "",
            "coverage_50": _num(np.mean([int(r["covered_50"]) for r in rs])),
            "coverage_95": _num(np.mean([int(r["covered_95"]) for r in rs])),
            "mean_dispersion": _num(np.mean([float(r["dispersion"]) for r in rs])),
            "mean_bias": _num(np.mean([float(r["bias"]) for r in rs])),
        })
    return out


def summarize(score_rows) -> tuple[list[dict], list[dict]]:
    """Summaries overall and by region and phase, each for both weeks and pooled."""
    out = []
    for week in ("all", 1, 2):
        rows = [r for r in score_rows if week == "all" or r["week"] == week]
        if not rows:
            continue
        out += _group_summary(rows, "overall", "all", week)
        for grouping, col in (("region", "region"), ("phase", "phase")):
            for g in sorted({r[col] for r in rows}):
                out += _group_summary([r for r in rows if r[col] == g], grouping, g or "unlabeled", week)

    per_model = defaultdict(dict)
    for r in score_rows:
        per_model[r["model"]][(r["region"], r["origin"], r["week"])] = float(r["crps_log"])
    common = set.intersection(*(set(d) for d in per_model.values())) if per_model else set()
    pairwise = []
    if common:
        table = scoring.relative_skill({m: {t: d[t] for t in common} for m, d in per_model.items()})
        for i, m in enumerate(table.models):
            for j, other in enumerate(table.models):
                pairwise.append({"model": m, "versus": other, "ratio": _num(table.theta[i, j])})
    return out, pairwise


def model_grid_report(summary_rows) -> list[dict]:
    """Best variant per family: lowest overall mean CRPS, ties to the smallest id."""
    best: dict[str, tuple] = {}
    for r in summary_rows:
        if r["grouping"] != "overall" or str(r["week"]) != "all":
            continue
        family = r["model"].split("[", 1)[0]
        cand = (float(r["mean_crps"]), r["model"])
        if family not in best or cand < best[family]:
            best[family] = cand
    return [
        {"family": f, "model": best[f][1], "mean_crps": _num(best[f][0])}
        for f in sorted(best)
    ]


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_grid_report(store: ForecastStore) -> Path:
    rows = model_grid_report(read_csv(store.root / "scores" / "summary.csv"))
    path = store.root / "scores" / "best_variants.csv"
    _atomic_csv(path, ["family", "model", "mean_crps"], rows)
    return path
