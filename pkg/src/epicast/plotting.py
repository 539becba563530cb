"""Report figures rendered from the delimited score files (Agg backend)."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .harness import read_csv  # noqa: E402


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def _overall(summary, week="all"):
    return [r for r in summary if r["grouping"] == "overall" and str(r["week"]) == str(week)]


def plot_crps(summary, path) -> Path:
    fig, ax = plt.subplots(figsize=(7, 4))
    models = sorted({r["model"] for r in summary})
    x = np.arange(len(models))
    for off, week in ((-0.2, "1"), (0.2, "2")):
        rows = {r["model"]: float(r["mean_crps"]) for r in _overall(summary, week)}
        ax.bar(x + off, [rows.get(m, np.nan) for m in models], width=0.4, label=f"week {week}")
    ax.set_xticks(x, models, rotation=30, ha="right")
    ax.set_ylabel("mean CRPS (log incidence)")
    ax.legend()
    return _save(fig, Path(path))


def plot_relative_skill(summary, path) -> Path:
    rows = sorted(_overall(summary), key=lambda r: float(r["relative_skill"] or "nan"))
    fig, ax = plt.subplots(figsize=(6, 0.4 * len(rows) + 1.5))
    ax.barh([r["model"] for r in rows], [float(r["relative_skill"] or "nan") for r in rows])
    ax.axvline(1.0, color="k", lw=0.8)
    ax.set_xlabel("relative skill (lower is better)")
    return _save(fig, Path(path))


def plot_calibration(scores, summary, path) -> Path:
    by_model = defaultdict(list)
    for r in scores:
        by_model[r["model"]].append(float(r["pit"]))
    models = sorted(by_model)
    fig, axes = plt.subplots(2, 2, figsize=(10, 7))
    ax = axes[0, 0]
    for m in models:
        ax.hist(by_model[m], bins=10, range=(0, 1), histtype="step", density=True, label=m)
    ax.axhline(1.0, color="k", lw=0.8)
    ax.set_title("PIT histogram")
    ax.legend(fontsize=7)
    overall = {r["model"]: r for r in _overall(summary)}
    x = np.arange(len(models))
    ax = axes[0, 1]
    ax.bar(x - 0.2, [float(overall[m]["coverage_50"]) for m in models], 0.4, label="50%")
    ax.bar(x + 0.2, [float(overall[m]["coverage_95"]) for m in models], 0.4, label="95%")
    ax.axhline(0.5, color="C0", ls="--", lw=0.8)
    ax.axhline(0.95, color="C1", ls="--", lw=0.8)
    ax.set_xticks(x, models, rotation=30, ha="right")
    ax.set_title("empirical coverage")
    ax.legend()
    ax = axes[1, 0]
    ax.bar(x, [float(overall[m]["mean_dispersion"]) for m in models])
    ax.set_xticks(x, models, rotation=30, ha="right")
    ax.set_title("dispersion (scaled MAD, log scale)")
    ax = axes[1, 1]
    ax.bar(x, [float(overall[m]["mean_bias"]) for m in models])
    ax.axhline(0.5, color="k", lw=0.8)
    ax.set_xticks(x, models, rotation=30, ha="right")
    ax.set_title("bias (share of draws above the observation)")
    return _save(fig, Path(path))


def plot_hotspot_auc(auc_rows, path) -> Path:
    models = sorted({r["model"] for r in auc_rows})
    x = np.arange(len(models))
    fig, ax = plt.subplots(figsize=(7, 4))
    for off, week in ((-0.2, "1"), (0.2, "2")):
        vals = {r["model"]: float(r["auc"]) if r["auc"] else np.nan
                for r in auc_rows if str(r["week"]) == week}
        ax.bar(x + off, [vals.get(m, np.nan) for m in models], 0.4, label=f"week {week}")
    ax.axhline(0.5, color="k", lw=0.8)
    ax.set_ylim(0, 1)
    ax.set_xticks(x, models, rotation=30, ha="right")
    ax.set_ylabel("hotspot AUC")
    ax.legend()
    return _save(fig, Path(path))


def plot_crps_by(summary, grouping, path) -> Path:
    rows = [r for r in summary if r["grouping"] == grouping and str(r["week"]) == "all"]
    groups = sorted({r["group"] for r in rows})
    models = sorted({r["model"] for r in rows})
    vals = {(r["group"], r["model"]): float(r["mean_crps"]) for r in rows}
    fig, ax = plt.subplots(figsize=(max(6, 1.2 * len(groups)), 4))
    width = 0.8 / max(len(models), 1)
    x = np.arange(len(groups))
    for i, m in enumerate(models):
        ax.bar(x + i * width - 0.4 + width / 2, [vals.get((g, m), np.nan) for g in groups], width, label=m)
    ax.set_xticks(x, groups, rotation=30, ha="right")
    ax.set_ylabel("mean CRPS (log incidence)")
    ax.set_title(f"CRPS by {grouping}")
    ax.legend(fontsize=7)
    return _save(fig, Path(path))


def plot_ribbons(ribbons, series, region, path, origins_every: int = 4) -> Path:
    """Observed daily counts with 50%/95% forecast ribbons at every few origins."""
    rows = [r for r in ribbons if r["region"] == region]
    models = sorted({r["model"] for r in rows})
    fig, axes = plt.subplots(len(models), 1, figsize=(10, 2.4 * len(models) + 0.5),
                             sharex=True, squeeze=False)
    s = series[region]
    for ax, m in zip(axes[:, 0], models):
        ax.plot(s.dates, s.cases, color="k", lw=0.6)
        mrows = [r for r in rows if r["model"] == m]
        origins = sorted({r["origin"] for r in mrows})[::origins_every]
        for o in origins:
            rs = sorted((r for r in mrows if r["origin"] == o), key=lambda r: int(r["horizon_day"]))
            d = np.array([r["target_date"] for r in rs], dtype="datetime64[D]")
            q = {k: np.array([float(r[k]) for r in rs]) for k in ("q0025", "q0250", "q0500", "q0750", "q0975")}
            ax.fill_between(d, q["q0025"], q["q0975"], color="C0", alpha=0.25, lw=0)
            ax.fill_between(d, q["q0250"], q["q0750"], color="C0", alpha=0.5, lw=0)
            ax.plot(d, q["q0500"], color="C0", lw=0.8)
        ax.set_title(f"{region}: {m}", fontsize=9)
        ax.set_ylabel("cases")
    return _save(fig, Path(path))


def render_report(store_root, series, out_dir=None) -> list[Path]:
    """Draw every report figure from ``<store>/scores``; returns the written paths."""
    store_root = Path(store_root)
    scores_dir = store_root / "scores"
    out_dir = Path(out_dir) if out_dir else store_root / "figures"
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = read_csv(scores_dir / "summary.csv")
    scores = read_csv(scores_dir / "scores.csv")
    paths = [
        plot_crps(summary, out_dir / "crps_by_model.png"),
        plot_relative_skill(summary, out_dir / "relative_skill.png"),
        plot_calibration(scores, summary, out_dir / "calibration.png"),
        plot_hotspot_auc(read_csv(scores_dir / "hotspot_auc.csv"), out_dir / "hotspot_auc.png"),
        plot_crps_by(summary, "region", out_dir / "crps_by_region.png"),
        plot_crps_by(summary, "phase", out_dir / "crps_by_phase.png"),
    ]
    ribbons = read_csv(scores_dir / "ribbons.csv")
    for region in sorted({r["region"] for r in ribbons}):
        if region in series:
            paths.append(plot_ribbons(ribbons, series, region, out_dir / f"ribbons_{region}.png"))
    return paths
