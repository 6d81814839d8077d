"""Summary tables and SVG plots rebuilt from run-directory CSV files only."""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..baselines import best_noise_group  # noqa: E402
from ..errors import DataError  # noqa: E402
from ..metrics import read_csv  # noqa: E402

SUMMARY_FIELDS = ["model", "method", "adversary", "strategy", "A", "P_variant", "P", "S_variant", "S",
                  "R", "noise"]
DELTA_FIELDS = ["dR_grid", "dP_grid", "dR_dp", "dP_dp"]


def relative_gain(new: float, ref: float) -> Optional[float]:
    """(new - ref) / ref, or None when the reference is zero."""
    return None if ref == 0 else (new - ref) / ref


def _load_run(run_dir: Path) -> tuple:
    cfg_path = run_dir / "config.json"
    cfg = json.loads(cfg_path.read_text()) if cfg_path.exists() else {}
    metrics = run_dir / "metrics.csv"
    if not metrics.exists():
        raise DataError(f"{run_dir} has no metrics.csv")
    with open(metrics, newline="") as fh:
        reports = read_csv(fh)
    return cfg, reports


def _pick(method: str, reports: list):
    """Representative row: the best reward, restricted to the best noise group for dp."""
    if method == "dp":
        m = best_noise_group(reports)
        reports = [r for r in reports if r.noise == m]
    return max(reports, key=lambda r: (r.R, -len(r.strategy), r.strategy))


def summarize(run_dirs: Sequence) -> list:
    groups = defaultdict(list)
    adversary = {}
    for d in run_dirs:
        cfg, reports = _load_run(Path(d))
        model = cfg.get("model", "?")
        for r in reports:
            groups[(model, r.method)].append(r)
            adversary[(model, r.method)] = cfg.get("adversary", "")
    if not groups:
        raise DataError("no metric rows to report")
    rows = []
    for (model, method), reps in sorted(groups.items()):
        best = _pick(method, reps)
        rows.append({"model": model, "method": method, "adversary": adversary[(model, method)],
                     "strategy": best.strategy, "A": best.A, "P_variant": best.P_variant, "P": best.P,
                     "S_variant": best.S_variant, "S": best.S, "R": best.R, "noise": best.noise})
    by_key = {(r["model"], r["method"]): r for r in rows}
    for r in rows:
        if r["method"] != "rl":
            continue
        for ref, tag in (("grid", "grid"), ("dp", "dp")):
            other = by_key.get((r["model"], ref))
            if other is not None:
                r[f"dR_{tag}"] = relative_gain(r["R"], other["R"])
                r[f"dP_{tag}"] = relative_gain(r["P"], other["P"])
    return rows


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def _pct(v) -> str:
    return "" if v is None else f"{100 * v:+.2f}%"


def write_summary(rows: list, out_dir: Path) -> list:
    deltas = [f for f in DELTA_FIELDS if any(f in r for r in rows)]
    fields = SUMMARY_FIELDS + deltas
    with open(out_dir / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k)) for k in fields})
    lines = ["| " + " | ".join(fields) + " |", "|" + "---|" * len(fields)]
    for r in rows:
        cells = [_pct(r.get(k)) if k in DELTA_FIELDS else _fmt(r.get(k)) for k in fields]
        lines.append("| " + " | ".join(cells) + " |")
    (out_dir / "summary.md").write_text("\n".join(lines) + "\n")
    return fields


def _episode_series(run_dir: Path) -> dict:
    path = run_dir / "episodes.csv"
    if not path.exists():
        return {}
    series = defaultdict(lambda: {"episode": [], "R": [], "P": []})
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            s = series[row["seed"]]
            s["episode"].append(int(row["episode"]))
            s["R"].append(float(row["R"]))
            s["P"].append(float(row["P"]) if row["P"] != "" else np.nan)
    return dict(series)


def _line_plot(series: dict, key: str, ylabel: str, path: Path) -> None:
    plt.rcParams["svg.hashsalt"] = "privsplit"
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for seed, s in sorted(series.items()):
        x, y = np.asarray(s["episode"]), np.asarray(s[key], dtype=float)
        ax.plot(x, y, lw=0.6, alpha=0.35)
        if len(y) >= 10:
            k = max(5, len(y) // 20)
            smooth = np.convolve(np.nan_to_num(y), np.ones(k) / k, mode="valid")
            ax.plot(x[k - 1:], smooth, lw=1.6, label=f"seed {seed} (moving avg {k})")
    ax.set_xlabel("episode")
    ax.set_ylabel(ylabel)
    if ax.get_legend_handles_labels()[0]:
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def emit_report(run_dirs: Sequence, out_dir=None) -> list:
    """Write summary.csv, summary.md and per-run episode plots; returns the rows."""
    run_dirs = [Path(d) for d in run_dirs]
    if not run_dirs:
        raise DataError("no run directories given")
    out = Path(out_dir) if out_dir is not None else run_dirs[0]
    out.mkdir(parents=True, exist_ok=True)
    rows = summarize(run_dirs)
    write_summary(rows, out)
    for d in run_dirs:
        series = _episode_series(d)
        if series:
            _line_plot(series, "R", "reward R", d / "reward_vs_episode.svg")
            _line_plot(series, "P", "privacy loss P", d / "privacy_vs_episode.svg")
    return rows


__all__ = ["emit_report", "relative_gain", "summarize", "write_summary"]
