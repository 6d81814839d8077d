"""End-to-end workflows behind the CLI subcommands."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np

from ..adversary import TrainedModels, predict, train_proactive, train_reactive
from ..baselines import best_noise_group, dp_baseline_eval, grid_search
from ..compression import apply_strategy
from ..controller import EPISODE_FIELDS, SearchState, run_search
from ..engine import backward, make_optimizer
from ..engine.losses import cross_entropy
from ..ir.checkpoint import load_checkpoint, save_checkpoint
from ..ir.cost import compression_ratio
from ..ir.graph import ModelGraph
from ..ir.strategy import Strategy, decode
from ..ir.zoo import build_model
from ..metrics import MetricsReport, accuracy, write_csv
from .config import RunConfig
from .data import SyntheticDataset, generate_dataset

log = logging.getLogger("privsplit")


def derive_seed(*parts) -> int:
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:4], "little")


def dataset_fingerprint(ds: SyntheticDataset) -> str:
    h = hashlib.sha256(ds.images.tobytes())
    for arr in (ds.coarse_labels, ds.fine_labels, ds.train_idx, ds.aux_idx, ds.eval_idx):
        h.update(arr.tobytes())
    return h.hexdigest()


# ------------------------------------------------------------------ base model

def eval_accuracy(g: ModelGraph, images: np.ndarray, labels: np.ndarray) -> float:
    return accuracy(predict(g, images).argmax(axis=1), labels)


def train_base(model: str, data: SyntheticDataset, epochs: int = 5, lr: float = 1e-3,
               batch_size: int = 32, seed: int = 0) -> tuple:
    """Train a zoo model on the task labels; returns the model and its eval accuracy."""
    g = build_model(model, seed=seed)
    x, y, _ = data.split("train")
    rng = np.random.default_rng([seed, 7])
    opt = make_optimizer(g.parameters(), "adam", lr)
    for _ in range(epochs):
        for idx in np.array_split(rng.permutation(len(x)), max(1, -(-len(x) // batch_size))):
            loss = cross_entropy(g(x[idx], train=True, rng=rng), y[idx])
            backward(loss)
            opt.step()
            opt.zero_grad()
    xe, ye, _ = data.split("eval")
    return g, eval_accuracy(g, xe, ye)


# ------------------------------------------------------------------ candidate evaluation

class CandidateEvaluator:
    """Strategy -> retrained candidate -> MetricsReport, shared by every search method.

    Each candidate trains under a seed derived from the run seed and the
    strategy string, so a strategy scores the same whenever it is evaluated.
    """

    def __init__(self, base: ModelGraph, data, cfg: RunConfig, a_base: float, seed: int = 0,
                 method: str = "rl", cache: bool = True):
        self.base, self.data, self.cfg = base, data, cfg
        self.a_base, self.seed, self.method = a_base, seed, method
        self.cache: Optional[dict] = {} if cache else None
        self.calls = 0
        self.best: Optional[tuple] = None   # (R, strategy, TrainedModels)

    def __call__(self, s: Strategy) -> MetricsReport:
        key = str(s)
        if self.cache is not None and key in self.cache:
            return replace(self.cache[key])
        self.calls += 1
        t0 = time.perf_counter()
        composed = apply_strategy(self.base, s, self.cfg.knobs)
        sched = replace(self.cfg.schedule, seed=derive_seed(self.seed, key))
        train = train_proactive if self.cfg.adversary == "proactive" else train_reactive
        trained, rep = train(composed, self.cfg.attack, sched, self.data, teacher=self.base,
                             a_base=self.a_base, s_variant=self.cfg.s_variant)
        rep = replace(rep, CR=compression_ratio(self.base, composed), strategy=key, method=self.method,
                      seed=self.seed, wall_seconds=time.perf_counter() - t0)
        if self.best is None or rep.R > self.best[0]:
            self.best = (rep.R, s, trained)
        if self.cache is not None:
            self.cache[key] = rep
        return replace(rep)


# ------------------------------------------------------------------ persistence helpers

def write_reports(path: Path, reports) -> None:
    with open(path, "w", newline="") as fh:
        write_csv(reports, fh)


def write_episodes(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["seed"] + EPISODE_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def _save_trained(run_dir: Path, tag: str, trained: TrainedModels) -> None:
    save_checkpoint(trained.model, run_dir / "checkpoints" / f"{tag}-model")
    if trained.decoder is not None:
        save_checkpoint(trained.decoder, run_dir / "checkpoints" / f"{tag}-decoder")


def base_for_seed(cfg: RunConfig, data: SyntheticDataset, run_dir: Path, seed: int) -> tuple:
    """Load this run's base checkpoint for ``seed`` or train and store it."""
    ckpt = run_dir / "checkpoints" / f"base-s{seed}"
    bt = cfg.base_training
    if (ckpt / "manifest.json").exists():
        g = load_checkpoint(ckpt)
        xe, ye, _ = data.split("eval")
        return g, eval_accuracy(g, xe, ye)
    g, a_base = train_base(cfg.model, data, bt.epochs, bt.lr, bt.batch_size, seed)
    save_checkpoint(g, ckpt)
    return g, a_base


# ------------------------------------------------------------------ workflows

def run(cfg: RunConfig, run_dir) -> dict:
    """Execute ``cfg.mode`` into ``run_dir``; returns the summary dictionary."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    cfg.save(run_dir / "config.json")
    data = generate_dataset(cfg.dataset)
    summary = {"mode": cfg.mode, "model": cfg.model, "adversary": cfg.adversary,
               "attack": cfg.attack.kind, "seeds": list(cfg.seeds),
               "dataset_sha256": dataset_fingerprint(data), "per_seed": {}}
    reports, episodes, best_overall = [], [], None
    for seed in cfg.seeds:
        base, a_base = base_for_seed(cfg, data, run_dir, seed)
        info = {"A_base": a_base}
        log.info("seed %d: base accuracy %.4f", seed, a_base)
        if cfg.mode == "train-base":
            full = Strategy(len(base.layers))
            reports.append(MetricsReport(A=a_base, A_base=a_base, P=0.0, S=0.0, strategy=str(full),
                                         method="base", seed=seed))
        elif cfg.mode == "search":
            ev = CandidateEvaluator(base, data, cfg, a_base, seed, "rl")
            sc = cfg.search
            state = SearchState(episodes=sc.episodes, rollouts=sc.rollouts, lr=sc.lr,
                                optimizer=sc.optimizer, hidden=sc.hidden, seed=seed)
            res = run_search(base, ev, state, cfg.menu)
            episodes += [{"seed": seed, **row} for row in res.log]
            reports += res.reports
            info.update(best=str(res.best) if res.best else None,
                        R=res.best_report.R if res.best_report else None, evaluations=ev.calls)
            if ev.best is not None:
                _save_trained(run_dir, f"best-s{seed}", ev.best[2])
            if res.best_report and (best_overall is None or res.best_report.R > best_overall[0]):
                best_overall = (res.best_report.R, res.best)
        elif cfg.mode == "grid":
            ev = CandidateEvaluator(base, data, cfg, a_base, seed, "grid")
            spec = replace(cfg.grid, menu=tuple(m for m in cfg.grid.menu if m in cfg.menu))
            res = grid_search(base, spec, ev)
            reports += [row["report"] for row in res.table if row["report"] is not None]
            info.update(best=str(res.best), R=res.best_report.R if res.best_report else 0.0,
                        evaluations=len(res.table))
            if ev.best is not None:
                _save_trained(run_dir, f"best-s{seed}", ev.best[2])
            r = res.best_report.R if res.best_report else 0.0
            if best_overall is None or r > best_overall[0]:
                best_overall = (r, res.best)
        elif cfg.mode == "dp-baseline":
            parts = cfg.dp.partitions
            if parts is None:
                parts = [p for p in base.unit_boundaries()[1:-1] if base.valid_partition(p)]
            rows = dp_baseline_eval(base, parts, cfg.dp.noise, cfg.attack, data, a_base,
                                    cfg.s_variant, seed)
            reports += rows
            info.update(best_multiplier=best_noise_group(rows))
        elif cfg.mode == "attack":
            s = decode(cfg.strategy, base)
            ev = CandidateEvaluator(base, data, cfg, a_base, seed, "attack")
            rep = ev(s)
            reports.append(rep)
            _save_trained(run_dir, f"attack-s{seed}", ev.best[2])
            info.update(strategy=str(s), R=rep.R, A=rep.A, P=rep.P, S=rep.S)
        summary["per_seed"][str(seed)] = info
    run_id = derive_seed(cfg.to_json())
    for rep in reports:
        rep.run_id = f"{cfg.name}-{run_id:08x}"
    write_reports(run_dir / "metrics.csv", reports)
    if cfg.mode == "search":
        write_episodes(run_dir / "episodes.csv", episodes)
    if best_overall is not None:
        (run_dir / "best_strategy.txt").write_text(f"{best_overall[1]}\n")
        summary["best"] = str(best_overall[1])
    (run_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


__all__ = ["CandidateEvaluator", "base_for_seed", "dataset_fingerprint", "derive_seed",
           "eval_accuracy", "run", "train_base", "write_episodes", "write_reports"]
