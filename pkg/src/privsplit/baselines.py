"""Comparison methods: grid search over strategies and Gaussian feature noise."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .adversary import (AttackSpec, TrainedModels, score_trained, split_arrays, train_attacker)
from .compression import applicability_mask, apply_strategy
from .controller import SearchSpace, safe_evaluate
from .engine import Tensor
from .errors import ConfigError
from .ir.cost import count_params, partition_split
from .ir.graph import ModelGraph
from .ir.strategy import TECHNIQUES, Strategy
from .metrics import MetricsReport

# ------------------------------------------------------------------ grid search


@dataclass(frozen=True)
class GridSpec:
    partitions: Optional[tuple] = None   # None: every legal unit boundary
    menu: tuple = TECHNIQUES
    mode: str = "uniform"                # or "exhaustive"
    budget: Optional[int] = None
    allow_truncation: bool = False

    def __post_init__(self):
        if self.mode not in ("uniform", "exhaustive"):
            raise ConfigError(f"grid mode must be 'uniform' or 'exhaustive', got {self.mode!r}")
        for t in self.menu:
            if t not in TECHNIQUES:
                raise ConfigError(f"unknown technique {t!r} in grid menu")
        if self.budget is not None and self.budget < 1:
            raise ConfigError("grid budget must be positive")


def enumerate_grid(base: ModelGraph, spec: GridSpec) -> list:
    """Deduplicated strategies in a fixed order."""
    parts = list(spec.partitions) if spec.partitions is not None else \
        [p for p in base.unit_boundaries() if base.valid_partition(p)]
    for p in parts:
        if not base.valid_partition(p):
            raise ConfigError(f"partition {p} is not a legal cut of {base.name}")
    out = []
    if spec.mode == "exhaustive":
        space = SearchSpace.from_graph(base, spec.menu)
        out = [s for s in space.enumerate() if s.partition in parts]
    else:
        mask = applicability_mask(base, spec.menu)
        comp = base.compressible_indices()
        for p in parts:
            out.append(Strategy(p))
            for t, tech in enumerate(TECHNIQUES):
                if tech not in spec.menu:
                    continue
                pairs = tuple((i, tech) for i in comp if i < p and mask[i, t])
                if pairs:
                    out.append(Strategy(p, pairs))
    out = list(dict.fromkeys(out))
    if not out:
        raise ConfigError("grid enumeration is empty")
    if spec.budget is not None and len(out) > spec.budget:
        if not spec.allow_truncation:
            raise ConfigError(f"grid has {len(out)} strategies, over the budget of {spec.budget}")
        out = out[:spec.budget]
    return out


def encoder_param_count(base: ModelGraph, s: Strategy) -> float:
    try:
        g = apply_strategy(base, s)
    except Exception:
        return float("inf")
    return float(count_params(g, 0, g.partition))


@dataclass
class GridResult:
    best: Strategy
    best_report: Optional[MetricsReport]
    table: list = field(default_factory=list)   # dicts: strategy, R, encoder_params, error, report


def grid_search(base: ModelGraph, spec: GridSpec, evaluator: Callable[[Strategy], MetricsReport]) -> GridResult:
    """Evaluate every grid strategy; best by reward, ties to the smaller encoder and then the name."""
    table = []
    for s in enumerate_grid(base, spec):
        rep, r, err = safe_evaluate(evaluator, s)
        if rep is not None:
            rep.strategy, rep.method = str(s), "grid"
        table.append({"strategy": s, "R": r, "encoder_params": encoder_param_count(base, s),
                      "error": err, "report": rep})
    top = min(table, key=lambda row: (-row["R"], row["encoder_params"], str(row["strategy"])))
    return GridResult(top["strategy"], top["report"], table)


# ------------------------------------------------------------------ noise injection


@dataclass(frozen=True)
class NoiseSpec:
    multipliers: tuple = (0.1, 0.5, 1.0, 2.0)

    def __post_init__(self):
        if not self.multipliers or any(m <= 0 for m in self.multipliers):
            raise ConfigError("noise multipliers must be positive")


def dp_inject(features, spec: NoiseSpec, multiplier: float, rng: np.random.Generator):
    """features + N(0, sigma^2) with sigma = multiplier * mean |features|."""
    if multiplier < 0:
        raise ConfigError("noise multiplier cannot be negative")
    as_tensor = isinstance(features, Tensor)
    f = features.data if as_tensor else np.asarray(features)
    sigma = multiplier * float(np.abs(f).mean()) if f.size else 0.0
    out = (f + rng.normal(0.0, sigma, size=f.shape)).astype(f.dtype) if sigma > 0 else f.copy()
    return Tensor(out) if as_tensor else out


def noise_fn(spec: NoiseSpec, multiplier: float):
    """Feature hook for the adversary helpers: fresh noise on every call."""
    def apply(feats: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return dp_inject(feats, spec, multiplier, rng)
    return apply


def dp_baseline_eval(base: ModelGraph, partitions: Sequence[int], spec: NoiseSpec, attack: AttackSpec,
                     data, a_base: float = 1.0, s_variant: str = "s1", seed: int = 0) -> list:
    """One report per (partition, multiplier); the model itself is never modified."""
    x_aux, _, h_aux = split_arrays(data, "aux")
    rows = []
    for p in partitions:
        if not base.valid_partition(p):
            raise ConfigError(f"partition {p} is not a legal cut of {base.name}")
        placed = base.copy()
        placed.partition = p
        encoder, cloud = partition_split(placed)
        for m in spec.multipliers:
            rng = np.random.default_rng([seed, p, int(round(m * 1000))])
            fn = noise_fn(spec, m)
            decoder, _ = train_attacker(encoder, attack, x_aux, h_aux, rng, feature_fn=fn)
            trained = TrainedModels(placed, encoder, cloud, decoder, x_aux, fn, {}, seed)
            rep = score_trained(trained, attack, data, a_base, s_variant)
            rows.append(replace(rep, strategy=str(Strategy(p)), method="dp", noise=m, seed=seed))
    return rows


def best_noise_group(reports: Sequence[MetricsReport]) -> float:
    """Multiplier whose reports have the highest mean reward."""
    groups = {}
    for r in reports:
        groups.setdefault(r.noise, []).append(r.R)
    if not groups:
        raise ConfigError("no noise-injection rows to choose from")
    return max(sorted(groups), key=lambda m: np.mean(groups[m]))


__all__ = [
    "GridResult", "GridSpec", "NoiseSpec", "best_noise_group", "dp_baseline_eval", "dp_inject",
    "encoder_param_count", "enumerate_grid", "grid_search", "noise_fn",
]
