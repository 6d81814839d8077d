import hashlib

import numpy as np
import pytest

import privsplit.baselines as baselines
from oracles import MLP_MENU, mlp_proxy
from privsplit.adversary import AttackSpec
from privsplit.baselines import (GridSpec, NoiseSpec, best_noise_group, dp_baseline_eval, dp_inject,
                                 encoder_param_count, enumerate_grid, grid_search, noise_fn)
from privsplit.controller import SearchSpace
from privsplit.engine import Tensor
from privsplit.errors import ConfigError
from privsplit.harness.data import DatasetSpec, generate_dataset
from privsplit.ir import Strategy, build_model
from privsplit.metrics import MetricsReport


class Counting:
    def __init__(self, fn):
        self.fn, self.calls = fn, []

    def __call__(self, s):
        self.calls.append(s)
        return self.fn(s)


def param_hash(g) -> str:
    h = hashlib.sha256()
    for k in sorted(g.params):
        h.update(g.params[k].data.tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------- grid


def test_two_partitions_by_three_uniform_choices_is_six_evaluations():
    g = build_model("tiny-lenet")
    ev = Counting(lambda s: MetricsReport(A=0.9, A_base=0.9, P=0.5, S=0.5))
    res = grid_search(g, GridSpec(partitions=(3, 6), menu=("W1", "C1")), ev)
    assert len(ev.calls) == 6 and len(res.table) == 6
    assert {str(s) for s in ev.calls} == {"P:3", "P:3 0:W1", "P:3 0:C1",
                                          "P:6", "P:6 0:W1 3:W1", "P:6 0:C1 3:C1"}
    assert all(row["report"].method == "grid" for row in res.table)


def test_uniform_grid_is_deduplicated():
    g = build_model("tiny-lenet")
    strategies = enumerate_grid(g, GridSpec())
    assert len(strategies) == len(set(strategies))
    # partition 0 admits no compression, so it appears exactly once
    assert sum(s.partition == 0 for s in strategies) == 1


def test_exhaustive_grid_matches_controller_space_and_optimum():
    base = build_model("tiny-mlp")
    proxy = mlp_proxy(base)
    space = SearchSpace.from_graph(base, MLP_MENU)
    exhaustive_max = max(proxy(s).R for s in space.enumerate())
    ev = Counting(proxy)
    res = grid_search(base, GridSpec(menu=MLP_MENU, mode="exhaustive"), ev)
    assert len(ev.calls) == 13
    assert res.best_report.R == exhaustive_max
    assert str(res.best) == "P:3 1:F1"


def test_grid_and_search_share_the_reward_path():
    base = build_model("tiny-mlp")
    proxy = mlp_proxy(base)
    res = grid_search(base, GridSpec(menu=MLP_MENU, mode="exhaustive"), proxy)
    for row in res.table:
        assert row["R"] == proxy(row["strategy"]).R


def test_tie_break_prefers_smaller_encoder_then_name():
    base = build_model("tiny-mlp")
    res = grid_search(base, GridSpec(menu=MLP_MENU, mode="exhaustive"), lambda s: 0.5)
    smallest = min(encoder_param_count(base, row["strategy"]) for row in res.table)
    assert encoder_param_count(base, res.best) == smallest
    assert str(res.best) == "P:0"


def test_grid_result_is_permutation_invariant(monkeypatch):
    base = build_model("tiny-mlp")
    spec = GridSpec(menu=MLP_MENU, mode="exhaustive")
    order = enumerate_grid(base, spec)
    coarse = lambda s: round(mlp_proxy(base)(s).R, 1)      # plenty of ties
    ref = grid_search(base, spec, coarse).best
    for seed in range(5):
        perm = list(np.random.default_rng(seed).permutation(len(order)))
        monkeypatch.setattr(baselines, "enumerate_grid", lambda b, s: [order[i] for i in perm])
        assert grid_search(base, spec, coarse).best == ref


def test_failing_candidates_score_zero():
    base = build_model("tiny-mlp")

    def ev(s):
        if s.partition == 3:
            raise ValueError("nope")
        return 0.2

    res = grid_search(base, GridSpec(menu=MLP_MENU), ev)
    assert all(row["R"] == 0.0 and row["error"] for row in res.table if row["strategy"].partition == 3)
    assert res.best.partition != 3


def test_grid_errors():
    g = build_model("tiny-lenet")
    with pytest.raises(ConfigError):
        enumerate_grid(g, GridSpec(partitions=()))
    with pytest.raises(ConfigError):
        enumerate_grid(g, GridSpec(budget=3))
    assert len(enumerate_grid(g, GridSpec(budget=3, allow_truncation=True))) == 3
    with pytest.raises(ConfigError):
        enumerate_grid(build_model("tiny-vgg"), GridSpec(partitions=(9,)))
    with pytest.raises(ConfigError):
        GridSpec(mode="random")
    with pytest.raises(ConfigError):
        GridSpec(menu=("Q1",))


# ---------------------------------------------------------------- noise


def test_noise_sigma_example():
    f = np.array([1.0, -1.0, 2.0])
    rng = np.random.default_rng(0)
    noise = dp_inject(np.tile(f, 100_000), NoiseSpec(), 0.5, rng) - np.tile(f, 100_000)
    assert abs(noise.std() / (2 / 3) - 1) < 0.05
    assert abs(noise.mean()) < 0.01


def test_zero_multiplier_leaves_features_unchanged():
    f = np.random.default_rng(1).standard_normal((4, 8)).astype(np.float32)
    out = dp_inject(f, NoiseSpec(), 0.0, np.random.default_rng(0))
    assert np.array_equal(out, f) and out is not f
    t = dp_inject(Tensor(f), NoiseSpec(), 1.0, np.random.default_rng(0))
    assert isinstance(t, Tensor) and t.data.dtype == np.float32


def test_noise_is_fresh_per_call():
    fn = noise_fn(NoiseSpec(), 1.0)
    rng = np.random.default_rng(3)
    f = np.ones((2, 5))
    assert not np.array_equal(fn(f, rng), fn(f, rng))


def test_noise_spec_validation():
    for bad in ((), (0.0,), (1.0, -0.5)):
        with pytest.raises(ConfigError):
            NoiseSpec(bad)
    assert NoiseSpec().multipliers == (0.1, 0.5, 1.0, 2.0)


def test_dp_eval_leaves_model_untouched():
    data = generate_dataset(DatasetSpec(n=240, seed=3))
    base = build_model("tiny-lenet", seed=2)
    before, partition = param_hash(base), base.partition
    rows = dp_baseline_eval(base, [3], NoiseSpec((0.1, 2.0)), AttackSpec(epochs=1), data, seed=5)
    assert param_hash(base) == before and base.partition == partition
    assert [r.noise for r in rows] == [0.1, 2.0]
    assert all(r.method == "dp" and r.strategy == "P:3" and r.seed == 5 for r in rows)
    assert all(0.0 <= r.P <= 1.0 for r in rows)
    with pytest.raises(ConfigError):
        dp_baseline_eval(build_model("tiny-vgg"), [9], NoiseSpec((1.0,)), AttackSpec(epochs=1), data)


def test_best_noise_group():
    reps = [MetricsReport(A=0.9, A_base=0.9, P=p, S=0.5, noise=m)
            for m, p in ((0.5, 0.6), (0.5, 0.4), (2.0, 0.3), (2.0, 0.5), (1.0, 0.45))]
    assert best_noise_group(reps) == 2.0
    with pytest.raises(ConfigError):
        best_noise_group([])


def test_encoder_param_count_of_illegal_strategy_is_infinite():
    assert encoder_param_count(build_model("tiny-lenet"), Strategy(4, {1: "W1"})) == float("inf")
