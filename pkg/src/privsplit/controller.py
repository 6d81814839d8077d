"""Bidirectional-LSTM policy over compression and partition choices, trained
with REINFORCE against a moving-average baseline.

The controller walks the model's *units*: one unit per compressible layer
together with the non-compressible ops that follow it. For each unit it emits
a distribution over ``none`` plus the technique menu, and one shared softmax
picks the partition among the unit boundaries (partition 0 included).
"""

from __future__ import annotations

import hashlib
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .compression import applicability_mask
from .engine import Parameter, Tensor, backward, make_optimizer, no_grad, ops
from .errors import ConfigError
from .ir.graph import KINDS, ModelGraph
from .ir.strategy import TECHNIQUES, Strategy
from .metrics import MetricsReport

NEG_INF = -1e9
CHOICES = ("none",) + TECHNIQUES


# ------------------------------------------------------------------ state encoding

def _norm_count(v) -> float:
    return math.log2(1 + v) / 10.0


def encode_layer_states(g: ModelGraph, current: Optional[dict] = None) -> np.ndarray:
    """One fixed-width feature row per layer.

    Columns: layer-kind one-hot, normalized Cin, Cout, K, stride, depth
    position, then a one-hot over ``none`` + techniques for the compression
    currently assigned to the layer (``current`` maps layer index to id).
    """
    current = current or {}
    n = len(g.layers)
    rows = []
    for layer in g.layers:
        h = layer.hyper
        kind = np.zeros(len(KINDS))
        kind[KINDS.index(layer.kind)] = 1.0
        cin = h.get("cin", h.get("channels", 0))
        cout = h.get("cout", h.get("channels", 0))
        geom = [_norm_count(cin), _norm_count(cout), h.get("k", 0) / 7.0, h.get("stride", 0) / 4.0,
                layer.index / max(1, n - 1)]
        tech = np.zeros(len(CHOICES))
        tech[CHOICES.index(current.get(layer.index, "none"))] = 1.0
        rows.append(np.concatenate([kind, geom, tech]))
    return np.asarray(rows)


STATE_DIM = len(KINDS) + 5 + len(CHOICES)


# ------------------------------------------------------------------ network

class ControllerNet:
    """Single-layer biLSTM with a per-unit compression head and a partition head."""

    def __init__(self, input_dim: int = STATE_DIM, hidden: int = 64, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.input_dim, self.hidden = input_dim, hidden
        bound = 1.0 / math.sqrt(hidden)

        def param(name, shape, scale=bound):
            data = rng.uniform(-scale, scale, size=shape) if scale else np.zeros(shape)
            return Parameter(data, name, dtype=np.float64)

        d = input_dim + hidden
        self.params = {
            "fwd.weight": param("fwd.weight", (4 * hidden, d)),
            "fwd.bias": param("fwd.bias", (4 * hidden,)),
            "bwd.weight": param("bwd.weight", (4 * hidden, d)),
            "bwd.bias": param("bwd.bias", (4 * hidden,)),
            # heads start at zero so the initial policy is uniform over legal actions
            "comp.weight": param("comp.weight", (len(CHOICES), 2 * hidden), 0),
            "comp.bias": param("comp.bias", (len(CHOICES),), 0),
            "part.weight": param("part.weight", (1, 2 * hidden), 0),
            "part.bias": param("part.bias", (1,), 0),
            "part.zero": param("part.zero", (1, 1), 0),
        }
        self.optimizer = None

    def parameters(self) -> list:
        return list(self.params.values())

    def state_hash(self) -> str:
        h = hashlib.sha256()
        for k in sorted(self.params):
            h.update(self.params[k].data.tobytes())
        return h.hexdigest()

    def _lstm(self, xs: list, prefix: str) -> list:
        w, b = self.params[f"{prefix}.weight"], self.params[f"{prefix}.bias"]
        hd = self.hidden
        h = Tensor(np.zeros((1, hd)))
        c = Tensor(np.zeros((1, hd)))
        out = []
        for x in xs:
            z = ops.linear(ops.concat([x, h], axis=1), w, b)
            i = ops.sigmoid(z[:, 0:hd])
            f = ops.sigmoid(z[:, hd:2 * hd])
            g = ops.tanh(z[:, 2 * hd:3 * hd])
            o = ops.sigmoid(z[:, 3 * hd:])
            c = ops.add(ops.mul(f, c), ops.mul(i, g))
            h = ops.mul(o, ops.tanh(c))
            out.append(h)
        return out


@dataclass
class ControllerOutput:
    partition_logp: Tensor     # [1, units + 1]
    compression_logp: Tensor   # [units, len(CHOICES)]

    @property
    def partition_probs(self) -> np.ndarray:
        return np.exp(self.partition_logp.data[0])

    @property
    def compression_probs(self) -> np.ndarray:
        return np.exp(self.compression_logp.data)


def forward_controller(net: ControllerNet, states: np.ndarray, mask: np.ndarray,
                       partition_mask: Optional[np.ndarray] = None) -> ControllerOutput:
    """Log-distributions for the partition and for each unit's compression.

    ``states`` holds one row per unit; ``mask`` is ``[units, len(TECHNIQUES)]``
    (``none`` is always allowed); ``partition_mask`` flags legal boundaries.
    """
    units = len(states)
    xs = [Tensor(np.asarray(states[u:u + 1], dtype=np.float64)) for u in range(units)]
    fwd = net._lstm(xs, "fwd")
    bwd = net._lstm(xs[::-1], "bwd")[::-1]
    hs = ops.concat([ops.concat([f, b], axis=1) for f, b in zip(fwd, bwd)], axis=0)  # [units, 2H]

    legal = np.concatenate([np.ones((units, 1), bool), np.asarray(mask, bool)], axis=1)
    comp_logits = ops.linear(hs, net.params["comp.weight"], net.params["comp.bias"])
    comp_logits = ops.add(comp_logits, Tensor(np.where(legal, 0.0, NEG_INF)))

    part_units = ops.reshape(ops.linear(hs, net.params["part.weight"], net.params["part.bias"]), (1, units))
    part_logits = ops.concat([net.params["part.zero"], part_units], axis=1)
    if partition_mask is not None:
        pm = np.asarray(partition_mask, bool).reshape(1, units + 1)
        part_logits = ops.add(part_logits, Tensor(np.where(pm, 0.0, NEG_INF)))
    return ControllerOutput(ops.log_softmax(part_logits), ops.log_softmax(comp_logits))


# ------------------------------------------------------------------ search space

@dataclass(frozen=True)
class SearchSpace:
    """Units, legal partitions and technique masks derived from one base model."""

    comp_indices: tuple
    boundaries: tuple
    states: np.ndarray
    mask: np.ndarray
    partition_mask: np.ndarray

    @classmethod
    def from_graph(cls, g: ModelGraph, menu: Sequence[str] = TECHNIQUES) -> "SearchSpace":
        for t in menu:
            if t not in TECHNIQUES:
                raise ConfigError(f"unknown technique {t!r} in menu")
        comp = tuple(g.compressible_indices())
        if not comp:
            raise ConfigError(f"{g.name} has no compressible layers to search over")
        full = applicability_mask(g, menu)
        states = encode_layer_states(g)[list(comp)]
        bounds = tuple(g.unit_boundaries())
        pmask = np.array([g.valid_partition(p) for p in bounds])
        return cls(comp, bounds, states, full[list(comp)], pmask)

    @property
    def units(self) -> int:
        return len(self.comp_indices)

    def strategy(self, part_action: int, comp_actions: Sequence[int]) -> Strategy:
        p = self.boundaries[part_action]
        pairs = [(self.comp_indices[u], CHOICES[a]) for u, a in enumerate(comp_actions)
                 if a != 0 and u < part_action]
        return Strategy(p, tuple(pairs))

    def enumerate(self) -> list:
        """Every distinct legal strategy in the space (small models only)."""
        out = []
        for j in range(self.units + 1):
            if not self.partition_mask[j]:
                continue
            options = [np.flatnonzero(np.concatenate([[True], self.mask[u]])) for u in range(j)]
            for combo in (np.array(np.meshgrid(*options, indexing="ij")).reshape(j, -1).T
                          if j else np.zeros((1, 0), int)):
                out.append(self.strategy(j, list(combo) + [0] * (self.units - j)))
        return out


# ------------------------------------------------------------------ sampling

@dataclass
class Trajectory:
    strategy: Strategy
    partition_action: int
    compression_actions: tuple
    log_prob: float
    reward: float = 0.0
    rollout: int = 0
    report: Optional[MetricsReport] = None
    error: str = ""

    @property
    def length(self) -> int:
        return len(self.compression_actions) + 1

    def returns(self) -> list:
        """Return seen from every prefix state: gamma = 1 and only the final step pays."""
        return [self.reward] * self.length


def _action_logp(out: ControllerOutput, part_action: int, comp_actions: Sequence[int]):
    terms = [out.partition_logp[0, part_action]]
    terms += [out.compression_logp[u, a] for u, a in enumerate(comp_actions) if u < part_action]
    total = terms[0]
    for t in terms[1:]:
        total = ops.add(total, t)
    return total


def sample_strategy(out: ControllerOutput, space: SearchSpace, rng: np.random.Generator) -> Trajectory:
    """Draw the partition first, then a technique for each unit before it.

    Units at or past the partition stay uncompressed and contribute no
    log-probability.
    """
    pp = out.partition_probs
    j = int(rng.choice(len(pp), p=pp / pp.sum()))
    cp = out.compression_probs
    actions = []
    for u in range(space.units):
        if u < j:
            actions.append(int(rng.choice(cp.shape[1], p=cp[u] / cp[u].sum())))
        else:
            actions.append(0)
    logp = float(out.partition_logp.data[0, j] + sum(out.compression_logp.data[u, actions[u]] for u in range(j)))
    return Trajectory(space.strategy(j, actions), j, tuple(actions), logp)


# ------------------------------------------------------------------ REINFORCE

@dataclass
class SearchState:
    episodes: int = 200
    rollouts: int = 1
    lr: float = 0.03
    optimizer: str = "sgd"
    hidden: int = 64
    baseline_decay: float = 0.9
    gamma: float = 1.0
    seed: int = 0
    episode: int = 0
    baseline: Optional[float] = None

    def __post_init__(self):
        if self.gamma != 1.0:
            raise ConfigError("only undiscounted returns (gamma = 1) are supported")
        if self.episodes < 0 or self.rollouts < 1 or self.lr <= 0:
            raise ConfigError("episodes >= 0, rollouts >= 1 and lr > 0 required")
        if not 0.0 <= self.baseline_decay < 1.0:
            raise ConfigError("baseline decay must be in [0, 1)")


def reinforce_update(net: ControllerNet, trajectories: Sequence[Trajectory], state: SearchState,
                     space: SearchSpace) -> float:
    """One policy-gradient step on the mean rollout reward; returns the advantage used."""
    if not trajectories:
        raise ConfigError("reinforce_update needs at least one trajectory")
    mean_r = float(np.mean([t.reward for t in trajectories]))
    if state.baseline is None:
        state.baseline = mean_r
    advantage = mean_r - state.baseline
    if advantage != 0.0:
        if net.optimizer is None:
            net.optimizer = make_optimizer(net.parameters(), state.optimizer, state.lr)
        out = forward_controller(net, space.states, space.mask, space.partition_mask)
        total = None
        for t in trajectories:
            term = _action_logp(out, t.partition_action, t.compression_actions)
            total = term if total is None else ops.add(total, term)
        loss = ops.mul(total, -advantage / len(trajectories))
        backward(loss)
        for p in net.parameters():
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
        net.optimizer.step()
        net.optimizer.zero_grad()
    d = state.baseline_decay
    state.baseline = d * state.baseline + (1.0 - d) * mean_r
    return advantage


# ------------------------------------------------------------------ search loop

EPISODE_FIELDS = ["episode", "rollout", "strategy", "A", "P", "S", "R", "baseline", "log_prob_sum", "error"]


@dataclass
class SearchResult:
    best: Optional[Strategy]
    best_report: Optional[MetricsReport]
    log: list = field(default_factory=list)
    reports: list = field(default_factory=list)
    controller: Optional[ControllerNet] = None


def safe_evaluate(evaluator: Callable, s: Strategy) -> tuple:
    try:
        rep = evaluator(s)
    except Exception as exc:  # a broken candidate must not end the search
        return None, 0.0, f"{type(exc).__name__}: {exc}"
    if isinstance(rep, MetricsReport):
        return rep, float(rep.R), ""
    return None, float(rep), ""


def run_search(base: ModelGraph, evaluator: Callable[[Strategy], MetricsReport],
               state: SearchState = None, menu: Sequence[str] = TECHNIQUES,
               on_episode: Optional[Callable[[list], None]] = None) -> SearchResult:
    """Run ``state.episodes`` episodes of ``state.rollouts`` sampled strategies."""
    state = state or SearchState()
    space = SearchSpace.from_graph(base, menu)
    net = ControllerNet(space.states.shape[1], state.hidden, seed=state.seed)
    rng = np.random.default_rng([state.seed, 1])
    result = SearchResult(None, None, controller=net)
    best_r = -math.inf
    while state.episode < state.episodes:
        with no_grad():
            out = forward_controller(net, space.states, space.mask, space.partition_mask)
        trajs = []
        for j in range(state.rollouts):
            t = sample_strategy(out, space, rng)
            t.rollout = j
            t0 = time.perf_counter()
            t.report, t.reward, t.error = safe_evaluate(evaluator, t.strategy)
            if t.report is not None:
                t.report.episode, t.report.strategy = state.episode, str(t.strategy)
                if not t.report.wall_seconds:
                    t.report.wall_seconds = time.perf_counter() - t0
                result.reports.append(t.report)
            if t.reward > best_r:
                best_r, result.best, result.best_report = t.reward, t.strategy, t.report
            trajs.append(t)
        reinforce_update(net, trajs, state, space)
        rows = []
        for t in trajs:
            rep = t.report
            rows.append({"episode": state.episode, "rollout": t.rollout, "strategy": str(t.strategy),
                         "A": rep.A if rep else "", "P": rep.P if rep else "", "S": rep.S if rep else "",
                         "R": t.reward, "baseline": state.baseline, "log_prob_sum": t.log_prob,
                         "error": t.error})
        result.log.extend(rows)
        if on_episode is not None:
            on_episode(rows)
        state.episode += 1
    return result


__all__ = [
    "CHOICES", "ControllerNet", "ControllerOutput", "EPISODE_FIELDS", "STATE_DIM", "SearchResult",
    "SearchSpace", "SearchState", "Trajectory", "encode_layer_states", "forward_controller",
    "reinforce_update", "run_search", "safe_evaluate", "sample_strategy",
]
