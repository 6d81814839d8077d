"""Graph-rewrite compression techniques F1-F3, C1-C3, W1-W2.

Every rewrite returns a new graph; the input graph is left untouched. Layers
created by a rewrite inherit the ``origin`` of the layer they replace, which
is how strategies written against base-model indices find their targets and
partition point after earlier rewrites have shifted positions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, StructureError
from .ir.cost import count_params
from .ir.graph import INPLACE, LayerSpec, ModelGraph
from .ir.strategy import APPLIES_TO, TECHNIQUES, Strategy, check_against


@dataclass(frozen=True)
class CompressionKnobs:
    """Per-technique hyperparameters; ``rank=None`` means max(1, min(m, n) // 4)."""

    rank: Optional[int] = None
    sparsity: float = 0.5
    expansion: int = 2
    squeeze_ratio: float = 0.25
    prune_fraction: float = 0.5
    seed: int = 0


@dataclass
class RewriteReport:
    technique: str
    target: int
    params_before: int
    params_after: int
    structural_notes: list = field(default_factory=list)


def _rng(knobs: CompressionKnobs, idx: int) -> np.random.Generator:
    return np.random.default_rng([knobs.seed, idx])


def _partition_origin(g: ModelGraph) -> float:
    return g.layers[g.partition].origin if g.partition < len(g.layers) else float("inf")


def _remap_partition(layers: list, p_origin: float) -> int:
    for i, layer in enumerate(layers):
        if layer.origin is not None and layer.origin >= p_origin:
            return i
    return len(layers)


def _splice(g: ModelGraph, start: int, stop: int, new_layers: list, inner_links=(),
            rng: Optional[np.random.Generator] = None) -> ModelGraph:
    """Replace layers ``[start, stop)`` by ``new_layers`` in a copy of ``g``.

    ``inner_links`` are (src, dst) offsets relative to ``start``. Parameters of
    new layers that are not already in the store are freshly initialized.
    """
    out = g.copy()
    p_origin = _partition_origin(g)
    for layer in out.layers[start:stop]:
        keep = {nl.name for nl in new_layers}
        if layer.name not in keep:
            out.drop_layer_state(layer)
    delta = len(new_layers) - (stop - start)
    links = []
    for s, d in out.links:
        if start < s < stop or start <= d < stop:
            raise StructureError(f"rewrite of layers {start}..{stop - 1} would break link ({s}, {d})")
        links.append((s + delta if s >= stop else s, d + delta if d >= stop else d))
    links += [(start + s, start + d) for s, d in inner_links]
    layers = out.layers[:start] + list(new_layers) + out.layers[stop:]
    graph = ModelGraph(layers, g.input_shape, sorted(links), out.params, out.buffers,
                       _remap_partition(layers, p_origin), g.name, g.dtype)
    graph.init_params(rng if rng is not None else np.random.default_rng(0), new_layers)
    return graph


def _layer(g: ModelGraph, idx: int, kinds: tuple, tech: str) -> LayerSpec:
    if not 0 <= idx < len(g.layers):
        raise ConfigError(f"{tech}: layer index {idx} out of range")
    layer = g.layers[idx]
    if layer.kind not in kinds:
        raise StructureError(f"{tech}: layer {idx} is {layer.kind}, needs one of {kinds}")
    return layer


def _new(name, kind, origin, **hyper) -> LayerSpec:
    return LayerSpec(0, kind, hyper, name, origin)


def _magnitude_mask(values: np.ndarray, fraction: float) -> np.ndarray:
    n = values.size
    drop = int(np.floor(fraction * n))
    mask = np.ones(n, dtype=values.dtype)
    if drop:
        order = np.argsort(np.abs(values).reshape(-1), kind="stable")
        mask[order[:drop]] = 0
    return mask.reshape(values.shape)


def _check_fraction(p: float, what: str) -> None:
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"{what} must be in [0, 1), got {p}")


# ---------------------------------------------------------------- factorization

def _svd_factors(g: ModelGraph, idx: int, k: Optional[int], tech: str):
    layer = _layer(g, idx, ("fc",), tech)
    w = g.params[f"{layer.name}.weight"].data.astype(np.float64)
    mask = g.buffers.get(f"{layer.name}.weight_mask")
    if mask is not None:
        w = w * mask
    m, n = w.shape
    k = max(1, min(m, n) // 4) if k is None else int(k)
    if not 1 <= k <= min(m, n):
        raise ConfigError(f"{tech}: rank {k} outside 1..{min(m, n)}")
    u, s, vt = np.linalg.svd(w, full_matrices=False)
    root = np.sqrt(s[:k])
    first = root[:, None] * vt[:k]       # k x n
    second = u[:, :k] * root[None, :]    # m x k
    return layer, k, first, second


def _factorized(g, idx, k, tech, sparsity):
    layer, k, first, second = _svd_factors(g, idx, k, tech)
    h = layer.hyper
    a = _new(f"{layer.name}_u", "fc", layer.origin, cin=h["cin"], cout=k, bias=False)
    b = _new(f"{layer.name}_v", "fc", layer.origin, cin=k, cout=h["cout"], bias=h.get("bias", True))
    out = _splice(g, idx, idx + 1, [a, b])
    out.params[f"{a.name}.weight"].data[...] = first
    out.params[f"{b.name}.weight"].data[...] = second
    if h.get("bias", True):
        out.params[f"{b.name}.bias"].data[...] = g.params[f"{layer.name}.bias"].data
    if sparsity:
        for name in (a.name, b.name):
            p = out.params[f"{name}.weight"]
            mask = _magnitude_mask(p.data, sparsity)
            p.data *= mask
            out.buffers[f"{name}.weight_mask"] = mask
    return out


def apply_f1_svd(g: ModelGraph, idx: int, k: Optional[int] = None) -> ModelGraph:
    """Replace an fc layer by two rank-``k`` factor layers initialised from its SVD."""
    return _factorized(g, idx, k, "F1", 0.0)


def apply_f2_ksvd(g: ModelGraph, idx: int, k: Optional[int] = None, sparsity: float = 0.5) -> ModelGraph:
    """F1 followed by magnitude sparsification of each factor (masked zeros)."""
    _check_fraction(sparsity, "F2 sparsity")
    return _factorized(g, idx, k, "F2", sparsity)


def _f3_span(g: ModelGraph, idx: int):
    _layer(g, idx, ("fc",), "F3")
    f = idx - 1
    if f < 0 or g.layers[f].kind != "flatten" or len(g.shapes[f]) != 3:
        raise StructureError(f"F3: layer {idx} is not the first fc after spatial features")
    if not any(layer.kind == "conv" for layer in g.layers[:f]):
        raise StructureError("F3: no convolutional feature extractor before the fc block")
    tail = g.layers[idx:]
    if any(layer.kind not in ("fc",) + INPLACE for layer in tail):
        raise StructureError("F3: fc block must run to the model output")
    if g.layers[-1].kind != "fc":
        raise StructureError("F3: model must end in a classifier fc")
    return f


def apply_f3_gap(g: ModelGraph, idx: int, rng: Optional[np.random.Generator] = None) -> ModelGraph:
    """Replace the fc stack starting at ``idx`` by global-avg pooling + one classifier fc."""
    f = _f3_span(g, idx)
    channels = g.shapes[f][0]
    classes = g.layers[-1].hyper["cout"]
    flat = g.layers[f]
    base = g.layers[idx]
    new = [_new(f"{flat.name}_gap", "pool", flat.origin, mode="global-avg"),
           _new(f"{flat.name}_flat", "flatten", flat.origin),
           _new(f"{base.name}_gapfc", "fc", base.origin, cin=channels, cout=classes)]
    return _splice(g, f, len(g.layers), new, rng=rng)


# ---------------------------------------------------------------- conv rewrites

def _plain_conv(g, idx, tech) -> LayerSpec:
    layer = _layer(g, idx, ("conv",), tech)
    if layer.hyper.get("groups", 1) != 1:
        raise StructureError(f"{tech}: layer {idx} is already a grouped conv")
    return layer


def apply_c1_depthwise(g: ModelGraph, idx: int, rng: Optional[np.random.Generator] = None) -> ModelGraph:
    """KxK depthwise conv + ReLU + 1x1 pointwise conv; weights re-initialized."""
    layer = _plain_conv(g, idx, "C1")
    h = layer.hyper
    if h["k"] < 3:
        raise ConfigError(f"C1: layer {idx} has kernel {h['k']}; depthwise split gives no gain")
    new = [_new(f"{layer.name}_dw", "conv", layer.origin, cin=h["cin"], cout=h["cin"], k=h["k"],
                stride=h.get("stride", 1), padding=h.get("padding", 0), groups=h["cin"], bias=False),
           _new(f"{layer.name}_dwrelu", "relu", layer.origin),
           _new(f"{layer.name}_pw", "conv", layer.origin, cin=h["cin"], cout=h["cout"], k=1,
                stride=1, padding=0, bias=h.get("bias", True))]
    return _splice(g, idx, idx + 1, new, rng=rng)


def apply_c2_inverted_residual(g: ModelGraph, idx: int, expansion: int = 2,
                               rng: Optional[np.random.Generator] = None) -> ModelGraph:
    """1x1 expand -> KxK depthwise -> 1x1 project; skip link when shapes allow."""
    layer = _plain_conv(g, idx, "C2")
    if expansion < 1:
        raise ConfigError(f"C2: expansion must be >= 1, got {expansion}")
    h = layer.hyper
    hidden = expansion * h["cin"]
    n = layer.name
    new = [_new(f"{n}_exp", "conv", layer.origin, cin=h["cin"], cout=hidden, k=1, bias=False),
           _new(f"{n}_exprelu", "relu", layer.origin),
           _new(f"{n}_dw", "conv", layer.origin, cin=hidden, cout=hidden, k=h["k"],
                stride=h.get("stride", 1), padding=h.get("padding", 0), groups=hidden, bias=False),
           _new(f"{n}_dwrelu", "relu", layer.origin),
           _new(f"{n}_proj", "conv", layer.origin, cin=hidden, cout=h["cout"], k=1, bias=False)]
    links = []
    if g.shapes[idx] == g.shapes[idx + 1]:
        new.append(_new(f"{n}_add", "residual-add", layer.origin))
        links.append((0, 5))
    return _splice(g, idx, idx + 1, new, links, rng=rng)


def apply_c3_fire(g: ModelGraph, idx: int, squeeze: float = 0.25,
                  rng: Optional[np.random.Generator] = None) -> ModelGraph:
    """1x1 squeeze to ``max(1, round(squeeze*Cin))`` channels, then a fire expand
    (parallel 1x1 and 3x3 convs, each Cout/2 wide, concatenated)."""
    layer = _plain_conv(g, idx, "C3")
    h = layer.hyper
    if h["cout"] % 2:
        raise ConfigError(f"C3: Cout={h['cout']} is odd; expand halves must be integral")
    if 2 * h.get("padding", 0) != h["k"] - 1:
        raise StructureError("C3: only size-preserving (2p = K-1) convs can become fire layers")
    s = max(1, int(round(squeeze * h["cin"])))
    n = layer.name
    new = [_new(f"{n}_sq", "conv", layer.origin, cin=h["cin"], cout=s, k=1,
                stride=h.get("stride", 1), padding=0, bias=False),
           _new(f"{n}_sqrelu", "relu", layer.origin),
           _new(f"{n}_fire", "fire-expand", layer.origin, cin=s, cout=h["cout"])]
    return _splice(g, idx, idx + 1, new, rng=rng)


# ---------------------------------------------------------------- pruning

def apply_w1_prune(g: ModelGraph, idx: int, fraction: float = 0.5) -> ModelGraph:
    """Zero the smallest-|w| ``fraction`` of a conv/fc weight behind a persistent mask."""
    layer = _layer(g, idx, ("conv", "fc"), "W1")
    _check_fraction(fraction, "W1 fraction")
    out = g.copy()
    key = f"{layer.name}.weight"
    w = out.params[key]
    mask = _magnitude_mask(w.data, fraction)
    old = out.buffers.get(f"{key}_mask")
    if old is not None:
        mask = mask * old
    w.data *= mask
    out.buffers[f"{key}_mask"] = mask
    return out


def _w2_plan(g: ModelGraph, idx: int) -> list:
    """Downstream layers whose input channels follow the pruned filters."""
    layer = _plain_conv(g, idx, "W2")
    sources = {s for s, _ in g.links}
    plan = []
    j = idx + 1
    while j < len(g.layers):
        nxt = g.layers[j]
        if j in sources:
            raise StructureError(f"W2: channels of layer {idx} feed a residual link")
        if nxt.kind in ("relu", "dropout", "pool", "sigmoid"):
            j += 1
            continue
        if nxt.kind == "batchnorm":
            plan.append(("bn", j))
            j += 1
            continue
        if nxt.kind == "conv" and nxt.hyper.get("groups", 1) == 1:
            plan.append(("conv", j))
            return plan
        if nxt.kind == "flatten":
            k = j + 1
            while k < len(g.layers) and g.layers[k].kind in ("dropout",):
                k += 1
            if k < len(g.layers) and g.layers[k].kind == "fc":
                plan.append(("fc", k, g.shapes[j][1] * g.shapes[j][2]))
                return plan
        raise StructureError(f"W2: cannot shrink channels through layer {j} ({nxt.kind})")
    raise StructureError(f"W2: layer {layer.index} output channels are the model output")


def apply_w2_filter_prune(g: ModelGraph, idx: int, fraction: float = 0.5) -> ModelGraph:
    """Remove the lowest-L1 ``fraction`` of filters and shrink downstream inputs."""
    _check_fraction(fraction, "W2 fraction")
    plan = _w2_plan(g, idx)
    out = g.copy()
    layer = out.layers[idx]
    cout = layer.hyper["cout"]
    drop = int(np.floor(fraction * cout))
    if cout - drop < 1:
        raise ConfigError("W2: pruning would remove every filter")
    w = out.params[f"{layer.name}.weight"]
    norms = np.abs(w.data).reshape(cout, -1).sum(axis=1)
    keep = np.sort(np.argsort(norms, kind="stable")[drop:])

    def take(key, axis, index, store):
        if key in store:
            if store is out.params:
                store[key].data = np.ascontiguousarray(np.take(store[key].data, index, axis=axis))
            else:
                store[key] = np.ascontiguousarray(np.take(store[key], index, axis=axis))

    for suffix in ("weight", "bias"):
        take(f"{layer.name}.{suffix}", 0, keep, out.params)
    take(f"{layer.name}.weight_mask", 0, keep, out.buffers)
    layer.hyper["cout"] = len(keep)
    for step in plan:
        nxt = out.layers[step[1]]
        if step[0] == "bn":
            for suffix in ("gamma", "beta"):
                take(f"{nxt.name}.{suffix}", 0, keep, out.params)
            for suffix in ("running_mean", "running_var"):
                take(f"{nxt.name}.{suffix}", 0, keep, out.buffers)
            nxt.hyper["channels"] = len(keep)
        elif step[0] == "conv":
            take(f"{nxt.name}.weight", 1, keep, out.params)
            take(f"{nxt.name}.weight_mask", 1, keep, out.buffers)
            nxt.hyper["cin"] = len(keep)
        else:
            hw = step[2]
            cols = (keep[:, None] * hw + np.arange(hw)[None, :]).reshape(-1)
            take(f"{nxt.name}.weight", 1, cols, out.params)
            take(f"{nxt.name}.weight_mask", 1, cols, out.buffers)
            nxt.hyper["cin"] = len(cols)
    out.validate()
    return out


# ---------------------------------------------------------------- strategy level

def _structurally_ok(g: ModelGraph, idx: int, tech: str) -> bool:
    layer = g.layers[idx]
    if layer.kind not in APPLIES_TO[tech]:
        return False
    h = layer.hyper
    try:
        if tech == "F3":
            _f3_span(g, idx)
        elif tech in ("C1", "C2", "C3", "W2") and h.get("groups", 1) != 1:
            return False
        elif tech == "C1" and h["k"] < 3:
            return False
        elif tech == "C3" and (h["cout"] % 2 or 2 * h.get("padding", 0) != h["k"] - 1):
            return False
        elif tech == "W2":
            if h["cout"] < 2:
                return False
            _w2_plan(g, idx)
    except StructureError:
        return False
    return True


def applicability_mask(g: ModelGraph, menu=TECHNIQUES) -> np.ndarray:
    """Boolean ``[num_layers, len(TECHNIQUES)]``; columns follow ``TECHNIQUES`` order."""
    mask = np.zeros((len(g.layers), len(TECHNIQUES)), dtype=bool)
    for i in range(len(g.layers)):
        for t, tech in enumerate(TECHNIQUES):
            mask[i, t] = tech in menu and _structurally_ok(g, i, tech)
    return mask


def rewrite(g: ModelGraph, idx: int, tech: str, knobs: CompressionKnobs = CompressionKnobs()) -> ModelGraph:
    rng = _rng(knobs, idx)
    if tech == "F1":
        return apply_f1_svd(g, idx, knobs.rank)
    if tech == "F2":
        return apply_f2_ksvd(g, idx, knobs.rank, knobs.sparsity)
    if tech == "F3":
        return apply_f3_gap(g, idx, rng)
    if tech == "C1":
        return apply_c1_depthwise(g, idx, rng)
    if tech == "C2":
        return apply_c2_inverted_residual(g, idx, knobs.expansion, rng)
    if tech == "C3":
        return apply_c3_fire(g, idx, knobs.squeeze_ratio, rng)
    if tech == "W1":
        return apply_w1_prune(g, idx, knobs.prune_fraction)
    if tech == "W2":
        return apply_w2_filter_prune(g, idx, knobs.prune_fraction)
    raise ConfigError(f"unknown technique {tech!r}")


def apply_strategy_with_report(g: ModelGraph, s: Strategy,
                               knobs: CompressionKnobs = CompressionKnobs()):
    check_against(s, g)
    out = g.copy()
    reports = []
    for base_idx, tech in s.compressions:
        cur = [layer.index for layer in out.layers
               if layer.origin == base_idx and layer.kind in APPLIES_TO[tech]]
        if not cur:
            raise StructureError(f"layer {base_idx} no longer exists after earlier rewrites")
        idx = cur[0]
        if not _structurally_ok(out, idx, tech):
            raise StructureError(f"{tech} is not applicable to layer {base_idx}")
        before = count_params(out)
        out = rewrite(out, idx, tech, knobs)
        reports.append(RewriteReport(tech, base_idx, before, count_params(out),
                                     [f"{len(out.layers)} layers"]))
    out.partition = _remap_partition(out.layers, s.partition)
    if out.crosses_link(out.partition):
        raise StructureError(f"partition {s.partition} cuts through a residual link")
    out.validate()
    return out, reports


def apply_strategy(g: ModelGraph, s: Strategy, knobs: CompressionKnobs = CompressionKnobs()) -> ModelGraph:
    """Apply compressions in ascending base index, then place the partition."""
    return apply_strategy_with_report(g, s, knobs)[0]


__all__ = [
    "CompressionKnobs", "RewriteReport", "applicability_mask", "apply_c1_depthwise",
    "apply_c2_inverted_residual", "apply_c3_fire", "apply_f1_svd", "apply_f2_ksvd",
    "apply_f3_gap", "apply_strategy", "apply_strategy_with_report", "apply_w1_prune",
    "apply_w2_filter_prune", "rewrite",
]
