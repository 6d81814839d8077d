"""Parameter and MAC counting plus the indicators derived from those counts."""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..errors import ConfigError, DegenerateModelError
from .graph import LayerSpec, ModelGraph, param_shapes


def _span(g: ModelGraph, start: int, stop: Optional[int]):
    stop = len(g.layers) if stop is None else stop
    return g.layers[start:stop]


def layer_param_count(g: ModelGraph, layer: LayerSpec) -> int:
    total = 0
    for suffix, shape in param_shapes(layer).items():
        key = f"{layer.name}.{suffix}"
        mask = g.buffers.get(f"{key}_mask")
        total += int(np.count_nonzero(mask)) if mask is not None else int(np.prod(shape))
    if layer.kind == "batchnorm":
        total += 2 * layer.hyper["channels"]  # running mean and variance ship with the layer
    return total


def layer_macs(g: ModelGraph, layer: LayerSpec) -> int:
    h = layer.hyper
    out = g.shapes[layer.index + 1]
    if layer.kind == "conv":
        return h["k"] * h["k"] * (h["cin"] // h.get("groups", 1)) * h["cout"] * out[1] * out[2]
    if layer.kind == "fire-expand":
        half = h["cout"] // 2
        return (1 * 1 + 3 * 3) * h["cin"] * half * out[1] * out[2]
    if layer.kind == "fc":
        return h["cin"] * h["cout"]
    return 0


def count_params(g: ModelGraph, start: int = 0, stop: Optional[int] = None) -> int:
    return sum(layer_param_count(g, layer) for layer in _span(g, start, stop))


def count_macs(g: ModelGraph, start: int = 0, stop: Optional[int] = None) -> int:
    return sum(layer_macs(g, layer) for layer in _span(g, start, stop))


def perf_indicators(g: ModelGraph) -> tuple[float, float]:
    """(S1, S2): fraction of parameters and of MACs placed after the partition."""
    total_p, total_m = count_params(g), count_macs(g)
    if total_p == 0 or total_m == 0:
        raise DegenerateModelError(f"{g.name}: zero parameters or MACs")
    s1 = 1.0 - count_params(g, 0, g.partition) / total_p
    s2 = 1.0 - count_macs(g, 0, g.partition) / total_m
    return s1, s2


def compression_ratio(base: ModelGraph, compressed: ModelGraph) -> float:
    base_p = count_params(base)
    if base_p == 0:
        raise DegenerateModelError(f"{base.name}: zero parameters")
    return 1.0 - count_params(compressed) / base_p


def partition_split(g: ModelGraph) -> tuple[ModelGraph, ModelGraph]:
    """Encoder (layers before the partition) and cloud stub (the rest).

    Both halves share the original parameter objects, so training either one
    trains ``g``.
    """
    if g.crosses_link(g.partition):
        raise ConfigError(f"partition {g.partition} cuts through a residual link")
    enc = g.subgraph(0, g.partition, f"{g.name}.encoder")
    cloud = g.subgraph(g.partition, len(g.layers), f"{g.name}.cloud")
    return enc, cloud
