"""Flat layer-graph representation of a DNN with a device/cloud partition point.

Every op (conv, relu, pool, ...) gets its own flat index, so compressible
layers sit at sparse positions such as ``0, 3, 7``. A residual link
``(src, dst)`` makes the ``residual-add`` layer at ``dst`` add the activation
that entered layer ``src``.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from ..engine import ops
from ..engine.tensor import Parameter, Tensor
from ..errors import ConfigError, DimensionError

COMPRESSIBLE = ("conv", "fc")
INPLACE = ("relu", "batchnorm", "dropout")
BASE_KINDS = ("conv", "fc", "relu", "pool", "batchnorm", "dropout", "flatten", "residual-add")
# produced by compression rewrites and inverse decoders
EXTRA_KINDS = ("fire-expand", "convT", "upsample", "unflatten", "sigmoid")
KINDS = BASE_KINDS + EXTRA_KINDS


@dataclass
class LayerSpec:
    index: int
    kind: str
    hyper: dict = field(default_factory=dict)
    name: str = ""
    origin: Optional[int] = None
    attached_inplace: list = field(default_factory=list)

    @property
    def compressible(self) -> bool:
        return self.kind in COMPRESSIBLE

    def to_dict(self) -> dict:
        return {"index": self.index, "kind": self.kind, "name": self.name,
                "origin": self.origin, "hyper": dict(self.hyper)}


def infer_shape(layer: LayerSpec, shape: tuple) -> tuple:
    """Per-sample output shape of ``layer`` given its per-sample input shape."""
    k, h = layer.kind, layer.hyper
    where = f"layer {layer.index} ({k})"
    if k in ("conv", "fire-expand", "convT", "pool", "upsample") and len(shape) != 3:
        raise DimensionError(f"{where}: expects C,H,W input, got {shape}")
    if k == "conv":
        c, hh, ww = shape
        if c != h["cin"]:
            raise DimensionError(f"{where}: input channels {c} != cin {h['cin']}")
        groups = h.get("groups", 1)
        if h["cin"] % groups or h["cout"] % groups:
            raise ConfigError(f"{where}: groups {groups} must divide cin and cout")
        kk, s, p = h["k"], h.get("stride", 1), h.get("padding", 0)
        if kk > hh + 2 * p or kk > ww + 2 * p:
            raise DimensionError(f"{where}: kernel {kk} exceeds padded input {hh}x{ww}")
        return (h["cout"], ops.conv_output_size(hh, kk, s, p), ops.conv_output_size(ww, kk, s, p))
    if k == "fire-expand":
        c, hh, ww = shape
        if c != h["cin"]:
            raise DimensionError(f"{where}: input channels {c} != cin {h['cin']}")
        return (h["cout"], hh, ww)
    if k == "convT":
        c, hh, ww = shape
        if c != h["cin"]:
            raise DimensionError(f"{where}: input channels {c} != cin {h['cin']}")
        kk, s, p, op = h["k"], h.get("stride", 1), h.get("padding", 0), h.get("output_padding", 0)
        return (h["cout"], (hh - 1) * s - 2 * p + kk + op, (ww - 1) * s - 2 * p + kk + op)
    if k == "fc":
        if len(shape) != 1 or shape[0] != h["cin"]:
            raise DimensionError(f"{where}: input {shape} does not match cin {h['cin']}")
        return (h["cout"],)
    if k in ("relu", "dropout", "sigmoid", "residual-add"):
        return shape
    if k == "batchnorm":
        if shape[0] != h["channels"]:
            raise DimensionError(f"{where}: {shape[0]} channels vs batchnorm {h['channels']}")
        return shape
    if k == "pool":
        c, hh, ww = shape
        if h["mode"] == "global-avg":
            return (c, 1, 1)
        kk, s = h["k"], h.get("stride", h["k"])
        if kk > hh or kk > ww:
            raise DimensionError(f"{where}: pool window {kk} exceeds input {hh}x{ww}")
        return (c, ops.conv_output_size(hh, kk, s, 0), ops.conv_output_size(ww, kk, s, 0))
    if k == "flatten":
        return (int(np.prod(shape)),)
    if k == "unflatten":
        target = tuple(h["shape"])
        if int(np.prod(target)) != int(np.prod(shape)):
            raise DimensionError(f"{where}: cannot unflatten {shape} to {target}")
        return target
    if k == "upsample":
        return (shape[0], h["out_h"], h["out_w"])
    raise ConfigError(f"{where}: unknown layer kind")


def param_shapes(layer: LayerSpec) -> dict:
    """Trainable tensors a layer owns, keyed by suffix."""
    k, h = layer.kind, layer.hyper
    if k == "conv":
        out = {"weight": (h["cout"], h["cin"] // h.get("groups", 1), h["k"], h["k"])}
        if h.get("bias", True):
            out["bias"] = (h["cout"],)
        return out
    if k == "fire-expand":
        half = h["cout"] // 2
        return {"weight1": (half, h["cin"], 1, 1), "weight3": (half, h["cin"], 3, 3)}
    if k == "convT":
        out = {"weight": (h["cin"], h["cout"], h["k"], h["k"])}
        if h.get("bias", True):
            out["bias"] = (h["cout"],)
        return out
    if k == "fc":
        out = {"weight": (h["cout"], h["cin"])}
        if h.get("bias", True):
            out["bias"] = (h["cout"],)
        return out
    if k == "batchnorm":
        return {"gamma": (h["channels"],), "beta": (h["channels"],)}
    return {}


def _fan_in(shape: tuple) -> int:
    return int(np.prod(shape[1:])) if len(shape) > 1 else int(shape[0])


class ModelGraph:
    """Ordered layers with residual links; owns the parameters and the partition point."""

    def __init__(self, layers: list, input_shape: Iterable[int], links=(), params=None,
                 buffers=None, partition: Optional[int] = None, name: str = "model",
                 dtype=np.float32, allow_empty: bool = False):
        self.layers: list[LayerSpec] = list(layers)
        self.input_shape = tuple(int(d) for d in input_shape)
        self.links: list[tuple[int, int]] = [tuple(link) for link in links]
        self.params: dict[str, Parameter] = dict(params or {})
        self.buffers: dict[str, np.ndarray] = dict(buffers or {})
        self.name = name
        self.dtype = np.dtype(dtype)
        self.partition = len(self.layers) if partition is None else int(partition)
        self.allow_empty = allow_empty
        self.shapes: list[tuple] = []
        self.validate()

    # ------------------------------------------------------------ structure

    def __len__(self) -> int:
        return len(self.layers)

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def output_shape(self) -> tuple:
        return self.shapes[-1]

    def validate(self) -> None:
        if not self.layers and not self.allow_empty:
            raise ConfigError("model has no layers")
        for i, layer in enumerate(self.layers):
            layer.index = i
            if layer.kind not in KINDS:
                raise ConfigError(f"layer {i}: unknown kind {layer.kind!r}")
            if not layer.name:
                layer.name = f"l{i}"
        names = [layer.name for layer in self.layers]
        if len(set(names)) != len(names):
            raise ConfigError("layer names must be unique")
        shapes = [self.input_shape]
        for layer in self.layers:
            shapes.append(infer_shape(layer, shapes[-1]))
        self.shapes = shapes
        adds = {i for i, layer in enumerate(self.layers) if layer.kind == "residual-add"}
        dsts = set()
        for src, dst in self.links:
            if not 0 <= src < dst < len(self.layers) or dst not in adds:
                raise ConfigError(f"residual link ({src}, {dst}) must end on a later residual-add layer")
            if shapes[src] != shapes[dst]:
                raise DimensionError(f"residual link ({src}, {dst}): shapes {shapes[src]} vs {shapes[dst]}")
            dsts.add(dst)
        if dsts != adds:
            raise ConfigError("every residual-add layer needs exactly one incoming link")
        if not 0 <= self.partition <= len(self.layers):
            raise ConfigError(f"partition {self.partition} outside 0..{len(self.layers)}")
        self._attach_inplace()

    def _attach_inplace(self) -> None:
        comp = self.compressible_indices()
        for layer in self.layers:
            layer.attached_inplace = []
        for n, c in enumerate(comp):
            end = comp[n + 1] if n + 1 < len(comp) else len(self.layers)
            self.layers[c].attached_inplace = [
                self.layers[j].kind for j in range(c + 1, end) if self.layers[j].kind in INPLACE]

    def compressible_indices(self) -> list:
        return [layer.index for layer in self.layers if layer.compressible]

    def unit_boundaries(self) -> list:
        """Partition positions between controller units (one unit per compressible
        layer with its trailing non-compressible ops); first entry is 0."""
        comp = self.compressible_indices()
        return [0] + comp[1:] + [len(self.layers)] if comp else [0, len(self.layers)]

    def crosses_link(self, p: int) -> bool:
        return any(src < p <= dst for src, dst in self.links)

    def valid_partition(self, p: int) -> bool:
        return 0 <= p <= len(self.layers) and not self.crosses_link(p)

    def layer_params(self, layer: LayerSpec) -> list:
        return [self.params[f"{layer.name}.{s}"] for s in param_shapes(layer)
                if f"{layer.name}.{s}" in self.params]

    def parameters(self, start: int = 0, stop: Optional[int] = None) -> list:
        stop = len(self.layers) if stop is None else stop
        out = []
        for layer in self.layers[start:stop]:
            out.extend(self.layer_params(layer))
        return out

    def init_params(self, rng: np.random.Generator, layers: Optional[Iterable[LayerSpec]] = None) -> None:
        """Create missing parameters (He-style uniform weights, zero biases)."""
        for layer in (self.layers if layers is None else layers):
            for suffix, shape in param_shapes(layer).items():
                key = f"{layer.name}.{suffix}"
                if key in self.params:
                    continue
                if suffix == "gamma":
                    data = np.ones(shape)
                elif suffix in ("beta", "bias"):
                    data = np.zeros(shape)
                else:
                    fan = _fan_in(shape) if layer.kind != "convT" else shape[0] * shape[2] * shape[3]
                    bound = np.sqrt(6.0 / fan)
                    data = rng.uniform(-bound, bound, size=shape)
                self.params[key] = Parameter(data.astype(self.dtype), key)
            if layer.kind == "batchnorm":
                c = layer.hyper["channels"]
                self.buffers.setdefault(f"{layer.name}.running_mean", np.zeros(c, dtype=self.dtype))
                self.buffers.setdefault(f"{layer.name}.running_var", np.ones(c, dtype=self.dtype))

    def drop_layer_state(self, layer: LayerSpec) -> None:
        prefix = f"{layer.name}."
        for store in (self.params, self.buffers):
            for key in [k for k in store if k.startswith(prefix)]:
                del store[key]

    def copy(self) -> "ModelGraph":
        """Deep copy with fresh parameter objects (architecture and values equal)."""
        params = {k: Parameter(p.data.copy(), k) for k, p in self.params.items()}
        buffers = {k: v.copy() for k, v in self.buffers.items()}
        return ModelGraph([copy.deepcopy(layer) for layer in self.layers], self.input_shape,
                          list(self.links), params, buffers, self.partition, self.name,
                          self.dtype, self.allow_empty)

    def subgraph(self, start: int, stop: int, name: str) -> "ModelGraph":
        """Layers ``[start, stop)`` sharing this graph's parameter objects."""
        layers = [copy.deepcopy(layer) for layer in self.layers[start:stop]]
        links = [(s - start, d - start) for s, d in self.links if start <= s and d < stop]
        sub_layers = {layer.name for layer in layers}
        params = {k: p for k, p in self.params.items() if k.split(".")[0] in sub_layers}
        buffers = {k: b for k, b in self.buffers.items() if k.split(".")[0] in sub_layers}
        return ModelGraph(layers, self.shapes[start], links, params, buffers, len(layers),
                          name, self.dtype, allow_empty=True)

    def structure(self) -> dict:
        return {"input_shape": list(self.input_shape), "partition": self.partition,
                "links": [list(link) for link in self.links],
                "layers": [layer.to_dict() for layer in self.layers]}

    # ------------------------------------------------------------ execution

    def forward(self, x, train: bool = False, rng: Optional[np.random.Generator] = None) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        if tuple(x.shape[1:]) != self.input_shape:
            raise DimensionError(f"{self.name}: input {x.shape[1:]} != expected {self.input_shape}")
        sources = {src for src, _ in self.links}
        skip_from = {dst: src for src, dst in self.links}
        saved = {}
        h = x
        for layer in self.layers:
            if layer.index in sources:
                saved[layer.index] = h
            if layer.kind == "residual-add":
                h = ops.add(h, saved[skip_from[layer.index]])
            else:
                h = self._apply(layer, h, train, rng)
        return h

    __call__ = forward

    def _weight(self, layer: LayerSpec, suffix: str) -> Tensor:
        key = f"{layer.name}.{suffix}"
        w = self.params[key]
        mask = self.buffers.get(f"{key}_mask")
        return w if mask is None else ops.mul(w, Tensor(mask))

    def _apply(self, layer: LayerSpec, h: Tensor, train: bool, rng) -> Tensor:
        k, hp, name = layer.kind, layer.hyper, layer.name
        if k == "conv":
            return ops.conv2d(h, self._weight(layer, "weight"), self.params.get(f"{name}.bias"),
                              hp.get("stride", 1), hp.get("padding", 0), hp.get("groups", 1))
        if k == "fc":
            return ops.linear(h, self._weight(layer, "weight"), self.params.get(f"{name}.bias"))
        if k == "relu":
            return ops.relu(h)
        if k == "sigmoid":
            return ops.sigmoid(h)
        if k == "pool":
            return ops.pool2d(h, hp["mode"], hp.get("k", 2), hp.get("stride"))
        if k == "batchnorm":
            return ops.batch_norm(h, self.params[f"{name}.gamma"], self.params[f"{name}.beta"],
                                  self.buffers[f"{name}.running_mean"],
                                  self.buffers[f"{name}.running_var"], train)
        if k == "dropout":
            return ops.dropout(h, hp["rate"], train, rng)
        if k == "flatten":
            return ops.reshape(h, (h.shape[0], -1))
        if k == "unflatten":
            return ops.reshape(h, (h.shape[0],) + tuple(hp["shape"]))
        if k == "upsample":
            return ops.upsample_nearest(h, (hp["out_h"], hp["out_w"]))
        if k == "fire-expand":
            a = ops.conv2d(h, self._weight(layer, "weight1"))
            b = ops.conv2d(h, self._weight(layer, "weight3"), padding=1)
            return ops.concat([a, b], axis=1)
        if k == "convT":
            return ops.conv_transpose2d(h, self._weight(layer, "weight"),
                                        self.params.get(f"{name}.bias"), hp.get("stride", 1),
                                        hp.get("padding", 0), hp.get("output_padding", 0))
        raise ConfigError(f"cannot execute layer kind {k!r}")


def layers_from_descriptor(items: list) -> tuple[list, list]:
    """Turn ``[{"kind": "conv", "cin": 1, ...}, ...]`` into layers and links.

    A ``residual-add`` item carries ``"from": src`` naming the layer whose
    input activation it adds.
    """
    layers, links = [], []
    for i, item in enumerate(items):
        item = dict(item)
        kind = item.pop("kind", None)
        if kind not in BASE_KINDS:
            raise ConfigError(f"descriptor entry {i}: unknown kind {kind!r}")
        if kind == "residual-add":
            if "from" not in item:
                raise ConfigError(f"descriptor entry {i}: residual-add needs 'from'")
            links.append((int(item.pop("from")), i))
        name = item.pop("name", f"l{i}")
        layers.append(LayerSpec(i, kind, item, name, origin=i))
    return layers, links
