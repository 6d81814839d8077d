"""Desk-scale model zoo on 1x16x16 inputs with 4 output classes."""

from __future__ import annotations

from typing import Optional, Union

import numpy as np

from ..errors import ConfigError
from .graph import ModelGraph, layers_from_descriptor

INPUT_SHAPE = (1, 16, 16)
CLASSES = 4


def _conv(cin, cout, k=3, stride=1, padding=1):
    return {"kind": "conv", "cin": cin, "cout": cout, "k": k, "stride": stride, "padding": padding}


def _fc(cin, cout):
    return {"kind": "fc", "cin": cin, "cout": cout}


RELU = {"kind": "relu"}
FLAT = {"kind": "flatten"}
POOL = {"kind": "pool", "mode": "max", "k": 2, "stride": 2}


def _bn(c):
    return {"kind": "batchnorm", "channels": c}


ZOO = {
    # 0 flatten, 1 fc, 2 relu, 3 fc
    "tiny-mlp": [FLAT, _fc(256, 32), RELU, _fc(32, CLASSES)],
    # 0 conv, 1 relu, 2 pool, 3 conv, 4 relu, 5 pool, 6 flatten, 7 fc, 8 relu, 9 fc
    "tiny-lenet": [_conv(1, 8), RELU, POOL, _conv(8, 16), RELU, POOL, FLAT,
                   _fc(256, 32), RELU, _fc(32, CLASSES)],
    # six conv+batchnorm blocks with a residual around conv7 and a single fc head
    "tiny-vgg": [
        _conv(1, 8), _bn(8), RELU, POOL,                                     # 0-3   -> 8x8x8
        _conv(8, 16), _bn(16), RELU,                                          # 4-6   -> 16x8x8
        _conv(16, 16), _bn(16), RELU, {"kind": "residual-add", "from": 7},    # 7-10
        POOL,                                                                 # 11    -> 16x4x4
        _conv(16, 32), _bn(32), RELU,                                         # 12-14 -> 32x4x4
        _conv(32, 32), _bn(32), RELU, POOL,                                   # 15-18 -> 32x2x2
        _conv(32, 32), _bn(32), RELU,                                         # 19-21
        FLAT, _fc(128, CLASSES),                                              # 22-23
    ],
}

# Hand-propagated shapes and hand counts. params = weights + biases (+4C per
# batchnorm: gamma, beta, running mean, running var); MACs = K*K*Cin*Cout*Ho*Wo
# per conv plus Cin*Cout per fc.
ZOO_MANIFEST = {
    "tiny-mlp": {
        "layers": 4,
        "classes": 4,
        "compressible": [1, 3],
        "params": (256 * 32 + 32) + (32 * 4 + 4),
        "macs": 256 * 32 + 32 * 4,
    },
    "tiny-lenet": {
        "layers": 10,
        "classes": 4,
        "compressible": [0, 3, 7, 9],
        "params": (9 * 1 * 8 + 8) + (9 * 8 * 16 + 16) + (256 * 32 + 32) + (32 * 4 + 4),
        "macs": 9 * 1 * 8 * 16 * 16 + 9 * 8 * 16 * 8 * 8 + 256 * 32 + 32 * 4,
    },
    "tiny-vgg": {
        "layers": 24,
        "classes": 4,
        "compressible": [0, 4, 7, 12, 15, 19, 23],
        "params": ((9 * 1 * 8 + 8) + 4 * 8
                   + (9 * 8 * 16 + 16) + 4 * 16
                   + (9 * 16 * 16 + 16) + 4 * 16
                   + (9 * 16 * 32 + 32) + 4 * 32
                   + (9 * 32 * 32 + 32) + 4 * 32
                   + (9 * 32 * 32 + 32) + 4 * 32
                   + (128 * 4 + 4)),
        "macs": (9 * 1 * 8 * 16 * 16
                 + 9 * 8 * 16 * 8 * 8
                 + 9 * 16 * 16 * 8 * 8
                 + 9 * 16 * 32 * 4 * 4
                 + 9 * 32 * 32 * 4 * 4
                 + 9 * 32 * 32 * 2 * 2
                 + 128 * 4),
    },
}


def build_model(arch: Union[str, list], rng: Optional[np.random.Generator] = None,
                input_shape=INPUT_SHAPE, dtype=np.float32, partition: Optional[int] = None,
                seed: int = 0) -> ModelGraph:
    """Build a zoo entry by name, or an inline descriptor list, with fresh weights."""
    if isinstance(arch, str):
        if arch not in ZOO:
            raise ConfigError(f"unknown zoo model {arch!r}; choose from {sorted(ZOO)}")
        items, name = ZOO[arch], arch
    else:
        items, name = list(arch), "custom"
    if not items:
        raise ConfigError("empty layer list")
    layers, links = layers_from_descriptor(items)
    g = ModelGraph(layers, input_shape, links, partition=partition, name=name, dtype=dtype)
    g.init_params(rng if rng is not None else np.random.default_rng(seed))
    return g
