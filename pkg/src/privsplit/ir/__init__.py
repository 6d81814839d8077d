"""Layer-graph model representation, cost model and strategy notation."""

from .checkpoint import load_checkpoint, save_checkpoint
from .cost import (compression_ratio, count_macs, count_params, layer_macs,
                   layer_param_count, partition_split, perf_indicators)
from .graph import COMPRESSIBLE, LayerSpec, ModelGraph, infer_shape
from .strategy import APPLIES_TO, TECHNIQUES, Strategy, strategy_codec
from .zoo import ZOO, ZOO_MANIFEST, build_model

__all__ = [
    "APPLIES_TO", "COMPRESSIBLE", "LayerSpec", "ModelGraph", "Strategy", "TECHNIQUES", "ZOO",
    "ZOO_MANIFEST", "build_model", "compression_ratio", "count_macs", "count_params",
    "infer_shape", "layer_macs", "layer_param_count", "load_checkpoint", "partition_split",
    "perf_indicators", "save_checkpoint", "strategy_codec",
]
