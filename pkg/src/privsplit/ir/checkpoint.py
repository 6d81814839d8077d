"""Model checkpoints: a JSON manifest plus one tensor blob per array."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..engine import blob
from ..engine.tensor import Parameter
from ..errors import FormatError
from .graph import LayerSpec, ModelGraph

FORMAT = "privsplit-checkpoint"
VERSION = 1


def save_checkpoint(g: ModelGraph, path) -> Path:
    root = Path(path)
    (root / "tensors").mkdir(parents=True, exist_ok=True)
    manifest = {"format": FORMAT, "version": VERSION, "name": g.name, "dtype": g.dtype.name,
                **g.structure(), "params": {}, "buffers": {}}
    for store, kind in ((g.params, "params"), (g.buffers, "buffers")):
        for key in sorted(store):
            arr = store[key].data if isinstance(store[key], Parameter) else store[key]
            fname = f"tensors/{key}.tblb"
            blob.save(arr, root / fname)
            manifest[kind][key] = fname
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return root


def load_checkpoint(path) -> ModelGraph:
    root = Path(path)
    try:
        manifest = json.loads((root / "manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read checkpoint manifest in {root}: {exc}") from None
    if manifest.get("format") != FORMAT or manifest.get("version") != VERSION:
        raise FormatError(f"{root}: not a version-{VERSION} checkpoint")
    layers = [LayerSpec(d["index"], d["kind"], d["hyper"], d["name"], d["origin"])
              for d in manifest["layers"]]
    params = {k: Parameter(blob.load(root / f), k) for k, f in manifest["params"].items()}
    buffers = {k: blob.load(root / f) for k, f in manifest["buffers"].items()}
    return ModelGraph(layers, manifest["input_shape"], [tuple(x) for x in manifest["links"]],
                      params, buffers, manifest["partition"], manifest["name"],
                      np.dtype(manifest["dtype"]), allow_empty=True)
