"""Procedural image dataset with a coarse task label and a hidden fine attribute.

The coarse class picks a shape layout (bar, diagonal, ring, ...); the fine
attribute picks a surface texture. ``rho`` couples the two: at 0 the fine
attribute is independent of the coarse class, at 1 it is ``coarse % fine``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from ..engine import blob
from ..errors import ConfigError, DataError, FormatError

SHAPES = ("hbar", "vbar", "diag", "antidiag", "ring", "cross", "disc", "corner")
TEXTURES = ("smooth", "checker", "stripes", "dots")


@dataclass(frozen=True)
class DatasetSpec:
    n: int = 4000
    height: int = 16
    width: int = 16
    coarse_classes: int = 4
    fine_classes: int = 2
    rho: float = 0.0
    seed: int = 0
    noise: float = 0.05
    split: tuple = (0.6, 0.2, 0.2)

    def validate(self) -> None:
        if self.n < 3:
            raise ConfigError("dataset needs at least 3 samples")
        if not 2 <= self.coarse_classes <= len(SHAPES):
            raise ConfigError(f"coarse_classes must be in 2..{len(SHAPES)}")
        if not 2 <= self.fine_classes <= len(TEXTURES):
            raise ConfigError(f"fine_classes must be in 2..{len(TEXTURES)}")
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigError(f"rho must be in [0, 1], got {self.rho}")
        if self.height < 8 or self.width < 8:
            raise ConfigError("images must be at least 8x8")
        if len(self.split) != 3 or abs(sum(self.split) - 1.0) > 1e-9 or min(self.split) <= 0:
            raise ConfigError("split must be three positive fractions summing to 1")


@dataclass
class SyntheticDataset:
    images: np.ndarray
    coarse_labels: np.ndarray
    fine_labels: np.ndarray
    train_idx: np.ndarray
    aux_idx: np.ndarray
    eval_idx: np.ndarray
    spec: DatasetSpec = field(default_factory=DatasetSpec)

    def __post_init__(self):
        check_disjoint(self.train_idx, self.aux_idx, self.eval_idx)

    def split(self, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        idx = {"train": self.train_idx, "aux": self.aux_idx, "eval": self.eval_idx}[name]
        return self.images[idx], self.coarse_labels[idx], self.fine_labels[idx]

    @property
    def classes(self) -> int:
        return self.spec.coarse_classes


def check_disjoint(*splits) -> None:
    seen = set()
    for s in splits:
        s = set(np.asarray(s).tolist())
        if seen & s:
            raise DataError("dataset splits overlap")
        seen |= s


def _shape_mask(kind: str, h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    cy = h / 2 - 0.5 + rng.integers(-2, 3)
    cx = w / 2 - 0.5 + rng.integers(-2, 3)
    t = rng.uniform(1.2, 2.2)
    r = min(h, w) * rng.uniform(0.25, 0.35)
    if kind == "hbar":
        return (np.abs(yy - cy) < t) & (np.abs(xx - cx) < 2 * r)
    if kind == "vbar":
        return (np.abs(xx - cx) < t) & (np.abs(yy - cy) < 2 * r)
    if kind == "diag":
        return np.abs((yy - cy) - (xx - cx)) < 1.4 * t
    if kind == "antidiag":
        return np.abs((yy - cy) + (xx - cx)) < 1.4 * t
    if kind == "ring":
        d = np.maximum(np.abs(yy - cy), np.abs(xx - cx))
        return np.abs(d - r) < 0.8 * t
    if kind == "cross":
        return ((np.abs(yy - cy) < t) | (np.abs(xx - cx) < t)) & (np.hypot(yy - cy, xx - cx) < 1.6 * r)
    if kind == "disc":
        return np.hypot(yy - cy, xx - cx) < r
    if kind == "corner":
        return ((np.abs(yy - cy - r) < t) & (xx > cx - r) & (xx < cx + r)) | \
               ((np.abs(xx - cx + r) < t) & (yy > cy - r) & (yy < cy + r))
    raise ConfigError(f"unknown shape {kind!r}")


def _texture(kind: str, h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    phase = rng.integers(0, 2)
    if kind == "smooth":
        return np.ones((h, w))
    if kind == "checker":
        return np.where((yy + xx + phase) % 2 == 0, 1.0, 0.25)
    if kind == "stripes":
        return np.where((yy + phase) % 2 == 0, 1.0, 0.25)
    if kind == "dots":
        return np.where(((yy + phase) % 3 == 0) & ((xx + phase) % 3 == 0), 1.0, 0.4)
    raise ConfigError(f"unknown texture {kind!r}")


def _balanced(count: int, classes: int, rng: np.random.Generator) -> np.ndarray:
    return rng.permutation(np.arange(count) % classes)


def generate_dataset(spec: DatasetSpec = DatasetSpec()) -> SyntheticDataset:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n, h, w = spec.n, spec.height, spec.width
    coarse = _balanced(n, spec.coarse_classes, rng)
    fine = np.empty(n, dtype=np.int64)
    coupled = np.zeros(n, dtype=bool)
    coupled[rng.permutation(n)[: int(round(spec.rho * n))]] = True
    fine[coupled] = coarse[coupled] % spec.fine_classes
    fine[~coupled] = _balanced(int((~coupled).sum()), spec.fine_classes, rng)
    images = np.empty((n, 1, h, w), dtype=np.float32)
    for i in range(n):
        shape = _shape_mask(SHAPES[coarse[i]], h, w, rng)
        tex = _texture(TEXTURES[fine[i]], h, w, rng)
        bg = rng.uniform(0.0, 0.25)
        fg = rng.uniform(0.7, 1.0)
        img = np.where(shape, fg * tex, bg) + rng.normal(0.0, spec.noise, (h, w))
        images[i, 0] = np.clip(img, 0.0, 1.0)
    order = rng.permutation(n)
    n_train = int(round(spec.split[0] * n))
    n_aux = int(round(spec.split[1] * n))
    return SyntheticDataset(images, coarse.astype(np.int64), fine, np.sort(order[:n_train]),
                            np.sort(order[n_train:n_train + n_aux]),
                            np.sort(order[n_train + n_aux:]), spec)


def batches(n: int, batch_size: int, rng: np.random.Generator | None = None) -> Iterator[np.ndarray]:
    """Index batches over ``range(n)``, shuffled when ``rng`` is given."""
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def save_dataset(ds: SyntheticDataset, path) -> Path:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    blob.save(ds.images, root / "images.tblb")
    meta = {"format": "privsplit-dataset", "version": 1, "spec": asdict(ds.spec),
            "coarse": ds.coarse_labels.tolist(), "fine": ds.fine_labels.tolist(),
            "train": ds.train_idx.tolist(), "aux": ds.aux_idx.tolist(), "eval": ds.eval_idx.tolist()}
    (root / "labels.json").write_text(json.dumps(meta))
    return root


def load_dataset(path) -> SyntheticDataset:
    root = Path(path)
    try:
        meta = json.loads((root / "labels.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read dataset labels in {root}: {exc}") from None
    if meta.get("format") != "privsplit-dataset":
        raise FormatError(f"{root} is not a dataset directory")
    spec_d = dict(meta["spec"])
    spec_d["split"] = tuple(spec_d["split"])
    return SyntheticDataset(blob.load(root / "images.tblb"), np.array(meta["coarse"], np.int64),
                            np.array(meta["fine"], np.int64), np.array(meta["train"], np.int64),
                            np.array(meta["aux"], np.int64), np.array(meta["eval"], np.int64),
                            DatasetSpec(**spec_d))
