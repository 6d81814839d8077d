"""Task and privacy metrics plus the multiplicative reward that combines them."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, fields
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DataError, DimensionError, UsageError


@dataclass(frozen=True)
class SsimParams:
    window: int = 7
    c1: float = 1e-4   # (0.01 * L)^2
    c2: float = 9e-4   # (0.03 * L)^2
    dynamic_range: float = 1.0

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise ConfigError(f"SSIM window must be odd and >= 3, got {self.window}")
        if self.c1 <= 0 or self.c2 <= 0:
            raise ConfigError("SSIM stability constants must be positive")

    @classmethod
    def for_range(cls, dynamic_range: float, window: int = 7) -> "SsimParams":
        return cls(window, (0.01 * dynamic_range) ** 2, (0.03 * dynamic_range) ** 2, dynamic_range)


def accuracy(pred_labels, true_labels) -> float:
    pred, true = np.asarray(pred_labels), np.asarray(true_labels)
    if pred.size == 0:
        raise UsageError("accuracy of an empty prediction set")
    if pred.shape != true.shape:
        raise DimensionError(f"accuracy: {pred.shape} predictions vs {true.shape} labels")
    return 1.0 - np.count_nonzero(pred != true) / pred.size


def ssim_raw(x, y, p: SsimParams = SsimParams()) -> float:
    """Mean SSIM over all valid uniform windows and channels (may be negative).

    ``x`` and ``y`` are C,H,W or H,W arrays.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DimensionError(f"ssim: shapes {x.shape} and {y.shape} differ")
    if x.ndim == 2:
        x, y = x[None], y[None]
    w = p.window
    if x.shape[-1] < w or x.shape[-2] < w:
        raise DimensionError(f"ssim: image {x.shape[-2:]} smaller than window {w}")

    def local_mean(a):
        return sliding_window_view(a, (w, w), axis=(-2, -1)).mean(axis=(-2, -1))

    mx, my = local_mean(x), local_mean(y)
    vx = local_mean(x * x) - mx * mx
    vy = local_mean(y * y) - my * my
    cov = local_mean(x * y) - mx * my
    num = (2 * mx * my + p.c1) * (2 * cov + p.c2)
    den = (mx * mx + my * my + p.c1) * (vx + vy + p.c2)
    return float((num / den).mean())


def ssim(x, y, p: SsimParams = SsimParams()) -> float:
    """SSIM clamped to [0, 1]."""
    return min(1.0, max(0.0, ssim_raw(x, y, p)))


def mean_ssim(originals: np.ndarray, recons: np.ndarray, p: SsimParams = SsimParams()) -> float:
    """Average of per-image clamped SSIM over a batch."""
    if originals.shape != recons.shape:
        raise DimensionError(f"mean_ssim: shapes {originals.shape} and {recons.shape} differ")
    if len(originals) == 0:
        raise DataError("mean_ssim of an empty batch")
    return float(np.mean([ssim(a, b, p) for a, b in zip(originals, recons)]))


def l2_errors(originals: np.ndarray, recons: np.ndarray) -> np.ndarray:
    diff = (np.asarray(recons, np.float64) - np.asarray(originals, np.float64)).reshape(len(originals), -1)
    return np.sqrt((diff * diff).sum(axis=1))


def privacy_p0(recon_err: float, normalizer: float) -> float:
    """1 - err/normalizer, clamped to [0, 1]."""
    if normalizer <= 0:
        raise DataError("P0 normalizer must be positive (aux images are all identical?)")
    if recon_err < 0:
        raise UsageError("reconstruction error cannot be negative")
    return min(1.0, max(0.0, 1.0 - recon_err / normalizer))


def blind_normalizer(aux_images: np.ndarray, eval_images: np.ndarray) -> float:
    """Expected L2 error of always predicting the aux-set mean image."""
    mean_img = np.asarray(aux_images, np.float64).mean(axis=0)
    return float(l2_errors(eval_images, np.broadcast_to(mean_img, eval_images.shape)).mean())


def privacy_p1(reconstruct: Callable[[np.ndarray], np.ndarray], images: np.ndarray,
               p: SsimParams = SsimParams()) -> float:
    """Mean clamped SSIM between ``images`` and ``reconstruct(images)``."""
    if len(images) == 0:
        raise DataError("P1 needs a nonempty image set")
    return mean_ssim(images, np.asarray(reconstruct(images)), p)


def privacy_p2(predict: Callable[[np.ndarray], np.ndarray], images: np.ndarray, hidden_labels) -> float:
    """Fraction of hidden attributes predicted correctly."""
    hidden = np.asarray(hidden_labels)
    if hidden.size == 0:
        raise DataError("P2 needs hidden-attribute labels")
    if np.unique(hidden).size < 2:
        raise DataError("P2 hidden attribute has a single class; inference is uninformative")
    return accuracy(np.asarray(predict(images)), hidden)


@dataclass
class MetricsReport:
    A: float
    A_base: float
    P: float
    S: float
    CR: float = 0.0
    P_variant: str = "p1"
    S_variant: str = "s1"
    R_A: float = 0.0
    R_P: float = 0.0
    R_S: float = 0.0
    R: float = 0.0
    strategy: str = ""
    run_id: str = ""
    episode: int = -1
    wall_seconds: float = 0.0
    method: str = "rl"
    seed: int = 0
    noise: float = 0.0

    def __post_init__(self):
        if not (self.R_A or self.R_P or self.R_S or self.R):
            self.R_A, self.R_P, self.R_S, self.R = reward_terms(self.A, self.A_base, self.P, self.S)

    def row(self) -> dict:
        d = asdict(self)
        return {k: d[k] for k in CSV_FIELDS}


CSV_FIELDS = ["run_id", "episode", "strategy", "A", "A_base", "P_variant", "P", "S_variant", "S",
              "CR", "R_A", "R_P", "R_S", "R", "wall_seconds", "method", "seed", "noise"]
TIMING_FIELDS = ("wall_seconds",)


def reward_terms(A: float, A_base: float, P: float, S: float) -> tuple[float, float, float, float]:
    if A_base <= 0:
        raise ConfigError("baseline accuracy must be positive")
    r_a = A / A_base
    r_p = 1.0 - P
    r_s = S * (2.0 - S)
    return r_a, r_p, r_s, r_a * r_p * r_s


def reward(A: float, A_base: float, P: float, S: float, **extra) -> MetricsReport:
    """(A/A_base) * (1 - P) * S(2 - S), with its factors, as a report."""
    if not (0.0 <= P <= 1.0 and 0.0 <= S <= 1.0):
        raise ConfigError(f"P and S must lie in [0, 1], got P={P}, S={S}")
    r_a, r_p, r_s, r = reward_terms(A, A_base, P, S)
    return MetricsReport(A=A, A_base=A_base, P=P, S=S, R_A=r_a, R_P=r_p, R_S=r_s, R=r, **extra)


def write_csv(reports, fh, header: bool = True) -> None:
    writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS, lineterminator="\n")
    if header:
        writer.writeheader()
    for rep in reports:
        writer.writerow(rep.row())


def read_csv(fh) -> list:
    out = []
    types = {f.name: f.type for f in fields(MetricsReport)}
    for row in csv.DictReader(fh):
        kw = {}
        for k, v in row.items():
            t = types.get(k)
            kw[k] = float(v) if t == "float" else int(v) if t == "int" else v
        out.append(MetricsReport(**kw))
    return out


def reports_to_csv_text(reports) -> str:
    buf = io.StringIO()
    write_csv(reports, buf)
    return buf.getvalue()


__all__ = [
    "CSV_FIELDS", "MetricsReport", "SsimParams", "accuracy", "blind_normalizer", "l2_errors",
    "mean_ssim", "privacy_p0", "privacy_p1", "privacy_p2", "read_csv", "reward", "reward_terms",
    "ssim", "ssim_raw", "write_csv",
]
