"""Scalar training losses built from the differentiable ops."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError, DimensionError
from . import ops
from .tensor import Tensor


def cross_entropy(logits: Tensor, target) -> Tensor:
    """Mean negative log-likelihood of integer class targets."""
    target = np.asarray(target, dtype=np.int64)
    if logits.ndim != 2 or target.shape != (logits.shape[0],):
        raise DimensionError(f"cross_entropy: logits {logits.shape} vs target {target.shape}")
    onehot = ops.one_hot_rows(target, logits.shape[1]).astype(logits.dtype)
    logp = ops.log_softmax(logits)
    return ops.neg(ops.mean(ops.tsum(ops.mul(logp, Tensor(onehot)), axis=1)))


def mse(pred: Tensor, target) -> Tensor:
    target = target if isinstance(target, Tensor) else Tensor(np.asarray(target, dtype=pred.dtype))
    if pred.shape != target.shape:
        raise DimensionError(f"mse: shapes {pred.shape} and {target.shape} differ")
    diff = ops.sub(pred, target)
    return ops.mean(ops.mul(diff, diff))


def ssim_map(x: Tensor, y: Tensor, window: int = 7, c1: float = 1e-4, c2: float = 9e-4) -> Tensor:
    """Per-window SSIM values with a uniform window, no padding."""
    if x.shape != y.shape or x.ndim != 4:
        raise DimensionError(f"ssim: shapes {x.shape} and {y.shape} must match and be N,C,H,W")
    mu_x = ops.avg_pool2d(x, window, 1)
    mu_y = ops.avg_pool2d(y, window, 1)
    exx = ops.avg_pool2d(ops.mul(x, x), window, 1)
    eyy = ops.avg_pool2d(ops.mul(y, y), window, 1)
    exy = ops.avg_pool2d(ops.mul(x, y), window, 1)
    mxx, myy, mxy = ops.mul(mu_x, mu_x), ops.mul(mu_y, mu_y), ops.mul(mu_x, mu_y)
    var_x, var_y, cov = ops.sub(exx, mxx), ops.sub(eyy, myy), ops.sub(exy, mxy)
    num = ops.mul(ops.add(ops.mul(mxy, 2.0), c1), ops.add(ops.mul(cov, 2.0), c2))
    den = ops.mul(ops.add(ops.add(mxx, myy), c1), ops.add(ops.add(var_x, var_y), c2))
    return ops.div(num, den)


def neg_ssim(pred: Tensor, target, window: int = 7, c1: float = 1e-4, c2: float = 9e-4) -> Tensor:
    target = target if isinstance(target, Tensor) else Tensor(np.asarray(target, dtype=pred.dtype))
    return ops.neg(ops.mean(ssim_map(pred, target, window, c1, c2)))


def kl_soft(student_logits: Tensor, teacher_logits: np.ndarray, temperature: float) -> Tensor:
    """Batch-mean KL(softmax(teacher/T) || softmax(student/T))."""
    t = np.asarray(teacher_logits, dtype=np.float64) / temperature
    t = t - t.max(axis=1, keepdims=True)
    log_pt = t - np.log(np.exp(t).sum(axis=1, keepdims=True))
    pt = np.exp(log_pt)
    log_ps = ops.log_softmax(ops.mul(student_logits, 1.0 / temperature))
    dt = student_logits.dtype
    # KL = sum pt*log pt - sum pt*log ps; first term is constant
    const = float((pt * log_pt).sum(axis=1).mean())
    cross = ops.mean(ops.tsum(ops.mul(log_ps, Tensor(pt.astype(dt))), axis=1))
    return ops.add(ops.neg(cross), const)


def loss(pred: Tensor, target, kind: str) -> Tensor:
    if kind == "cross-entropy":
        return cross_entropy(pred, target)
    if kind == "mse":
        return mse(pred, target)
    if kind == "neg-ssim":
        return neg_ssim(pred, target)
    raise ConfigError(f"unknown loss kind {kind!r}")
