"""Class-balanced cross-entropy over per-pixel logits."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, _accum, _result
from .errors import ConfigurationError, DataError, DimensionError


@dataclass(frozen=True)
class ClassWeights:
    """Per-class loss weights; burned is the positive class and defaults to
    3x the unburned weight."""

    w_burn: float = 3.0
    w_unburn: float = 1.0

    def __post_init__(self):
        if self.w_burn <= 0 or self.w_unburn <= 0:
            raise ConfigurationError("class weights must be positive")

    def as_array(self, dtype) -> np.ndarray:
        # index by class id: 0 = unburned, 1 = burned
        return np.array([self.w_unburn, self.w_burn], dtype=dtype)


def weighted_cross_entropy(logits: Tensor, target: np.ndarray,
                           weights: ClassWeights = ClassWeights(),
                           reduction: str = "mean") -> Tensor:
    """-(sum or mean) over pixels of w[y] * log softmax(logits)[y].

    ``logits`` is [2, ...spatial]; ``target`` is the same spatial shape with
    values in {0, 1}. Mean reduction divides by the pixel count (not the
    weight sum), which keeps the published learning rate meaningful across
    patch sizes.
    """
    if reduction not in ("mean", "sum"):
        raise ConfigurationError(f"unknown reduction {reduction!r}")
    if logits.ndim < 2 or logits.shape[0] != 2:
        raise DimensionError(f"logits must be [2, ...], got {logits.shape}")
    target = np.asarray(target)
    if target.shape != logits.shape[1:]:
        raise DimensionError(
            f"target shape {target.shape} != logits spatial shape {logits.shape[1:]}")
    uniq = np.unique(target)
    if not np.all(np.isin(uniq, (0, 1))):
        raise DataError(f"target values outside {{0,1}}: {uniq[:8]}")

    y = target.astype(np.int64)
    x = logits.data
    shifted = x - x.max(axis=0, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=0, keepdims=True))
    logp = shifted - logz  # [2, ...]
    w = weights.as_array(x.dtype)
    wy = w[y]  # per-pixel weight
    logp_true = np.take_along_axis(logp, y[None], axis=0)[0]
    n_pix = y.size
    denom = n_pix if reduction == "mean" else 1
    value = -(wy * logp_true).sum() / denom
    out = np.asarray(value, dtype=x.dtype)

    def bk(g):
        if not logits.requires_grad:
            return
        p = np.exp(logp)
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, y[None], 1.0, axis=0)
        gx = wy[None] * (p - onehot) * (float(g) / denom)
        _accum(logits, gx.astype(x.dtype))

    return _result(out, (logits,), bk)
