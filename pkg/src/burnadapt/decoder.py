"""Pyramidal neck, bi-temporal fusion, UPerNet-style decoding, and the
per-pixel classification head.

The neck turns four same-stride transformer grids into a 4-level pyramid at
strides {4, 8, 16, 32} relative to input pixels (for the default patch 16):
project each grid 1x1 to a common width, then 4x/2x learned upsampling for
the two finest levels, identity for the third, 2x average pooling for the
coarsest. Pre and post pyramids are fused per level by channel
concatenation, pre-stream channels first.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Rng, Tensor
from .errors import ConfigurationError, DimensionError
from .nn import Conv2d, ConvTranspose2x, Module


@dataclass(frozen=True)
class HeadConfig:
    c_neck: int = 128
    c_dec: int = 128
    ppm_grids: tuple[int, ...] = (1, 2, 3, 6)
    num_classes: int = 2

    def __post_init__(self):
        if self.c_neck < 1 or self.c_dec < 1:
            raise ConfigurationError("channel widths must be >= 1")
        if not self.ppm_grids:
            raise ConfigurationError("ppm_grids must be non-empty")
        object.__setattr__(self, "ppm_grids", tuple(self.ppm_grids))


class PyramidNeck(Module):
    """Project four [D, g, g] grids to c_neck and resample into strides
    {g/4 .. g*2} worth of spatial sizes: 4g, 2g, g, g/2."""

    def __init__(self, d_model: int, cfg: HeadConfig, rng: Rng, dtype=np.float32):
        c = cfg.c_neck
        self.proj = [Conv2d(d_model, c, 1, rng, dtype=dtype) for _ in range(4)]
        self.up4_a = ConvTranspose2x(c, c, rng, dtype=dtype)
        self.up4_b = ConvTranspose2x(c, c, rng, dtype=dtype)
        self.up2 = ConvTranspose2x(c, c, rng, dtype=dtype)

    def forward(self, grids: list[Tensor]) -> list[Tensor]:
        if len(grids) != 4:
            raise ConfigurationError(f"neck expects 4 feature grids, got {len(grids)}")
        p = [proj(g) for proj, g in zip(self.proj, grids)]
        level1 = self.up4_b(self.up4_a(p[0]))
        level2 = self.up2(p[1])
        level3 = p[2]
        level4 = ad.avg_pool2(p[3])
        return [level1, level2, level3, level4]


def fuse_bitemporal(pre: list[Tensor], post: list[Tensor]) -> list[Tensor]:
    """Channel-concatenate the two streams level-wise, pre first."""
    if len(pre) != len(post):
        raise DimensionError("pyramid level count mismatch")
    fused = []
    for a, b in zip(pre, post):
        if a.shape != b.shape:
            raise DimensionError(
                f"bi-temporal level shapes disagree: {a.shape} vs {b.shape}")
        fused.append(ad.concat([a, b], axis=0))
    return fused


class UperNetDecoder(Module):
    """Pyramid pooling on the coarsest level, top-down lateral fusion,
    3x3 smoothing, then resize-all-to-finest + 1x1 fuse."""

    def __init__(self, cfg: HeadConfig, rng: Rng, dtype=np.float32):
        c_in = 2 * cfg.c_neck  # fused bi-temporal width
        c = cfg.c_dec
        self.ppm_grids = cfg.ppm_grids
        self.ppm_proj = [Conv2d(c_in, c, 1, rng, dtype=dtype)
                         for _ in cfg.ppm_grids]
        ppm_cat = c_in + c * len(cfg.ppm_grids)
        self.ppm_fuse = Conv2d(ppm_cat, c, 3, rng, padding=1, pad_mode="edge",
                               dtype=dtype)
        self.lateral = [Conv2d(c_in, c, 1, rng, dtype=dtype) for _ in range(3)]
        self.smooth = [Conv2d(c, c, 3, rng, padding=1, pad_mode="edge", dtype=dtype)
                       for _ in range(4)]
        self.fuse = Conv2d(4 * c, c, 1, rng, dtype=dtype)

    def forward(self, fused: list[Tensor]) -> Tensor:
        if len(fused) != 4:
            raise DimensionError(f"decoder expects 4 fused levels, got {len(fused)}")
        z1, z2, z3, z4 = fused
        h4, w4 = z4.shape[-2], z4.shape[-1]

        branches = [z4]
        for grid, proj in zip(self.ppm_grids, self.ppm_proj):
            pooled = ad.adaptive_avg_pool2d(z4, grid, grid)
            branches.append(ad.bilinear_resize(proj(pooled), h4, w4))
        top = self.ppm_fuse(ad.concat(branches, axis=0))

        f4 = top
        f3 = ad.add(self.lateral[2](z3),
                    ad.bilinear_resize(f4, z3.shape[-2], z3.shape[-1]))
        f2 = ad.add(self.lateral[1](z2),
                    ad.bilinear_resize(f3, z2.shape[-2], z2.shape[-1]))
        f1 = ad.add(self.lateral[0](z1),
                    ad.bilinear_resize(f2, z1.shape[-2], z1.shape[-1]))

        levels = [s(f) for s, f in zip(self.smooth, (f1, f2, f3, f4))]
        h1, w1 = z1.shape[-2], z1.shape[-1]
        aligned = [levels[0]] + [ad.bilinear_resize(f, h1, w1) for f in levels[1:]]
        return self.fuse(ad.concat(aligned, axis=0))


class ClassifierHead(Module):
    """1x1 conv to class logits, bilinear upsample to the input size."""

    def __init__(self, cfg: HeadConfig, rng: Rng, dtype=np.float32):
        self.conv = Conv2d(cfg.c_dec, cfg.num_classes, 1, rng, dtype=dtype)

    def forward(self, dense: Tensor, out_h: int, out_w: int) -> Tensor:
        return ad.bilinear_resize(self.conv(dense), out_h, out_w)


def classify(head: ClassifierHead, dense: Tensor, out_h: int,
             out_w: int) -> tuple[Tensor, Tensor]:
    """Return (logits, per-pixel class probabilities)."""
    logits = head(dense, out_h, out_w)
    return logits, ad.softmax(logits, axis=0)
