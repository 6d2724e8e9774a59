"""Vision-Transformer encoder shared across the two timestamps.

One encoder instance processes both the pre- and post-fire image; weight
sharing is structural (the same parameter objects run both passes). Blocks
are pre-norm. Features for the downstream pyramid are the post-block token
sequences of four selected blocks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Rng, Tensor
from .errors import ConfigurationError, DimensionError
from .nn import LayerNorm, Linear, Module


def default_selected_layers(depth: int) -> tuple[int, int, int, int]:
    """Four block indices, evenly spaced and ending at the last block.

    depth 12 -> (2, 5, 8, 11); depth 4 -> (0, 1, 2, 3). For depth < 4 the
    indices repeat, which is legal: the neck simply reuses a feature map.
    """
    return tuple(-(-(i + 1) * depth // 4) - 1 for i in range(4))


@dataclass(frozen=True)
class ViTConfig:
    img_size: int = 128
    patch: int = 16
    in_chans: int = 3
    d_model: int = 768
    depth: int = 12
    heads: int = 12
    mlp_ratio: int = 4
    use_cls_token: bool = False
    selected_layers: tuple[int, ...] | None = None
    dtype: str = "float32"

    def __post_init__(self):
        if self.img_size < 1 or self.patch < 1 or self.img_size % self.patch:
            raise ConfigurationError(
                f"patch {self.patch} must divide img_size {self.img_size}")
        if self.d_model % self.heads:
            raise ConfigurationError(
                f"d_model {self.d_model} not divisible by heads {self.heads}")
        if self.depth < 1:
            raise ConfigurationError("depth must be >= 1")
        layers = self.selected_layers
        if layers is None:
            layers = default_selected_layers(self.depth)
        layers = tuple(int(i) for i in layers)
        if len(layers) != 4:
            raise ConfigurationError("selected_layers must list exactly 4 blocks")
        if any(i < 0 or i >= self.depth for i in layers):
            raise ConfigurationError(
                f"selected_layers {layers} out of range for depth {self.depth}")
        object.__setattr__(self, "selected_layers", layers)
        if self.dtype not in ("float32", "float64"):
            raise ConfigurationError(f"unsupported dtype {self.dtype!r}")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    @property
    def grid(self) -> int:
        return self.img_size // self.patch

    @property
    def num_patches(self) -> int:
        return self.grid * self.grid

    @property
    def num_tokens(self) -> int:
        return self.num_patches + (1 if self.use_cls_token else 0)


@dataclass
class TokenFeatures:
    """Token sequences recorded at the four selected blocks, in order."""

    layers: list[Tensor]
    indices: tuple[int, ...]
    has_cls: bool


class PatchEmbed(Module):
    def __init__(self, cfg: ViTConfig, rng: Rng):
        self.patch = cfg.patch
        d_in = cfg.in_chans * cfg.patch * cfg.patch
        self.proj = Linear(d_in, cfg.d_model, rng, dtype=cfg.np_dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.proj(ad.patch_flatten(x, self.patch))


class Attention(Module):
    """Multi-head self-attention with a fused qkv projection."""

    def __init__(self, d: int, heads: int, rng: Rng, dtype=np.float32):
        self.heads = heads
        self.head_dim = d // heads
        self.scale = 1.0 / np.sqrt(self.head_dim)
        self.qkv = Linear(d, 3 * d, rng, dtype=dtype)
        self.out = Linear(d, d, rng, dtype=dtype)

    def forward(self, t: Tensor) -> Tensor:
        n, d = t.shape
        qkv = self.qkv(t)  # [N, 3d]
        q = ad.narrow(qkv, 1, 0, d)
        k = ad.narrow(qkv, 1, d, d)
        v = ad.narrow(qkv, 1, 2 * d, d)

        def heads_first(x):
            return x.reshape(n, self.heads, self.head_dim).transpose(1, 0, 2)

        q, k, v = heads_first(q), heads_first(k), heads_first(v)
        scores = ad.mul(ad.matmul(q, k.transpose(0, 2, 1)), self.scale)
        attn = ad.softmax(scores, axis=-1)
        ctx = ad.matmul(attn, v)  # [heads, N, head_dim]
        ctx = ctx.transpose(1, 0, 2).reshape(n, d)
        return self.out(ctx)


class Mlp(Module):
    def __init__(self, d: int, hidden: int, rng: Rng, dtype=np.float32):
        self.fc1 = Linear(d, hidden, rng, dtype=dtype)
        self.fc2 = Linear(hidden, d, rng, dtype=dtype)

    def forward(self, t: Tensor) -> Tensor:
        return self.fc2(ad.gelu(self.fc1(t)))


class Block(Module):
    """Pre-norm transformer block: t + attn(ln(t)), then t + mlp(ln(t))."""

    def __init__(self, cfg: ViTConfig, rng: Rng):
        dt = cfg.np_dtype
        self.ln1 = LayerNorm(cfg.d_model, dtype=dt)
        self.attn = Attention(cfg.d_model, cfg.heads, rng, dtype=dt)
        self.ln2 = LayerNorm(cfg.d_model, dtype=dt)
        self.mlp = Mlp(cfg.d_model, cfg.mlp_ratio * cfg.d_model, rng, dtype=dt)

    def forward(self, t: Tensor) -> Tensor:
        t = ad.add(t, self.attn(self.ln1(t)))
        return ad.add(t, self.mlp(self.ln2(t)))


class VitEncoder(Module):
    def __init__(self, cfg: ViTConfig, rng: Rng):
        self.cfg = cfg
        dt = cfg.np_dtype
        self.patch_embed = PatchEmbed(cfg, rng)
        self.cls_token = (Parameter(rng.normal((1, cfg.d_model), 0.02, dt))
                          if cfg.use_cls_token else None)
        # sized exactly for img_size/patch; no resolution interpolation path
        self.pos_embed = Parameter(rng.normal((cfg.num_tokens, cfg.d_model), 0.02, dt))
        self.blocks = [Block(cfg, rng) for _ in range(cfg.depth)]

    def forward(self, x: Tensor) -> TokenFeatures:
        cfg = self.cfg
        if x.shape != (cfg.in_chans, cfg.img_size, cfg.img_size):
            raise DimensionError(
                f"encoder expects [{cfg.in_chans}, {cfg.img_size}, {cfg.img_size}], "
                f"got {x.shape}")
        t = self.patch_embed(x)
        if self.cls_token is not None:
            t = ad.concat([self.cls_token, t], axis=0)
        t = ad.add(t, self.pos_embed)
        wanted = cfg.selected_layers
        recorded: dict[int, Tensor] = {}
        for i, block in enumerate(self.blocks):
            t = block(t)
            if i in wanted:
                recorded[i] = t
        return TokenFeatures(layers=[recorded[i] for i in wanted],
                             indices=wanted, has_cls=cfg.use_cls_token)


def tokens_to_grid(tokens: Tensor, has_cls: bool = False) -> Tensor:
    """[N(+1), D] token sequence -> [D, h, w] feature grid, row-major.

    Drops the class token when present. N must be a perfect square; anything
    else is an error, never a silent truncation.
    """
    if tokens.ndim != 2:
        raise DimensionError("tokens_to_grid expects [N, D]")
    t = tokens
    if has_cls:
        if t.shape[0] < 2:
            raise DimensionError("cls drop leaves no spatial tokens")
        t = ad.narrow(t, 0, 1, t.shape[0] - 1)
    n, d = t.shape
    side = int(np.sqrt(n))
    if side * side != n:
        raise DimensionError(f"token count {n} is not a perfect square")
    return t.transpose(1, 0).reshape(d, side, side)
