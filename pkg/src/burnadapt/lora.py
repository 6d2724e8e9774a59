"""Low-rank adapters on frozen linear maps.

An adapter augments a base weight W [d_out, d_in] with a trainable pair
A [r, d_in], B [d_out, r] so the layer computes y = Wx + alpha * B(Ax).
B starts at zero, so an adapted layer is exactly the base layer at
initialization; merging materializes W + alpha * B @ A.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Rng, Tensor
from .errors import ConfigurationError
from .nn import Linear, Module

# projection roles an adapter can target inside the encoder
LORA_TARGETS = ("qkv_fused", "attn_out", "mlp_fc1", "mlp_fc2", "patch_embed_1x1")


@dataclass(frozen=True)
class LoraSpec:
    """Rank, scaling, and the set of projection roles to adapt.

    ``patch_embed_1x1`` adapts the patch projection; it is off by default
    and excluded from the attention/MLP parameter accounting.
    """

    rank: int = 8
    alpha: float = 1.0
    targets: tuple[str, ...] = ("qkv_fused", "attn_out")

    def __post_init__(self):
        if self.rank < 1:
            raise ConfigurationError(f"LoRA rank must be >= 1, got {self.rank}")
        if self.alpha < 0:
            raise ConfigurationError("LoRA alpha must be non-negative")
        if not self.targets:
            raise ConfigurationError("LoRA target set must be non-empty")
        object.__setattr__(self, "targets", tuple(self.targets))
        unknown = set(self.targets) - set(LORA_TARGETS)
        if unknown:
            raise ConfigurationError(
                f"unknown LoRA targets {sorted(unknown)}; known: {list(LORA_TARGETS)}")


class LoraAdapter(Module):
    """The trainable (A, B) pair attached to one frozen base projection."""

    def __init__(self, d_in: int, d_out: int, rank: int, alpha: float,
                 rng: Rng, dtype=np.float32):
        if rank >= min(d_in, d_out):
            warnings.warn(
                f"LoRA rank {rank} >= min(d_in={d_in}, d_out={d_out}); "
                "the update is no longer low-rank", stacklevel=2)
        bound = 1.0 / np.sqrt(d_in)
        self.A = Parameter(rng.uniform(-bound, bound, (rank, d_in), dtype))
        self.B = Parameter(np.zeros((d_out, rank), dtype))
        self.alpha = float(alpha)
        self.rank = rank
        self.d_in = d_in
        self.d_out = d_out

    def delta(self, x: Tensor) -> Tensor:
        """alpha * B(Ax) for x [..., d_in]."""
        return ad.mul(ad.matmul(ad.matmul(x, self.A.T), self.B.T), self.alpha)

    def num_params(self) -> int:
        return self.A.size + self.B.size


def attach(layer: Linear, spec: LoraSpec, rng: Rng, dtype=np.float32) -> LoraAdapter:
    """Attach a fresh adapter to a linear layer and return it.

    The base weight is left untouched; freezing it is the trainability
    policy's job (see model.set_trainability), so attachment alone never
    changes forward outputs or flags.
    """
    adapter = LoraAdapter(layer.d_in, layer.d_out, spec.rank, spec.alpha, rng,
                          dtype=dtype)
    layer.lora = adapter
    return adapter


def forward_adapted(layer: Linear, x: Tensor) -> Tensor:
    """y = Wx + alpha * B(Ax); identical to layer(x) once attached."""
    return layer.forward(x)


def merge_dense(layer: Linear) -> np.ndarray:
    """Materialize W + alpha * B @ A (or plain W when no adapter)."""
    w = layer.weight.data
    if layer.lora is None:
        return w.copy()
    a = layer.lora
    return w + a.alpha * (a.B.data @ a.A.data)


def iter_adapters(module: Module):
    """Yield (name, adapter) for every attached adapter under ``module``."""
    yield from _walk_adapters(module, "")


def _walk_adapters(module: Module, prefix: str):
    for attr, value in vars(module).items():
        name = f"{prefix}{attr}"
        if isinstance(value, LoraAdapter):
            yield name, value
        elif isinstance(value, Module):
            yield from _walk_adapters(value, f"{name}.")
        elif isinstance(value, (list, tuple)):
            for i, item in enumerate(value):
                if isinstance(item, Module):
                    yield from _walk_adapters(item, f"{name}.{i}.")


def count_lora_params(module: Module) -> dict:
    """Adapter parameter accounting: per-adapter counts and the total.

    Each adapter contributes r * (d_in + d_out); the report's total is the
    sum over attached adapters and must equal that analytic formula.
    """
    per = {name: a.num_params() for name, a in _walk_adapters(module, "")}
    return {"per_adapter": per, "total": sum(per.values())}


def analytic_count(dims: list[tuple[int, int]], rank: int) -> int:
    """Sum of r * (d_in + d_out) over (d_in, d_out) pairs."""
    return sum(rank * (d_in + d_out) for d_in, d_out in dims)
