"""Model assembly: encoder + neck + decoder + head, adaptation strategies,
and parameter accounting."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np

from .autodiff import Rng, Tensor
from .decoder import (ClassifierHead, HeadConfig, PyramidNeck, UperNetDecoder,
                      fuse_bitemporal)
from .errors import ConfigurationError
from .lora import LoraSpec, attach, iter_adapters
from .nn import Module
from .vit import ViTConfig, VitEncoder, tokens_to_grid


class Strategy(str, Enum):
    FULL_FT = "full_ft"
    DECODER_ONLY = "decoder_only"
    LORA = "lora"

    @classmethod
    def parse(cls, value) -> "Strategy":
        if isinstance(value, Strategy):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigurationError(
                f"unknown strategy {value!r}; expected one of "
                f"{[s.value for s in cls]}") from None


@dataclass
class ParamReport:
    scope: str  # "encoder_only" | "full_network"
    total: int
    trainable: int

    @property
    def percent(self) -> float:
        return 100.0 * self.trainable / self.total if self.total else 0.0

    def line(self) -> str:
        return (f"{self.scope}: total {self.total}, "
                f"trainable {self.trainable} ({self.percent:.4f}%)")


class BiTemporalSegmenter(Module):
    """f(x_pre, x_post) -> per-pixel class logits [2, H, W].

    Both timestamps run through the same encoder instance; pyramids are
    fused by channel concatenation before decoding.
    """

    def __init__(self, vit_cfg: ViTConfig, head_cfg: HeadConfig, rng: Rng):
        dt = vit_cfg.np_dtype
        self.encoder = VitEncoder(vit_cfg, rng)
        self.neck = PyramidNeck(vit_cfg.d_model, head_cfg, rng, dtype=dt)
        self.decoder = UperNetDecoder(head_cfg, rng, dtype=dt)
        self.head = ClassifierHead(head_cfg, rng, dtype=dt)
        self.vit_cfg = vit_cfg
        self.head_cfg = head_cfg
        self.strategy: Strategy | None = None
        self.lora_spec: LoraSpec | None = None

    def _pyramid(self, x: Tensor) -> list[Tensor]:
        feats = self.encoder(x)
        grids = [tokens_to_grid(t, feats.has_cls) for t in feats.layers]
        return self.neck(grids)

    def forward(self, pre: Tensor, post: Tensor) -> Tensor:
        h, w = pre.shape[-2], pre.shape[-1]
        fused = fuse_bitemporal(self._pyramid(pre), self._pyramid(post))
        dense = self.decoder(fused)
        return self.head(dense, h, w)

    # -- weight bookkeeping -------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_arrays(self, state: dict[str, np.ndarray]) -> None:
        for name, p in self.named_parameters():
            if name not in state:
                raise ConfigurationError(f"missing parameter {name!r} in state")
            src = state[name]
            if src.shape != p.data.shape:
                raise ConfigurationError(
                    f"shape mismatch for {name!r}: {src.shape} vs {p.data.shape}")
            p.data[...] = src


def _attach_adapters(model: BiTemporalSegmenter, spec: LoraSpec, rng: Rng) -> int:
    dt = model.vit_cfg.np_dtype
    count = 0
    for block in model.encoder.blocks:
        if "qkv_fused" in spec.targets:
            attach(block.attn.qkv, spec, rng, dtype=dt)
            count += 1
        if "attn_out" in spec.targets:
            attach(block.attn.out, spec, rng, dtype=dt)
            count += 1
        if "mlp_fc1" in spec.targets:
            attach(block.mlp.fc1, spec, rng, dtype=dt)
            count += 1
        if "mlp_fc2" in spec.targets:
            attach(block.mlp.fc2, spec, rng, dtype=dt)
            count += 1
    if "patch_embed_1x1" in spec.targets:
        attach(model.encoder.patch_embed.proj, spec, rng, dtype=dt)
        count += 1
    return count


def is_adapter_param(name: str) -> bool:
    return ".lora." in name


def set_trainability(model: BiTemporalSegmenter, strategy) -> None:
    """Apply a strategy's freezing policy to every parameter.

    full_ft: everything trainable. decoder_only: encoder frozen, neck +
    decoder + head trainable. lora: encoder base frozen, adapters + neck +
    decoder + head trainable.
    """
    strategy = Strategy.parse(strategy)
    if strategy is Strategy.LORA:
        if not any(True for _ in iter_adapters(model.encoder)):
            raise ConfigurationError(
                "LoRA strategy requires adapters; none are attached")
    for name, p in model.named_parameters():
        in_encoder = name.startswith("encoder.")
        if strategy is Strategy.FULL_FT:
            p.trainable = True
        elif strategy is Strategy.DECODER_ONLY:
            p.trainable = not in_encoder
        else:
            p.trainable = (not in_encoder) or is_adapter_param(name)
    model.strategy = strategy


def build_model(vit_cfg: ViTConfig, head_cfg: HeadConfig, strategy,
                lora_spec: LoraSpec | None = None, seed: int = 0,
                init: str = "random") -> BiTemporalSegmenter:
    """Assemble the full network deterministically from a seed.

    Base weights are drawn before any adapter weights, so assemblies built
    under different strategies from the same seed share identical base
    initialization (and, with zero-init adapters, identical initial
    forwards). ``init="zeros"`` skips random initialization for jobs that
    only need parameter shapes and counts.
    """
    strategy = Strategy.parse(strategy)
    rng = Rng(seed).child(0)
    model = BiTemporalSegmenter(vit_cfg, head_cfg, rng)
    if strategy is Strategy.LORA:
        spec = lora_spec or LoraSpec()
        _attach_adapters(model, spec, rng.child(1))
        model.lora_spec = spec
    set_trainability(model, strategy)
    model.assign_names()
    if init == "zeros":
        for p in model.parameters():
            p.data[...] = 0
    elif init != "random":
        raise ConfigurationError(f"unknown init mode {init!r}")
    return model


def param_report(model: BiTemporalSegmenter, scope: str) -> ParamReport:
    """Exact integer parameter counts by trainability flag within a scope."""
    if scope not in ("encoder_only", "full_network"):
        raise ConfigurationError(f"unknown scope {scope!r}")
    total = trainable = 0
    for name, p in model.named_parameters():
        if scope == "encoder_only" and not name.startswith("encoder."):
            continue
        total += p.size
        if p.trainable:
            trainable += p.size
    return ParamReport(scope=scope, total=total, trainable=trainable)


def encoder_base_checksum(model: BiTemporalSegmenter) -> str:
    """SHA-256 over the raw bytes of all non-adapter encoder weights,
    in name order. Bit-identical across a frozen-encoder training run."""
    h = hashlib.sha256()
    for name, p in sorted(model.named_parameters()):
        if name.startswith("encoder.") and not is_adapter_param(name):
            h.update(name.encode())
            h.update(p.data.tobytes())
    return h.hexdigest()


def config_hash(vit_cfg: ViTConfig, head_cfg: HeadConfig, strategy,
                lora_spec: LoraSpec | None) -> str:
    """Stable digest of the architecture-defining configuration."""
    payload = {
        "vit": asdict(vit_cfg),
        "head": asdict(head_cfg),
        "strategy": Strategy.parse(strategy).value,
        "lora": asdict(lora_spec) if lora_spec else None,
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
