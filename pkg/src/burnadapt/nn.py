"""Tiny module system: parameter containers with hierarchical names."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Rng, Tensor
from .errors import DimensionError


class Module:
    """Base container. Submodules and parameters are discovered from
    instance attributes in assignment order, which fixes both the naming
    scheme and the deterministic parameter ordering used by the optimizer
    and checkpoints.
    """

    def named_parameters(self, prefix: str = ""):
        for attr, value in vars(self).items():
            name = f"{prefix}{attr}"
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Parameter):
                        yield f"{name}.{i}", item
                    elif isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def assign_names(self, prefix: str = "") -> None:
        """Stamp each Parameter's ``name`` with its hierarchical path."""
        for name, p in self.named_parameters(prefix):
            p.name = name

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    """Dense map y = x W^T + b with weight stored [d_out, d_in].

    ``lora`` optionally holds a low-rank adapter whose delta is added to the
    base output; see :mod:`burnadapt.lora`.
    """

    def __init__(self, d_in: int, d_out: int, rng: Rng, bias: bool = True,
                 dtype=np.float32):
        self.d_in = d_in
        self.d_out = d_out
        std = 1.0 / np.sqrt(d_in)
        self.weight = Parameter(rng.normal((d_out, d_in), std, dtype))
        self.bias = Parameter(np.zeros(d_out, dtype)) if bias else None
        self.lora = None

    def base_forward(self, x: Tensor) -> Tensor:
        y = ad.matmul(x, self.weight.T)
        if self.bias is not None:
            y = ad.add(y, self.bias)
        return y

    def forward(self, x: Tensor) -> Tensor:
        y = self.base_forward(x)
        if self.lora is not None:
            y = ad.add(y, self.lora.delta(x))
        return y


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5, dtype=np.float32):
        if d < 1:
            raise DimensionError("layer norm width must be >= 1")
        self.gamma = Parameter(np.ones(d, dtype))
        self.beta = Parameter(np.zeros(d, dtype))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.gamma, self.beta, self.eps)


class Conv2d(Module):
    """Stride-1 convolution on [C, H, W]."""

    def __init__(self, c_in: int, c_out: int, kernel: int, rng: Rng,
                 padding: int = 0, bias: bool = True, pad_mode: str = "zeros",
                 dtype=np.float32):
        fan_in = c_in * kernel * kernel
        std = 1.0 / np.sqrt(fan_in)
        self.weight = Parameter(rng.normal((c_out, c_in, kernel, kernel), std, dtype))
        self.bias = Parameter(np.zeros(c_out, dtype)) if bias else None
        self.padding = padding
        self.pad_mode = pad_mode

    def forward(self, x: Tensor) -> Tensor:
        return ad.conv2d(x, self.weight, self.bias, padding=self.padding,
                         pad_mode=self.pad_mode)


class ConvTranspose2x(Module):
    """Learned 2x upsampling (transposed conv, kernel 2, stride 2)."""

    def __init__(self, c_in: int, c_out: int, rng: Rng, bias: bool = True,
                 dtype=np.float32):
        std = 1.0 / np.sqrt(c_in * 4)
        self.weight = Parameter(rng.normal((c_in, c_out, 2, 2), std, dtype))
        self.bias = Parameter(np.zeros(c_out, dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ad.conv_transpose2x(x, self.weight, self.bias)
