"""Bias-corrected Adam over Parameter leaves."""

from __future__ import annotations

import numpy as np

from .autodiff import Parameter
from .errors import ContractError


class Adam:
    """Standard Adam: m/v moments with bias correction, eps outside the
    square root. Frozen parameters are never written, even if a gradient
    was somehow attached to them.
    """

    def __init__(self, params, lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params: list[Parameter] = list(params)
        if not self.params:
            raise ContractError("optimizer needs at least one parameter")
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            if not p.trainable:
                continue
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            elif g.shape != p.data.shape:
                raise ContractError(
                    f"gradient shape {g.shape} != parameter shape {p.data.shape} "
                    f"for {p.name!r}")
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            p.data -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype)

    # -- checkpoint support -------------------------------------------------

    def state_dict(self) -> dict:
        return {
            "t": self.t,
            "m": {p.name: m for p, m in zip(self.params, self.m)},
            "v": {p.name: v for p, v in zip(self.params, self.v)},
        }

    def load_state_dict(self, state: dict) -> None:
        self.t = int(state["t"])
        for i, p in enumerate(self.params):
            if p.name in state["m"]:
                m, v = state["m"][p.name], state["v"][p.name]
                if m.shape != p.data.shape:
                    raise ContractError(
                        f"optimizer state shape mismatch for {p.name!r}")
                self.m[i] = m.astype(p.data.dtype)
                self.v[i] = v.astype(p.data.dtype)
