"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from .autodiff import Rng, Tensor
from .errors import ContractError


def grad_check(f: Callable[[], Tensor], params: Iterable[Tensor],
               h: float = 1e-5, max_coords: int = 8,
               rng: Rng | None = None) -> float:
    """Compare reverse-mode gradients of a scalar ``f()`` to central
    differences and return the max relative error over sampled coordinates.

    ``f`` must be a pure function of the parameter buffers. Requires float64
    parameters; the step 2h is too coarse for float32 noise floors.
    Relative error uses denominator max(|fd|, |analytic|, 1e-6) so near-zero
    gradients degrade gracefully to an absolute comparison.
    """
    params = list(params)
    if not params:
        raise ContractError("grad_check needs at least one parameter")
    for p in params:
        if p.data.dtype != np.float64:
            raise ContractError("grad_check requires float64 parameters")
        if not p.requires_grad:
            raise ContractError(f"parameter is frozen: {p!r}")
        if not p.data.flags.c_contiguous:
            raise ContractError("grad_check needs contiguous parameter buffers")

    out = f()
    if out.size != 1:
        raise ContractError("grad_check target must be scalar")
    for p in params:
        p.grad = None
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
                for p in params]

    rng = rng or Rng(0)
    worst = 0.0
    for p, an in zip(params, analytic):
        flat = p.data.reshape(-1)
        an_flat = an.reshape(-1)
        n = flat.size
        if n <= max_coords:
            coords = range(n)
        else:
            coords = sorted(rng.generator.choice(n, size=max_coords, replace=False))
        for idx in coords:
            orig = flat[idx]
            flat[idx] = orig + h
            f_plus = float(f().data.reshape(-1)[0])
            flat[idx] = orig - h
            f_minus = float(f().data.reshape(-1)[0])
            flat[idx] = orig
            fd = (f_plus - f_minus) / (2.0 * h)
            a = float(an_flat[idx])
            rel = abs(fd - a) / max(abs(fd), abs(a), 1e-6)
            worst = max(worst, rel)
    return worst
