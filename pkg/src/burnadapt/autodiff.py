"""Reverse-mode autodiff substrate.

A minimal tape over numpy arrays providing exactly the operations the
segmentation architecture needs: dense/batched matmul, layer norm, softmax,
exact (erf) GELU, concat/reshape/permute/narrow, bilinear resizing, small
convolutions, patch embedding, and axis reductions. Every op records a
closure that scatters the output gradient back to its parents; ``backward``
replays them in reverse topological order.

Conventions pinned here so gradient checks have a single target:

* float32 is the training dtype, float64 the verification dtype;
* GELU uses the exact Gaussian-CDF form, not the tanh approximation;
* layer norm uses biased variance with eps inside the square root;
* bilinear resizing uses half-pixel source centers (align_corners=false).

Tensors are treated as immutable once created; only optimizer steps (and the
finite-difference harness) write to parameter buffers.
"""

from __future__ import annotations

import math
from functools import lru_cache
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import special

from .errors import ContractError, DimensionError

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

# Optional global forward-value check, enabled by verification tests.
_CHECK_FINITE = False


def set_check_finite(flag: bool) -> None:
    """Globally toggle per-op finiteness checks (slow; for tests)."""
    global _CHECK_FINITE
    _CHECK_FINITE = bool(flag)


def _prepare(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype not in _FLOAT_DTYPES:
        arr = arr.astype(np.float32)
    return arr


class Tensor:
    """An n-d float array participating in the gradient tape.

    ``requires_grad`` says whether gradients should flow to this tensor; it
    is inherited by results of ops on it. Gradients accumulate into ``grad``
    during ``backward`` and are never cleared implicitly.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None,
                 _parents: tuple = (), _backward: Callable | None = None):
        self.data = _prepare(data, dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward
        if _CHECK_FINITE and not np.all(np.isfinite(self.data)):
            raise ContractError("non-finite values produced by a forward op")

    # -- introspection ----------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    # -- autodiff ---------------------------------------------------------

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate gradients of ``self`` into every reachable leaf."""
        if grad is None:
            if self.data.size != 1:
                raise ContractError("backward() without an explicit gradient "
                                    "requires a scalar output")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)
            if grad.shape != self.data.shape:
                raise DimensionError("seed gradient shape mismatch")
        order = _toposort(self)
        self.grad = grad if self.grad is None else self.grad + grad
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -other)

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __truediv__(self, scalar):
        if isinstance(scalar, Tensor):
            raise TypeError("tensor/tensor division is not part of the substrate")
        return mul(self, 1.0 / scalar)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def transpose(self, *axes):
        return transpose(self, axes[0] if len(axes) == 1 and isinstance(axes[0], (tuple, list)) else axes)

    @property
    def T(self):
        if self.ndim != 2:
            raise DimensionError(".T is defined for 2-d tensors only")
        return transpose(self, (1, 0))

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean_(self, axis=axis, keepdims=keepdims)


class Parameter(Tensor):
    """A named leaf tensor with a trainability flag.

    ``trainable`` aliases ``requires_grad``: frozen parameters never receive
    gradients (the tape skips them) and the optimizer never writes to them.
    """

    __slots__ = ("name",)

    def __init__(self, data, trainable: bool = True, name: str = "", dtype=None):
        super().__init__(np.ascontiguousarray(_prepare(data, dtype)),
                         requires_grad=trainable)
        self.name = name

    @property
    def trainable(self) -> bool:
        return self.requires_grad

    @trainable.setter
    def trainable(self, flag: bool) -> None:
        self.requires_grad = bool(flag)

    def __repr__(self) -> str:
        return (f"Parameter(name={self.name!r}, shape={self.shape}, "
                f"trainable={self.trainable})")


class Rng:
    """Deterministic random source (PCG64 behind numpy's Generator).

    The same seed yields the same draw sequence on every platform; draws are
    made in float64 and cast, so the stream is dtype-stable. ``child``
    derives an independent stream from (seed, key path), letting model init
    and data shuffling stay decoupled but reproducible.
    """

    algorithm = "pcg64"

    def __init__(self, seed: int, _key: tuple[int, ...] = ()):
        self.seed = int(seed)
        self._key = tuple(int(k) for k in _key)
        seq = np.random.SeedSequence([self.seed, *self._key])
        self.generator = np.random.Generator(np.random.PCG64(seq))

    def child(self, *key: int) -> "Rng":
        return Rng(self.seed, _key=self._key + tuple(key))

    def normal(self, shape, std: float = 1.0, dtype=np.float32) -> np.ndarray:
        return (self.generator.standard_normal(shape) * std).astype(dtype)

    def uniform(self, low: float, high: float, shape, dtype=np.float32) -> np.ndarray:
        return self.generator.uniform(low, high, shape).astype(dtype)

    def integers(self, low: int, high: int | None = None) -> int:
        return int(self.generator.integers(low, high))

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)


# ---------------------------------------------------------------------------
# tape plumbing


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def _result(data, parents: tuple[Tensor, ...], backward: Callable) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward)
    return Tensor(data)


# ---------------------------------------------------------------------------
# elementwise and linear-algebra ops


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def bk(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _result(out, (a, b), bk)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def bk(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.shape))

    return _result(out, (a, b), bk)


def matmul(a, b) -> Tensor:
    """Matrix product with numpy's stacked-matmul broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul operands must have at least 2 dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    out = a.data @ b.data

    def bk(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _result(out, (a, b), bk)


def reshape(t: Tensor, shape) -> Tensor:
    t = as_tensor(t)
    shape = tuple(int(s) for s in shape)
    out = t.data.reshape(shape)

    def bk(g):
        _accum(t, g.reshape(t.shape))

    return _result(out, (t,), bk)


def transpose(t: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    t = as_tensor(t)
    if axes is not None and len(axes) == 0:
        axes = None
    if axes is None:
        axes = tuple(reversed(range(t.ndim)))
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(t.ndim)):
        raise DimensionError(f"invalid permutation {axes} for ndim {t.ndim}")
    inv = tuple(int(i) for i in np.argsort(axes))
    out = np.transpose(t.data, axes)

    def bk(g):
        _accum(t, np.transpose(g, inv))

    return _result(out, (t,), bk)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise DimensionError("concat of zero tensors")
    nd = ts[0].ndim
    if not -nd <= axis < nd:
        raise DimensionError(f"concat axis {axis} out of range for ndim {nd}")
    ax = axis % nd
    out = np.concatenate([t.data for t in ts], axis=ax)
    sizes = [t.shape[ax] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def bk(g):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * nd
            sl[ax] = slice(int(lo), int(hi))
            _accum(t, g[tuple(sl)])

    return _result(out, tuple(ts), bk)


def narrow(t: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Slice ``length`` entries from ``start`` along ``axis``."""
    t = as_tensor(t)
    nd = t.ndim
    if not -nd <= axis < nd:
        raise DimensionError(f"narrow axis {axis} out of range")
    ax = axis % nd
    if start < 0 or length < 1 or start + length > t.shape[ax]:
        raise DimensionError(
            f"narrow window [{start}, {start + length}) exceeds size {t.shape[ax]}")
    sl = [slice(None)] * nd
    sl[ax] = slice(start, start + length)
    sl = tuple(sl)
    out = t.data[sl]

    def bk(g):
        full = np.zeros_like(t.data)
        full[sl] = g
        _accum(t, full)

    return _result(out, (t,), bk)


def _axis_tuple(axis, ndim) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(t: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    t = as_tensor(t)
    axes = _axis_tuple(axis, t.ndim)
    out = t.data.sum(axis=axes, keepdims=keepdims)

    def bk(g):
        gg = g
        if not keepdims:
            shape = [1 if i in axes else s for i, s in enumerate(t.shape)]
            gg = g.reshape(shape)
        _accum(t, np.broadcast_to(gg, t.shape).copy())

    return _result(out, (t,), bk)


def mean_(t: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    t = as_tensor(t)
    axes = _axis_tuple(axis, t.ndim)
    count = int(np.prod([t.shape[a] for a in axes])) if axes else 1
    out = t.data.mean(axis=axes, keepdims=keepdims)

    def bk(g):
        gg = g
        if not keepdims:
            shape = [1 if i in axes else s for i, s in enumerate(t.shape)]
            gg = g.reshape(shape)
        _accum(t, (np.broadcast_to(gg, t.shape) / count).astype(t.dtype))

    return _result(out, (t,), bk)


# ---------------------------------------------------------------------------
# nonlinearities and normalization


def softmax(t: Tensor, axis: int = -1) -> Tensor:
    t = as_tensor(t)
    nd = t.ndim
    if not -nd <= axis < nd:
        raise DimensionError(f"softmax axis {axis} out of range for ndim {nd}")
    shifted = t.data - t.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=axis, keepdims=True)

    def bk(g):
        dot = (g * p).sum(axis=axis, keepdims=True)
        _accum(t, p * (g - dot))

    return _result(p, (t,), bk)


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(t: Tensor) -> Tensor:
    """Exact GELU: x * Phi(x) with the Gaussian CDF via erf."""
    t = as_tensor(t)
    x = t.data
    cdf = 0.5 * (1.0 + special.erf(x * _INV_SQRT2))
    out = (x * cdf).astype(x.dtype)

    def bk(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
        _accum(t, (g * (cdf + x * pdf)).astype(x.dtype))

    return _result(out, (t,), bk)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine.

    Biased variance; eps added inside the square root. gamma/beta have shape
    (d,) and broadcast over all leading axes.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-1] if x.ndim else 0
    if d == 0:
        raise DimensionError("layer_norm over an empty last axis")
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError("gamma/beta must have shape (d,)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = (xhat * gamma.data + beta.data).astype(x.dtype)
    lead = tuple(range(x.ndim - 1))

    def bk(g):
        if gamma.requires_grad:
            _accum(gamma, (g * xhat).sum(axis=lead))
        if beta.requires_grad:
            _accum(beta, g.sum(axis=lead))
        if x.requires_grad:
            gx = g * gamma.data
            m1 = gx.mean(axis=-1, keepdims=True)
            m2 = (gx * xhat).mean(axis=-1, keepdims=True)
            _accum(x, ((gx - m1 - xhat * m2) * inv).astype(x.dtype))

    return _result(out, (x, gamma, beta), bk)


# ---------------------------------------------------------------------------
# resampling


@lru_cache(maxsize=256)
def bilinear_matrix(in_size: int, out_size: int) -> np.ndarray:
    """Row-stochastic 1-d interpolation matrix, half-pixel convention.

    Source coordinate of output index d is (d + 0.5) * in/out - 0.5, with
    edge clamping. ``out = M @ x`` resamples a length-``in_size`` signal.
    """
    if in_size < 1 or out_size < 1:
        raise DimensionError("bilinear sizes must be >= 1")
    m = np.zeros((out_size, in_size), dtype=np.float64)
    scale = in_size / out_size
    for d in range(out_size):
        s = (d + 0.5) * scale - 0.5
        i0 = math.floor(s)
        t = s - i0
        lo = min(max(i0, 0), in_size - 1)
        hi = min(max(i0 + 1, 0), in_size - 1)
        m[d, lo] += 1.0 - t
        m[d, hi] += t
    return m


@lru_cache(maxsize=256)
def avg_pool_matrix(in_size: int, out_size: int) -> np.ndarray:
    """1-d adaptive average-pooling matrix (bin k covers
    [floor(k*in/out), ceil((k+1)*in/out)))."""
    if in_size < 1 or out_size < 1:
        raise DimensionError("pool sizes must be >= 1")
    m = np.zeros((out_size, in_size), dtype=np.float64)
    for k in range(out_size):
        lo = (k * in_size) // out_size
        hi = -((-(k + 1) * in_size) // out_size)  # ceil division
        m[k, lo:hi] = 1.0 / (hi - lo)
    return m


def _resample(x: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """Apply separable row/column resampling matrices to the last two axes."""
    dt = x.dtype
    r = Tensor(rows.astype(dt))
    c = Tensor(cols.T.astype(dt))
    return matmul(matmul(r, x), c)


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Resize the last two axes bilinearly (half-pixel centers)."""
    x = as_tensor(x)
    if x.ndim < 2:
        raise DimensionError("bilinear_resize needs at least 2 dims")
    h, w = x.shape[-2], x.shape[-1]
    if out_h < 1 or out_w < 1:
        raise DimensionError("target size must be >= 1")
    if (h, w) == (out_h, out_w):
        return x
    return _resample(x, bilinear_matrix(h, out_h), bilinear_matrix(w, out_w))


def adaptive_avg_pool2d(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Adaptive average pooling over the last two axes."""
    x = as_tensor(x)
    if x.ndim < 2:
        raise DimensionError("adaptive_avg_pool2d needs at least 2 dims")
    h, w = x.shape[-2], x.shape[-1]
    if (h, w) == (out_h, out_w):
        return x
    return _resample(x, avg_pool_matrix(h, out_h), avg_pool_matrix(w, out_w))


def avg_pool2(x: Tensor) -> Tensor:
    """2x2 stride-2 average pooling of [C, H, W]; H and W must be even."""
    x = as_tensor(x)
    if x.ndim != 3:
        raise DimensionError("avg_pool2 expects [C, H, W]")
    c, h, w = x.shape
    if h % 2 or w % 2 or h < 2 or w < 2:
        raise DimensionError(f"avg_pool2 needs even spatial size, got {h}x{w}")
    return mean_(reshape(x, (c, h // 2, 2, w // 2, 2)), axis=(2, 4))


# ---------------------------------------------------------------------------
# convolutions (stride 1 + dedicated 2x transposed upsampling)


def _fold_edge_padding(gxp: np.ndarray, p: int, h: int, w: int) -> np.ndarray:
    """Scatter gradients of an edge-padded array back onto the source:
    every padded position clips to its nearest edge/corner pixel."""
    gx = gxp[:, p:p + h, p:p + w].copy()
    gx[:, 0, :] += gxp[:, :p, p:p + w].sum(axis=1)
    gx[:, -1, :] += gxp[:, p + h:, p:p + w].sum(axis=1)
    gx[:, :, 0] += gxp[:, p:p + h, :p].sum(axis=2)
    gx[:, :, -1] += gxp[:, p:p + h, p + w:].sum(axis=2)
    gx[:, 0, 0] += gxp[:, :p, :p].sum(axis=(1, 2))
    gx[:, 0, -1] += gxp[:, :p, p + w:].sum(axis=(1, 2))
    gx[:, -1, 0] += gxp[:, p + h:, :p].sum(axis=(1, 2))
    gx[:, -1, -1] += gxp[:, p + h:, p + w:].sum(axis=(1, 2))
    return gx


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           padding: int = 0, pad_mode: str = "zeros") -> Tensor:
    """2-d convolution of [C_in, H, W] with [C_out, C_in, kh, kw], stride 1.

    Implemented as kh*kw shifted matmuls so forward and backward are single
    BLAS calls per tap. ``pad_mode="edge"`` replicates border pixels, which
    makes the op preserve spatially constant inputs.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 3 or weight.ndim != 4:
        raise DimensionError("conv2d expects x [C,H,W] and weight [O,C,kh,kw]")
    if pad_mode not in ("zeros", "edge"):
        raise DimensionError(f"unknown pad_mode {pad_mode!r}")
    c_in, h, w = x.shape
    c_out, c_w, kh, kw = weight.shape
    if c_w != c_in:
        raise DimensionError(f"conv2d channel mismatch: x has {c_in}, weight {c_w}")
    p = int(padding)
    if p:
        mode = "constant" if pad_mode == "zeros" else "edge"
        xp = np.pad(x.data, ((0, 0), (p, p), (p, p)), mode=mode)
    else:
        xp = x.data
    ho, wo = xp.shape[1] - kh + 1, xp.shape[2] - kw + 1
    if ho < 1 or wo < 1:
        raise DimensionError("conv2d kernel larger than padded input")
    out = np.zeros((c_out, ho, wo), dtype=x.dtype)
    for di in range(kh):
        for dj in range(kw):
            win = xp[:, di:di + ho, dj:dj + wo].reshape(c_in, ho * wo)
            out += (weight.data[:, :, di, dj] @ win).reshape(c_out, ho, wo)
    if bias is not None:
        out += bias.data[:, None, None]

    parents = (x, weight) if bias is None else (x, weight, bias)

    def bk(g):
        gm = g.reshape(c_out, ho * wo)
        if weight.requires_grad:
            gw = np.empty_like(weight.data)
            for di in range(kh):
                for dj in range(kw):
                    win = xp[:, di:di + ho, dj:dj + wo].reshape(c_in, ho * wo)
                    gw[:, :, di, dj] = gm @ win.T
            _accum(weight, gw)
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for di in range(kh):
                for dj in range(kw):
                    gxp[:, di:di + ho, dj:dj + wo] += (
                        weight.data[:, :, di, dj].T @ gm).reshape(c_in, ho, wo)
            if not p:
                _accum(x, gxp)
            elif pad_mode == "zeros":
                _accum(x, gxp[:, p:p + h, p:p + w].copy())
            else:
                _accum(x, _fold_edge_padding(gxp, p, h, w))
        if bias is not None and bias.requires_grad:
            _accum(bias, g.sum(axis=(1, 2)))

    return _result(out, parents, bk)


def conv_transpose2x(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Transposed convolution, kernel 2 stride 2: learned 2x upsampling.

    x: [C_in, H, W]; weight: [C_in, C_out, 2, 2]; output [C_out, 2H, 2W].
    Output blocks do not overlap, so each tap is one matmul.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 3 or weight.shape[2:] != (2, 2):
        raise DimensionError("conv_transpose2x expects x [C,H,W], weight [C,O,2,2]")
    c_in, h, w = x.shape
    if weight.shape[0] != c_in:
        raise DimensionError(
            f"conv_transpose2x channel mismatch: x has {c_in}, weight {weight.shape[0]}")
    c_out = weight.shape[1]
    xf = x.data.reshape(c_in, h * w)
    out = np.empty((c_out, 2 * h, 2 * w), dtype=x.dtype)
    for di in range(2):
        for dj in range(2):
            out[:, di::2, dj::2] = (weight.data[:, :, di, dj].T @ xf).reshape(c_out, h, w)
    if bias is not None:
        out += bias.data[:, None, None]

    parents = (x, weight) if bias is None else (x, weight, bias)

    def bk(g):
        gx = np.zeros_like(x.data) if x.requires_grad else None
        gw = np.empty_like(weight.data) if weight.requires_grad else None
        for di in range(2):
            for dj in range(2):
                gs = g[:, di::2, dj::2].reshape(c_out, h * w)
                if gx is not None:
                    gx += (weight.data[:, :, di, dj] @ gs).reshape(c_in, h, w)
                if gw is not None:
                    gw[:, :, di, dj] = xf @ gs.T
        if gx is not None:
            _accum(x, gx)
        if gw is not None:
            _accum(weight, gw)
        if bias is not None and bias.requires_grad:
            _accum(bias, g.sum(axis=(1, 2)))

    return _result(out, parents, bk)


# ---------------------------------------------------------------------------
# patch embedding


def patch_flatten(x: Tensor, patch: int) -> Tensor:
    """[C, H, W] -> [N, C*p*p] with row-major patch order and (c, i, j)
    layout inside each token."""
    x = as_tensor(x)
    if x.ndim != 3:
        raise DimensionError("patch_flatten expects [C, H, W]")
    c, h, w = x.shape
    if patch < 1 or h % patch or w % patch:
        raise DimensionError(
            f"patch size {patch} must divide spatial extent {h}x{w}")
    gh, gw = h // patch, w // patch
    t = reshape(x, (c, gh, patch, gw, patch))
    t = transpose(t, (1, 3, 0, 2, 4))
    return reshape(t, (gh * gw, c * patch * patch))


def patch_embed(x: Tensor, patch: int, proj: Tensor,
                bias: Tensor | None = None) -> Tensor:
    """Project non-overlapping patches: [C,H,W] -> [N, d] via proj [C*p*p, d]."""
    flat = patch_flatten(x, patch)
    proj = as_tensor(proj)
    if proj.ndim != 2 or proj.shape[0] != flat.shape[1]:
        raise DimensionError(
            f"proj must be [{flat.shape[1]} x d], got {proj.shape}")
    tokens = matmul(flat, proj)
    if bias is not None:
        tokens = add(tokens, bias)
    return tokens
