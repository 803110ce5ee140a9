"""Reverse-mode automatic differentiation over numpy arrays.

A deliberately small tape: DiffTensor wraps an ndarray, ops build a graph of
closures, backward() walks it once in reverse topological order and
accumulates gradients additively. The op set is exactly what the model needs;
there is no graph optimizer and no implicit dtype promotion (float32 inputs
stay float32, the gradient checker runs everything in float64).

Shape errors surface as ValueError carrying the offending shapes. softmax,
log_softmax and the loss helpers refuse non-finite inputs by raising
DivergedError naming the op.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DivergedError

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


class DiffTensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self) -> "DiffTensor":
        return DiffTensor(self.data)

    def backward(self) -> None:
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar, got shape {self.data.shape}")
        topo: list[DiffTensor] = []
        seen: set[int] = set()
        stack: list[tuple[DiffTensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Operator sugar; constants adopt this tensor's dtype so float32 graphs
    # never silently promote to float64.
    def _coerce(self, other) -> "DiffTensor":
        if isinstance(other, DiffTensor):
            return other
        return DiffTensor(np.asarray(other, dtype=self.data.dtype))

    def __add__(self, other):
        return add(self, self._coerce(other))

    def __radd__(self, other):
        return add(self._coerce(other), self)

    def __sub__(self, other):
        return sub(self, self._coerce(other))

    def __rsub__(self, other):
        return sub(self._coerce(other), self)

    def __mul__(self, other):
        return mul(self, self._coerce(other))

    def __rmul__(self, other):
        return mul(self._coerce(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def __repr__(self):
        return f"DiffTensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"


def tensor(data, requires_grad: bool = False, dtype=None) -> DiffTensor:
    arr = np.asarray(data, dtype=dtype) if dtype is not None else np.asarray(data)
    return DiffTensor(arr, requires_grad=requires_grad)


def _accum(parent: DiffTensor, grad: np.ndarray) -> None:
    if not parent.requires_grad:
        return
    if parent.grad is None:
        parent.grad = grad.copy() if isinstance(grad, np.ndarray) else np.asarray(grad)
    else:
        parent.grad += grad


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcasted gradient back to the parent's shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _make(data, parents, backward) -> DiffTensor:
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return DiffTensor(data)
    return DiffTensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward)


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise DivergedError(f"non-finite values entering {op}")


# --- arithmetic ---


def add(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    out_data = a.data + b.data

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _make(out_data, (a, b), backward)


def sub(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    out_data = a.data - b.data

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _make(out_data, (a, b), backward)


def neg(a: DiffTensor) -> DiffTensor:
    def backward(g):
        _accum(a, -g)

    return _make(-a.data, (a,), backward)


def mul(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    out_data = a.data * b.data

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(out_data, (a, b), backward)


def div(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    out_data = a.data / b.data

    def backward(g):
        _accum(a, _unbroadcast(g / b.data, a.data.shape))
        _accum(b, _unbroadcast(-g * out_data / b.data, b.data.shape))

    return _make(out_data, (a, b), backward)


def matmul(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    if a.data.ndim < 2 or b.data.ndim < 2 or a.data.shape[-1] != b.data.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    out_data = a.data @ b.data

    def backward(g):
        _accum(a, _unbroadcast(g @ b.data.swapaxes(-1, -2), a.data.shape))
        _accum(b, _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.data.shape))

    return _make(out_data, (a, b), backward)


# --- shape ops ---


def reshape(a: DiffTensor, shape) -> DiffTensor:
    old = a.data.shape

    def backward(g):
        _accum(a, g.reshape(old))

    return _make(a.data.reshape(shape), (a,), backward)


def transpose(a: DiffTensor, axes) -> DiffTensor:
    inverse = np.argsort(axes)

    def backward(g):
        _accum(a, g.transpose(inverse))

    return _make(a.data.transpose(axes), (a,), backward)


def getitem(a: DiffTensor, key) -> DiffTensor:
    """Basic (slice/int/ellipsis) indexing only; use take0 for index arrays."""
    out_data = a.data[key]

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[key] += g
            _accum(a, full)

    return _make(out_data, (a,), backward)


def take0(a: DiffTensor, idx) -> DiffTensor:
    """Gather along axis 0 with an integer array; also the embedding lookup."""
    idx = np.asarray(idx)
    out_data = a.data[idx]

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            _accum(a, full)

    return _make(out_data, (a,), backward)


def gather_rows(a: DiffTensor, idx) -> DiffTensor:
    """out[i] = a[i, idx[i]] for a 2-D tensor."""
    idx = np.asarray(idx)
    if a.data.ndim != 2 or idx.shape != (a.data.shape[0],):
        raise ValueError(f"gather_rows shape mismatch: {a.data.shape} with idx {idx.shape}")
    rows = np.arange(a.data.shape[0])
    out_data = a.data[rows, idx]

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, (rows, idx), g)
            _accum(a, full)

    return _make(out_data, (a,), backward)


# --- reductions ---


def sum_(a: DiffTensor, axis=None, keepdims: bool = False) -> DiffTensor:
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if not a.requires_grad:
            return
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape))
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.data.shape))

    return _make(out_data, (a,), backward)


def mean(a: DiffTensor, axis=None, keepdims: bool = False) -> DiffTensor:
    out_data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size / out_data.size

    def backward(g):
        if not a.requires_grad:
            return
        scale = np.asarray(1.0 / count, dtype=a.data.dtype)
        if axis is None:
            _accum(a, np.broadcast_to(g * scale, a.data.shape))
            return
        gg = g if keepdims else np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(gg * scale, a.data.shape))

    return _make(out_data, (a,), backward)


# --- elementwise nonlinearities ---


def tanh(a: DiffTensor) -> DiffTensor:
    out_data = np.tanh(a.data)

    def backward(g):
        _accum(a, g * (1.0 - out_data * out_data))

    return _make(out_data, (a,), backward)


def sigmoid(a: DiffTensor) -> DiffTensor:
    # tanh-based form: fast in float32 and stable for large |x|
    out_data = 0.5 * (np.tanh(0.5 * a.data) + 1.0)

    def backward(g):
        _accum(a, g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), backward)


def gelu(a: DiffTensor) -> DiffTensor:
    """tanh approximation of GELU (x**3 spelled x*x*x to stay in dtype fast paths)."""
    x = a.data
    inner = _GELU_C * (x + _GELU_A * (x * x * x))
    t = np.tanh(inner)

    def backward(g):
        sech2 = 1.0 - t * t
        d_inner = _GELU_C * (1.0 + 3.0 * _GELU_A * (x * x))
        _accum(a, g * (0.5 * (1.0 + t) + 0.5 * x * sech2 * d_inner))

    return _make(0.5 * x * (1.0 + t), (a,), backward)


def softplus(a: DiffTensor) -> DiffTensor:
    out_data = np.logaddexp(0.0, a.data).astype(a.data.dtype, copy=False)

    def backward(g):
        _accum(a, g * (0.5 * (np.tanh(0.5 * a.data) + 1.0)))

    return _make(out_data, (a,), backward)


def logaddexp(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    out_data = np.logaddexp(a.data, b.data).astype(
        np.result_type(a.data.dtype, b.data.dtype), copy=False
    )

    def backward(g):
        wa = 0.5 * (np.tanh(0.5 * (a.data - b.data)) + 1.0)  # sigmoid(a - b)
        _accum(a, _unbroadcast(g * wa, a.data.shape))
        _accum(b, _unbroadcast(g * (1.0 - wa), b.data.shape))

    return _make(out_data, (a, b), backward)


# --- normalizations and softmax ---


def softmax(a: DiffTensor) -> DiffTensor:
    """Softmax over the last axis."""
    _check_finite(a.data, "softmax")
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * out_data).sum(axis=-1, keepdims=True)
        _accum(a, out_data * (g - dot))

    return _make(out_data, (a,), backward)


def log_softmax(a: DiffTensor) -> DiffTensor:
    _check_finite(a.data, "log_softmax")
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out_data = shifted - lse
    soft = np.exp(out_data)

    def backward(g):
        _accum(a, g - soft * g.sum(axis=-1, keepdims=True))

    return _make(out_data, (a,), backward)


def layer_norm(a: DiffTensor, gain: DiffTensor, bias: DiffTensor, eps: float = 1e-5) -> DiffTensor:
    """Normalize the last axis to zero mean, unit variance, then affine."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
    xhat = xc * inv
    out_data = xhat * gain.data + bias.data
    n = x.shape[-1]

    def backward(g):
        if gain.requires_grad:
            red = tuple(range(g.ndim - 1))
            _accum(gain, (g * xhat).sum(axis=red))
        if bias.requires_grad:
            red = tuple(range(g.ndim - 1))
            _accum(bias, g.sum(axis=red))
        if a.requires_grad:
            gx = g * gain.data
            term = gx.sum(axis=-1, keepdims=True) + xhat * (gx * xhat).sum(axis=-1, keepdims=True)
            _accum(a, (gx - term / np.asarray(n, dtype=x.dtype)) * inv)

    return _make(out_data, (a, gain, bias), backward)


def instance_norm(a: DiffTensor, eps: float = 1e-5, n_axes: int = 2) -> DiffTensor:
    """Normalize the trailing n_axes jointly (no affine parameters)."""
    x = a.data
    axes = tuple(range(x.ndim - n_axes, x.ndim))
    n = int(np.prod([x.shape[ax] for ax in axes]))
    mu = x.mean(axis=axes, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
    xhat = xc * inv

    def backward(g):
        if a.requires_grad:
            term = g.sum(axis=axes, keepdims=True) + xhat * (g * xhat).sum(
                axis=axes, keepdims=True
            )
            _accum(a, (g - term / np.asarray(n, dtype=x.dtype)) * inv)

    return _make(xhat, (a,), backward)


# --- convolution ---


def conv2d(
    x: DiffTensor, w: DiffTensor, b: DiffTensor | None = None, stride: int = 1, padding: int = 0
) -> DiffTensor:
    """NCHW 2-D convolution via im2col + BLAS matmul."""
    xd, wd = x.data, w.data
    if xd.ndim != 4 or wd.ndim != 4 or xd.shape[1] != wd.shape[1]:
        raise ValueError(f"conv2d shape mismatch: input {xd.shape}, kernel {wd.shape}")
    n, c_in, h, wd_in = xd.shape
    c_out, _, kh, kw = wd.shape
    p, s = padding, stride
    h_out = (h + 2 * p - kh) // s + 1
    w_out = (wd_in + 2 * p - kw) // s + 1
    if h_out < 1 or w_out < 1:
        raise ValueError(f"conv2d output collapses: input {xd.shape}, kernel {wd.shape}, "
                         f"stride {s}, padding {p}")

    if p:
        xp = np.pad(xd, ((0, 0), (0, 0), (p, p), (p, p)))
    else:
        xp = xd
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::s, ::s]  # (n, c_in, h_out, w_out, kh, kw)
    cols = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5)).reshape(
        n * h_out * w_out, c_in * kh * kw
    )
    wmat = wd.reshape(c_out, -1)
    out = cols @ wmat.T
    if b is not None:
        out += b.data
    out_data = np.ascontiguousarray(
        out.reshape(n, h_out, w_out, c_out).transpose(0, 3, 1, 2)
    )

    def backward(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * h_out * w_out, c_out)
        if w.requires_grad:
            _accum(w, (g2.T @ cols).reshape(wd.shape))
        if b is not None and b.requires_grad:
            _accum(b, g2.sum(axis=0))
        if x.requires_grad:
            gcols = (g2 @ wmat).reshape(n, h_out, w_out, c_in, kh, kw)
            gcols = gcols.transpose(0, 3, 1, 2, 4, 5)  # (n, c_in, h_out, w_out, kh, kw)
            gxp = np.zeros_like(xp)
            for di in range(kh):
                for dj in range(kw):
                    gxp[:, :, di : di + s * h_out : s, dj : dj + s * w_out : s] += gcols[
                        :, :, :, :, di, dj
                    ]
            _accum(x, gxp[:, :, p : p + h, p : p + wd_in] if p else gxp)

    parents = (x, w) if b is None else (x, w, b)
    return _make(out_data, parents, backward)


def global_mean_pool(a: DiffTensor) -> DiffTensor:
    """Mean over the trailing two (spatial) axes."""
    return mean(a, axis=(-2, -1))


# --- attention (composite) ---


def sdpa(q: DiffTensor, k: DiffTensor, v: DiffTensor, mask: np.ndarray | None = None) -> DiffTensor:
    """Scaled dot-product attention over (..., seq, head_dim) with optional
    additive mask broadcast over leading axes."""
    dh = q.data.shape[-1]
    scores = matmul(q, transpose(k, tuple(range(k.data.ndim - 2)) + (k.data.ndim - 1, k.data.ndim - 2)))
    scores = mul(scores, DiffTensor(np.asarray(1.0 / math.sqrt(dh), dtype=q.data.dtype)))
    if mask is not None:
        scores = add(scores, DiffTensor(np.asarray(mask, dtype=q.data.dtype)))
    return matmul(softmax(scores), v)


# --- losses (composite) ---


def cross_entropy_with_logits(logits: DiffTensor, labels0) -> DiffTensor:
    """Mean negative log-likelihood; labels0 are 0-based class indices."""
    labels0 = np.asarray(labels0)
    if logits.data.ndim != 2 or labels0.shape != (logits.data.shape[0],):
        raise ValueError(
            f"cross_entropy shape mismatch: logits {logits.data.shape}, labels {labels0.shape}"
        )
    if labels0.min() < 0 or labels0.max() >= logits.data.shape[1]:
        raise ValueError("cross_entropy labels out of range")
    return neg(mean(gather_rows(log_softmax(logits), labels0)))


def bce_with_logits(logits: DiffTensor, targets) -> DiffTensor:
    """Mean binary cross-entropy on logits; targets in [0, 1]."""
    targets = np.asarray(targets, dtype=logits.data.dtype)
    if targets.shape != logits.data.shape:
        raise ValueError(
            f"bce shape mismatch: logits {logits.data.shape}, targets {targets.shape}"
        )
    _check_finite(logits.data, "bce_with_logits")
    t = DiffTensor(targets)
    return mean(sub(softplus(logits), mul(logits, t)))


# --- parameter blocks and the finite-difference oracle ---


@dataclass
class ParamBlock:
    name: str
    tensor: DiffTensor
    trainable: bool = True


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst_block: str
    worst_index: int
    per_block: dict


def check_gradients(
    loss_fn: Callable[[], DiffTensor],
    blocks: Sequence[ParamBlock],
    eps: float = 1e-4,
    max_per_block: int = 16,
    seed: int = 0,
) -> GradCheckReport:
    """Central finite differences against the analytic gradient.

    loss_fn must rebuild the graph from the blocks' current data on every
    call. For each trainable block a decimated subset of coordinates is
    perturbed in place by +-eps. Relative error uses max(|analytic|, |fd|)
    as denominator, with tiny pairs counted as exact.
    """
    for blk in blocks:
        blk.tensor.grad = None  # stale grads would pollute the analytic reference
    loss = loss_fn()
    loss.backward()
    analytic = {}
    for blk in blocks:
        if blk.trainable and blk.tensor.grad is not None:
            analytic[blk.name] = blk.tensor.grad.copy()
    rng = np.random.default_rng(seed)
    per_block: dict[str, float] = {}
    worst = (0.0, "", -1)
    for blk in blocks:
        if not blk.trainable:
            continue
        data = blk.tensor.data
        flat = data.reshape(-1)
        ga = analytic.get(blk.name)
        ga_flat = ga.reshape(-1) if ga is not None else np.zeros_like(flat)
        n = flat.size
        if n <= max_per_block:
            chosen = np.arange(n)
        else:
            chosen = rng.choice(n, size=max_per_block, replace=False)
        block_worst = 0.0
        for j in chosen:
            orig = flat[j]
            flat[j] = orig + eps
            lp = float(loss_fn().data)
            flat[j] = orig - eps
            lm = float(loss_fn().data)
            flat[j] = orig
            fd = (lp - lm) / (2.0 * eps)
            a = float(ga_flat[j])
            denom = max(abs(a), abs(fd))
            err = 0.0 if denom < 1e-10 else abs(a - fd) / denom
            if err > block_worst:
                block_worst = err
            if err > worst[0]:
                worst = (err, blk.name, int(j))
        per_block[blk.name] = block_worst
    return GradCheckReport(
        max_rel_err=worst[0], worst_block=worst[1], worst_index=worst[2], per_block=per_block
    )
