"""Differentiable layer kernels on float64 numpy arrays.

All layers come in forward/backward pairs with explicit caches (the caller
keeps whatever the backward pass needs).  Arrays are channels-first: a single
sample is ``(C, H, W)``, a batch is ``(N, C, H, W)``; every op accepts either
and returns the matching rank.  Convolution uses cross-correlation semantics
(no kernel flip) with row-major accumulation, so the naive-loop reference in
the test suite is unambiguous.

``finite_diff_grad`` is the independent oracle every analytic backward is
checked against.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BCE_EPS = 1e-7


class ShapeError(ValueError):
    """Operand shapes are inconsistent with the layer contract."""


class NumericError(ArithmeticError):
    """A non-finite value appeared where the contract forbids it."""


@dataclass
class Parameter:
    """A trainable tensor with its gradient accumulator and freeze flag."""

    value: np.ndarray
    grad: np.ndarray = field(default=None)  # type: ignore[assignment]
    frozen: bool = False

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        else:
            self.grad = np.asarray(self.grad, dtype=np.float64)
        if self.grad.shape != self.value.shape:
            raise ShapeError(
                f"grad shape {self.grad.shape} != value shape {self.value.shape}"
            )

    def zero_grad(self):
        self.grad[...] = 0.0


def _as_batch(x):
    """Promote (C,H,W) to (1,C,H,W); return (array, had_batch_dim)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return x[None], False
    if x.ndim == 4:
        return x, True
    raise ShapeError(f"expected rank 3 or 4, got shape {x.shape}")


def _im2col(xb, kh, kw, stride, ho, wo):
    """(N,C,Hp,Wp) -> (C*kh*kw, N*ho*wo) patch matrix."""
    n, c = xb.shape[:2]
    if kh == kw == 1 and stride == 1:
        return xb.transpose(1, 0, 2, 3).reshape(c, n * ho * wo)
    cols = np.empty((n, c, kh, kw, ho, wo))
    for di in range(kh):
        for dj in range(kw):
            cols[:, :, di, dj] = xb[
                :, :, di : di + stride * ho : stride, dj : dj + stride * wo : stride
            ]
    return cols.transpose(1, 2, 3, 0, 4, 5).reshape(c * kh * kw, n * ho * wo)


def conv2d_forward(x, kernel, bias, padding=0, stride=1, cols_out=None):
    """Cross-correlate ``x`` with ``kernel`` and add per-channel ``bias``.

    Output extent is floor((H + 2*padding - k) / stride) + 1 per axis.
    When ``cols_out`` (a list) is given, the extracted patch matrix is
    appended to it for reuse by conv2d_backward.
    """
    xb, batched = _as_batch(x)
    kernel = np.asarray(kernel, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    n, cin, h, w = xb.shape
    cout, kcin, kh, kw = kernel.shape
    if kcin != cin:
        raise ShapeError(f"kernel expects {kcin} input channels, input has {cin}")
    if bias.shape != (cout,):
        raise ShapeError(f"bias shape {bias.shape} != ({cout},)")
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ShapeError(
            f"kernel {kh}x{kw} larger than padded input {h + 2 * padding}x{w + 2 * padding}"
        )
    if padding:
        xb = np.pad(xb, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    hp, wp = xb.shape[2:]
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    cols = _im2col(xb, kh, kw, stride, ho, wo)
    res = kernel.reshape(cout, -1) @ cols
    res += bias[:, None]
    out = res.reshape(cout, n, ho, wo).transpose(1, 0, 2, 3)
    if cols_out is not None:
        cols_out.append((cols, xb.shape))
    return out if batched else out[0]


def conv2d_backward(grad_out, cached_input, kernel, padding=0, stride=1,
                    cached_cols=None, need_input_grad=True):
    """Gradients of conv2d_forward w.r.t. input, kernel, and bias.

    ``cached_cols`` optionally reuses the (cols, padded_shape) pair captured
    during the forward pass to skip re-extracting patches.  With
    ``need_input_grad=False`` (first layers) grad_input is returned as None.
    """
    if cached_input is None and cached_cols is None:
        raise ShapeError("conv2d_backward requires the cached forward input")
    gb, batched = _as_batch(grad_out)
    kernel = np.asarray(kernel, dtype=np.float64)
    cout, cin, kh, kw = kernel.shape
    ho, wo = gb.shape[2:]
    if cached_cols is not None:
        cols, padded_shape = cached_cols
        n, _, hp, wp = padded_shape
    else:
        xb, _ = _as_batch(cached_input)
        if padding:
            xb = np.pad(xb, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
        n, _, hp, wp = xb.shape
        cols = _im2col(xb, kh, kw, stride, ho, wo)
    grad_bias = gb.sum(axis=(0, 2, 3))
    gb_mat = gb.transpose(1, 0, 2, 3).reshape(cout, n * ho * wo)
    grad_kernel = (gb_mat @ cols.T).reshape(cout, cin, kh, kw)
    if not need_input_grad:
        return None, grad_kernel, grad_bias
    grad_cols = (kernel.reshape(cout, -1).T @ gb_mat).reshape(
        cin, kh, kw, n, ho, wo
    )
    grad_xp = np.zeros((n, cin, hp, wp))
    for di in range(kh):
        for dj in range(kw):
            grad_xp[
                :, :, di : di + stride * ho : stride, dj : dj + stride * wo : stride
            ] += grad_cols[:, di, dj].transpose(1, 0, 2, 3)
    if padding:
        grad_xp = grad_xp[:, :, padding:-padding, padding:-padding]
    if not batched:
        grad_xp = grad_xp[0]
    return grad_xp, grad_kernel, grad_bias


def avgpool2d(x, window):
    """Non-overlapping mean pooling; window must divide both extents."""
    xb, batched = _as_batch(x)
    n, c, h, w = xb.shape
    if h % window or w % window:
        raise ShapeError(f"window {window} does not divide extents {h}x{w}")
    out = xb.reshape(n, c, h // window, window, w // window, window).mean(axis=(3, 5))
    return out if batched else out[0]


def avgpool2d_backward(grad_out, window):
    gb, batched = _as_batch(grad_out)
    g = np.repeat(np.repeat(gb, window, axis=2), window, axis=3) / (window * window)
    return g if batched else g[0]


def dense(x, weights, bias):
    """Affine map: out_i = sum_j weights[i,j] * x[j] + bias[i].

    ``x`` may be (n,) or batched (N, n).
    """
    x = np.asarray(x, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if x.shape[-1] != weights.shape[1]:
        raise ShapeError(f"input width {x.shape[-1]} != weight width {weights.shape[1]}")
    if bias.shape != (weights.shape[0],):
        raise ShapeError(f"bias shape {bias.shape} != ({weights.shape[0]},)")
    return x @ weights.T + bias


def dense_backward(grad_out, cached_input, weights):
    g = np.asarray(grad_out, dtype=np.float64)
    x = np.asarray(cached_input, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    grad_x = g @ weights
    if g.ndim == 1:
        grad_w = np.outer(g, x)
        grad_b = g.copy()
    else:
        grad_w = g.T @ x
        grad_b = g.sum(axis=0)
    return grad_x, grad_w, grad_b


ACTIVATIONS = ("tanh", "sigmoid")


def activation(x, kind):
    x = np.asarray(x, dtype=np.float64)
    if kind == "tanh":
        return np.tanh(x)
    if kind == "sigmoid":
        # Branch on sign so exp never overflows; clamp into the open (0,1)
        # interval so saturated inputs cannot round to an endpoint.
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return np.clip(out, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))
    raise ValueError(f"unknown activation kind {kind!r}")


def activation_backward(grad_out, cached_output, kind):
    y = np.asarray(cached_output, dtype=np.float64)
    g = np.asarray(grad_out, dtype=np.float64)
    if kind == "tanh":
        return g * (1.0 - y * y)
    if kind == "sigmoid":
        return g * y * (1.0 - y)
    raise ValueError(f"unknown activation kind {kind!r}")


def _clamp_score(score):
    return np.clip(np.asarray(score, dtype=np.float64), BCE_EPS, 1.0 - BCE_EPS)


def bce_loss(score, label):
    """Binary cross-entropy with scores clamped to [eps, 1-eps]."""
    label = np.asarray(label, dtype=np.float64)
    if not np.all((label == 0.0) | (label == 1.0)):
        raise ValueError("bce_loss labels must be 0 or 1")
    s = _clamp_score(score)
    return -(label * np.log(s) + (1.0 - label) * np.log(1.0 - s))


def bce_loss_backward(score, label):
    """d loss / d score, evaluated at the clamped score."""
    label = np.asarray(label, dtype=np.float64)
    s = _clamp_score(score)
    return -label / s + (1.0 - label) / (1.0 - s)


def mse_loss(prediction, target):
    p = np.asarray(prediction, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    return (p - t) ** 2


def mse_loss_backward(prediction, target):
    p = np.asarray(prediction, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    return 2.0 * (p - t)


def sgd_step(params, learning_rate):
    """In-place SGD update; frozen parameters stay bitwise unchanged.

    All gradients (frozen included) are reset to zero afterwards.
    """
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise NumericError("non-finite gradient in sgd_step")
    for p in params:
        if not p.frozen:
            p.value -= learning_rate * p.grad
        p.zero_grad()


def finite_diff_grad(loss_fn, arrays, h=1e-5):
    """Central finite-difference gradient of ``loss_fn`` w.r.t. each array.

    ``loss_fn`` takes no arguments and reads the arrays, which are perturbed
    in place (and restored) one element at a time.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    grads = []
    for a in arrays:
        g = np.zeros_like(a, dtype=np.float64)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = float(loss_fn())
            flat[i] = orig - h
            lm = float(loss_fn())
            flat[i] = orig
            gflat[i] = (lp - lm) / (2.0 * h)
        grads.append(g)
    return grads
