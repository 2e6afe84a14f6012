"""Layer primitives for the segmentation network.

Every tensor is a 4-D numpy array laid out as (batch, channels, rows, cols).
Training runs in float32; all functions preserve the input dtype so that the
same code can be evaluated in float64 by the gradient checker.

Backward passes are derived by hand per layer. There is no autodiff graph.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, InternalError, ShapeError

ACTIVATIONS = ("relu", "prelu", "tanh", "mish")
PRELU_INIT = 0.25


def check_tensor(x, name="input"):
    if not isinstance(x, np.ndarray) or x.ndim != 4:
        raise ShapeError(f"{name} must be a 4-D (n, c, h, w) array")
    if x.size == 0 or min(x.shape) < 1:
        raise ShapeError(f"{name} is empty: shape {x.shape}")
    return x


@dataclass
class ConvKernel:
    """Weights shaped (out_c, in_c, kh, kw) and a bias of length out_c."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.weight.ndim != 4:
            raise ShapeError("kernel weight must be (out_c, in_c, kh, kw)")
        kh, kw = self.weight.shape[2:]
        if kh not in (1, 2, 3) or kw not in (1, 2, 3):
            raise ShapeError(f"unsupported kernel size {kh}x{kw}")
        if self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(
                f"bias length {self.bias.shape} does not match out_c={self.weight.shape[0]}"
            )

    @property
    def out_c(self):
        return self.weight.shape[0]

    @property
    def in_c(self):
        return self.weight.shape[1]


@dataclass(frozen=True)
class ActivationKind:
    name: str = "relu"
    slope: float = PRELU_INIT  # prelu only

    def __post_init__(self):
        if self.name not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.name!r}; choose from {ACTIVATIONS}")


# ---------------------------------------------------------------------------
# 2-D convolution (cross-correlation, stride 1) via im2col + GEMM
# ---------------------------------------------------------------------------

def _pad_amount(kh, padding):
    if padding == "same":
        if kh % 2 == 0:
            raise ShapeError("same padding needs an odd kernel size")
        return (kh - 1) // 2
    if padding == "valid":
        return 0
    raise ConfigError(f"padding must be 'same' or 'valid', got {padding!r}")


def im2col(x, kh, kw, pad):
    """Unfold x into a (c*kh*kw, n*oh*ow) matrix of receptive fields."""
    n, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh, ow = h + 2 * pad - kh + 1, w + 2 * pad - kw + 1
    if oh < 1 or ow < 1:
        raise ShapeError(f"input {h}x{w} smaller than kernel {kh}x{kw}")
    if kh == 1 and kw == 1:
        return x.transpose(1, 0, 2, 3).reshape(c, n * oh * ow), oh, ow
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))  # n, c, oh, ow, kh, kw
    cols = win.transpose(1, 4, 5, 0, 2, 3).reshape(c * kh * kw, n * oh * ow)
    return cols, oh, ow


def col2im(dcols, x_shape, kh, kw, pad):
    """Adjoint of im2col: scatter-add columns back onto the input grid."""
    n, c, h, w = x_shape
    oh, ow = h + 2 * pad - kh + 1, w + 2 * pad - kw + 1
    d = dcols.reshape(c, kh, kw, n, oh, ow)
    dx = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=dcols.dtype)
    for i in range(kh):
        for j in range(kw):
            dx[:, :, i:i + oh, j:j + ow] += d[:, i, j].transpose(1, 0, 2, 3)
    if pad:
        dx = dx[:, :, pad:-pad, pad:-pad]
    return np.ascontiguousarray(dx)


def conv2d_forward(x, k: ConvKernel, padding="same", return_cols=False):
    check_tensor(x)
    if x.shape[1] != k.in_c:
        raise ShapeError(f"input has {x.shape[1]} channels, kernel expects {k.in_c}")
    kh, kw = k.weight.shape[2:]
    pad = _pad_amount(kh, padding)
    cols, oh, ow = im2col(x, kh, kw, pad)
    out = k.weight.reshape(k.out_c, -1).astype(x.dtype, copy=False) @ cols
    out += k.bias.astype(x.dtype, copy=False)[:, None]
    out = out.reshape(k.out_c, x.shape[0], oh, ow).transpose(1, 0, 2, 3)
    out = np.ascontiguousarray(out)
    if return_cols:
        return out, cols
    return out


def conv2d_backward(x, k: ConvKernel, grad_out, padding="same", cols=None):
    """Returns (grad_input, ConvKernel of weight/bias gradients).

    ``cols`` may carry the im2col matrix cached by the forward pass.
    """
    check_tensor(x)
    kh, kw = k.weight.shape[2:]
    pad = _pad_amount(kh, padding)
    n, _, h, w = x.shape
    oh, ow = h + 2 * pad - kh + 1, w + 2 * pad - kw + 1
    if grad_out.shape != (n, k.out_c, oh, ow):
        raise ShapeError(
            f"grad_out shape {grad_out.shape} does not match forward output {(n, k.out_c, oh, ow)}"
        )
    if cols is None:
        cols, _, _ = im2col(x, kh, kw, pad)
    g = grad_out.transpose(1, 0, 2, 3).reshape(k.out_c, -1)
    wm = k.weight.reshape(k.out_c, -1).astype(x.dtype, copy=False)
    grad_w = (g @ cols.T).reshape(k.weight.shape)
    grad_b = g.sum(axis=1)
    dcols = wm.T @ g
    if kh == 1 and kw == 1:
        grad_x = np.ascontiguousarray(dcols.reshape(x.shape[1], n, h, w).transpose(1, 0, 2, 3))
    else:
        grad_x = col2im(dcols, x.shape, kh, kw, pad)
    return grad_x, ConvKernel(grad_w, grad_b)


# ---------------------------------------------------------------------------
# 2x2 max pooling, stride 2
# ---------------------------------------------------------------------------

def maxpool2x2_forward(x):
    """Returns (pooled, argmax) where argmax holds window offsets 0..3.

    Offsets index the window in row-major order; ties resolve to the first.
    """
    check_tensor(x)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"max pooling needs even dims, got {h}x{w}")
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(n, c, h // 2, w // 2, 4)
    idx = win.argmax(axis=-1).astype(np.uint8)
    out = np.take_along_axis(win, idx[..., None].astype(np.intp), axis=-1)[..., 0]
    return out, idx


def maxpool2x2_backward(argmax, grad_out):
    if argmax.shape != grad_out.shape:
        raise ShapeError(f"argmax {argmax.shape} vs grad_out {grad_out.shape}")
    if argmax.size and argmax.max() > 3:
        raise InternalError("max-pool argmax index out of range")
    n, c, oh, ow = grad_out.shape
    onehot = argmax[..., None] == np.arange(4, dtype=argmax.dtype)
    g = onehot * grad_out[..., None]
    g = g.reshape(n, c, oh, ow, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return np.ascontiguousarray(g.reshape(n, c, 2 * oh, 2 * ow)).astype(grad_out.dtype, copy=False)


# ---------------------------------------------------------------------------
# 2x2 transpose convolution, stride 2
# ---------------------------------------------------------------------------

def _check_upconv(x, k):
    check_tensor(x)
    if k.weight.shape[2:] != (2, 2):
        raise ShapeError("up-convolution kernel must be 2x2")
    if x.shape[1] != k.in_c:
        raise ShapeError(f"input has {x.shape[1]} channels, kernel expects {k.in_c}")


def upconv2x2_forward(x, k: ConvKernel):
    """out[n, o, 2i+a, 2j+b] = sum_c x[n, c, i, j] * w[o, c, a, b] + bias[o]."""
    _check_upconv(x, k)
    n, ci, h, w = x.shape
    co = k.out_c
    xm = x.transpose(1, 0, 2, 3).reshape(ci, -1)
    wm = k.weight.transpose(0, 2, 3, 1).reshape(co * 4, ci).astype(x.dtype, copy=False)
    y = (wm @ xm).reshape(co, 2, 2, n, h, w)
    y = y.transpose(3, 0, 4, 1, 5, 2).reshape(n, co, 2 * h, 2 * w)
    y = y + k.bias.astype(x.dtype, copy=False)[None, :, None, None]
    return np.ascontiguousarray(y)


def upconv2x2_backward(x, k: ConvKernel, grad_out):
    _check_upconv(x, k)
    n, ci, h, w = x.shape
    co = k.out_c
    if grad_out.shape != (n, co, 2 * h, 2 * w):
        raise ShapeError(f"grad_out shape {grad_out.shape} does not match {(n, co, 2 * h, 2 * w)}")
    gm = grad_out.reshape(n, co, h, 2, w, 2).transpose(1, 3, 5, 0, 2, 4).reshape(co * 4, -1)
    xm = x.transpose(1, 0, 2, 3).reshape(ci, -1)
    wm = k.weight.transpose(0, 2, 3, 1).reshape(co * 4, ci).astype(x.dtype, copy=False)
    grad_x = (wm.T @ gm).reshape(ci, n, h, w).transpose(1, 0, 2, 3)
    grad_w = (gm @ xm.T).reshape(co, 2, 2, ci).transpose(0, 3, 1, 2)
    grad_b = grad_out.sum(axis=(0, 2, 3))
    return np.ascontiguousarray(grad_x), ConvKernel(np.ascontiguousarray(grad_w), grad_b)


# ---------------------------------------------------------------------------
# Elementwise activations
# ---------------------------------------------------------------------------

def _softplus(x):
    return np.logaddexp(0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def activation_forward(x, kind: ActivationKind):
    if kind.name == "relu":
        return np.maximum(x, 0)
    if kind.name == "prelu":
        return np.where(x > 0, x, x * x.dtype.type(kind.slope))
    if kind.name == "tanh":
        return np.tanh(x)
    return x * np.tanh(_softplus(x))


def activation_backward(x, kind: ActivationKind, grad_out):
    """Gradient w.r.t. the activation input.

    For prelu use :func:`prelu_slope_grad` for the slope gradient.
    """
    if kind.name == "relu":
        return grad_out * (x > 0)
    if kind.name == "prelu":
        return grad_out * np.where(x > 0, 1, x.dtype.type(kind.slope)).astype(x.dtype)
    if kind.name == "tanh":
        t = np.tanh(x)
        return grad_out * (1 - t * t)
    tsp = np.tanh(_softplus(x))
    return grad_out * (tsp + x * (1 - tsp * tsp) * _sigmoid(x))


def prelu_slope_grad(x, grad_out):
    return float(np.sum(grad_out * np.minimum(x, 0), dtype=np.float64))


def activation_apply(x, kind: ActivationKind, direction="forward", grad_out=None):
    if direction == "forward":
        return activation_forward(x, kind)
    if direction == "backward":
        if grad_out is None:
            raise ConfigError("backward activation needs grad_out")
        return activation_backward(x, kind, grad_out)
    raise ConfigError(f"direction must be forward|backward, got {direction!r}")


# ---------------------------------------------------------------------------
# Inverted dropout
# ---------------------------------------------------------------------------

def dropout_apply(x, rate, mode="train", rng_seed=None):
    """Returns (output, mask). The mask already includes the 1/(1-rate) scale."""
    if not 0 <= rate < 1:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if mode not in ("train", "infer"):
        raise ConfigError(f"mode must be train|infer, got {mode!r}")
    if mode == "infer" or rate == 0:
        return x, None
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    keep = rng.random(x.shape, dtype=np.float32) >= rate
    mask = keep.astype(x.dtype) * x.dtype.type(1.0 / (1.0 - rate))
    return x * mask, mask


def dropout_backward(mask, grad_out):
    return grad_out if mask is None else grad_out * mask


# ---------------------------------------------------------------------------
# Skip concatenation and softmax
# ---------------------------------------------------------------------------

def concat_channels(a, b):
    check_tensor(a, "a")
    check_tensor(b, "b")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"cannot concatenate {a.shape} and {b.shape}: n/h/w differ")
    return np.concatenate([a, b], axis=1)


def split_channels(grad, c_a):
    return np.ascontiguousarray(grad[:, :c_a]), np.ascontiguousarray(grad[:, c_a:])


def softmax_channelwise(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)
