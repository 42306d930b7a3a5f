"""Layer primitives: forward passes and their exact gradients.

Spatial ops take a single feature map ``[H, W, C]`` or a batch
``[N, H, W, C]`` and return the same rank. Fully connected layers take
``[N]`` or ``[B, N]``. Arithmetic happens in the dtype of the inputs, so
float32 models run in float32 and gradient checks can use float64.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import (
    InvalidRate,
    KernelLargerThanInput,
    ShapeMismatch,
    WindowLargerThanInput,
)
from .tensor import Rng, dropout_mask

CONV_PADDINGS = ("valid", "same")
POOL_MODES = ("valid", "ceil")


@dataclass(frozen=True)
class ConvSpec:
    kernel_size: int
    stride: int = 1
    padding: str = "valid"
    in_channels: int = 1
    out_channels: int = 1
    channel_multiplier: int = 1

    def __post_init__(self):
        if self.kernel_size < 1 or self.stride < 1:
            raise ValueError("kernel_size and stride must be >= 1")
        if self.padding not in CONV_PADDINGS:
            raise ValueError(f"padding must be one of {CONV_PADDINGS}")

    def output_size(self, n: int) -> int:
        return conv_output_size(n, self.kernel_size, self.stride, self.padding)


@dataclass(frozen=True)
class LrnSpec:
    radius: int = 5
    bias: float = 2.0
    alpha: float = 1e-4
    beta: float = 0.75

    def __post_init__(self):
        if self.radius < 0 or self.bias <= 0 or self.alpha <= 0 or self.beta <= 0:
            raise ValueError(f"invalid LRN parameters {self}")


# -- output-size rules -------------------------------------------------------

def conv_output_size(n: int, k: int, stride: int, padding: str = "valid") -> int:
    """``valid``: floor((n-k)/s)+1. ``same``: ceil(n/s), zero padded."""
    if padding == "valid":
        if n < k:
            raise KernelLargerThanInput(f"kernel {k} larger than input {n}")
        return (n - k) // stride + 1
    if padding == "same":
        return -(-n // stride)
    raise ValueError(f"unknown padding {padding!r}")


def same_padding(n: int, k: int, stride: int) -> int:
    """Leading pad for ``same`` padding; the remainder goes after."""
    out = -(-n // stride)
    total = max((out - 1) * stride + k - n, 0)
    return total // 2


def pool_output_size(n: int, k: int, stride: int, mode: str = "valid") -> int:
    """``valid``: floor((n-k)/s)+1. ``ceil``: ceil((n-k)/s)+1.

    In ceil mode the trailing windows may overhang the input (the overhang
    counts as -inf). A window that would start past the last input cell is
    dropped, and an input smaller than the window yields one window.
    """
    if mode == "valid":
        if n < k:
            raise WindowLargerThanInput(f"window {k} larger than input {n}")
        return (n - k) // stride + 1
    if mode == "ceil":
        out = -(-max(n - k, 0) // stride) + 1
        if (out - 1) * stride >= n:
            out -= 1
        return out
    raise ValueError(f"unknown pooling mode {mode!r}")


# -- helpers ------------------------------------------------------------------

def _as_batch(x, rank):
    x = np.asarray(x)
    if x.ndim == rank - 1:
        return np.ascontiguousarray(x[None]), True
    if x.ndim != rank:
        raise ShapeMismatch(f"expected rank {rank - 1} or {rank}, got shape {x.shape}")
    return np.ascontiguousarray(x), False


def _unbatch(y, squeezed):
    return y[0] if squeezed else y


def _conv_geometry(h, w, k, stride, padding):
    ho = conv_output_size(h, k, stride, padding)
    wo = conv_output_size(w, k, stride, padding)
    if padding == "same":
        return ho, wo, same_padding(h, k, stride), same_padding(w, k, stride)
    return ho, wo, 0, 0


# -- general convolution ------------------------------------------------------

def conv2d_forward(x, kernel, bias, stride: int = 1, padding: str = "valid"):
    x, sq = _as_batch(x, 4)
    kernel = np.asarray(kernel)
    if kernel.ndim != 4 or kernel.shape[0] != kernel.shape[1]:
        raise ShapeMismatch(f"kernel must be [K, K, C_I, C_O], got {kernel.shape}")
    k, _, ci, co = kernel.shape
    if x.shape[3] != ci:
        raise ShapeMismatch(f"input has {x.shape[3]} channels, kernel expects {ci}")
    if np.shape(bias) != (co,):
        raise ShapeMismatch(f"bias must have shape ({co},), got {np.shape(bias)}")
    n, h, w, _ = x.shape
    ho, wo, pt, pl = _conv_geometry(h, w, k, stride, padding)
    cols = kernels.backend.im2col(x, k, stride, pt, pl, ho, wo)
    out = cols.reshape(n * ho * wo, k * k * ci) @ kernel.reshape(k * k * ci, co)
    out += bias
    return _unbatch(out.reshape(n, ho, wo, co), sq)


def conv2d_backward(x, kernel, dout, stride: int = 1, padding: str = "valid"):
    """Returns ``(dx, dkernel, dbias)``."""
    x, sq = _as_batch(x, 4)
    dout, _ = _as_batch(dout, 4)
    k, _, ci, co = kernel.shape
    n, h, w, _ = x.shape
    ho, wo, pt, pl = _conv_geometry(h, w, k, stride, padding)
    if dout.shape != (n, ho, wo, co):
        raise ShapeMismatch(f"upstream gradient {dout.shape} != output {(n, ho, wo, co)}")
    g = dout.reshape(n * ho * wo, co)
    cols = kernels.backend.im2col(x, k, stride, pt, pl, ho, wo).reshape(n * ho * wo, k * k * ci)
    dkernel = (cols.T @ g).reshape(kernel.shape)
    dbias = g.sum(axis=0)
    dcols = np.ascontiguousarray((g @ kernel.reshape(k * k * ci, co).T).reshape(n, ho, wo, k, k, ci))
    dx = kernels.backend.col2im(dcols, h, w, stride, pt, pl)
    return _unbatch(dx, sq), dkernel, dbias


# -- depthwise / pointwise ----------------------------------------------------

def _check_depthwise(x, kernel, bias):
    kernel = np.ascontiguousarray(kernel)
    if kernel.ndim != 3 or kernel.shape[0] != kernel.shape[1]:
        raise ShapeMismatch(f"depthwise kernel must be [K, K, C*m], got {kernel.shape}")
    c = x.shape[3]
    if kernel.shape[2] % c:
        raise ShapeMismatch(f"kernel channels {kernel.shape[2]} not a multiple of {c}")
    if bias is not None and np.shape(bias) != (kernel.shape[2],):
        raise ShapeMismatch(f"bias must have shape ({kernel.shape[2]},)")
    return kernel, kernel.shape[2] // c


def depthwise_conv2d_forward(x, kernel, bias, stride: int = 1, padding: str = "same"):
    """Per-channel 2-D convolution. Output channel ``c*m + j`` filters input channel ``c``."""
    x, sq = _as_batch(x, 4)
    kernel, mult = _check_depthwise(x, kernel, bias)
    n, h, w, _ = x.shape
    k = kernel.shape[0]
    ho, wo, pt, pl = _conv_geometry(h, w, k, stride, padding)
    out = kernels.backend.depthwise_forward(x, kernel.astype(x.dtype, copy=False),
                                            mult, stride, pt, pl, ho, wo)
    out += bias
    return _unbatch(out, sq)


def depthwise_conv2d_backward(x, kernel, dout, stride: int = 1, padding: str = "same"):
    x, sq = _as_batch(x, 4)
    dout, _ = _as_batch(dout, 4)
    kernel, mult = _check_depthwise(x, kernel, None)
    n, h, w, _ = x.shape
    k = kernel.shape[0]
    ho, wo, pt, pl = _conv_geometry(h, w, k, stride, padding)
    if dout.shape != (n, ho, wo, kernel.shape[2]):
        raise ShapeMismatch(f"upstream gradient {dout.shape} does not match output")
    dx, dk = kernels.backend.depthwise_backward(x, kernel, dout.astype(x.dtype, copy=False),
                                                mult, stride, pt, pl)
    return _unbatch(dx, sq), dk, dout.sum(axis=(0, 1, 2))


def pointwise_conv2d_forward(x, kernel, bias):
    x = np.asarray(x)
    kernel = np.asarray(kernel)
    if kernel.ndim != 2 or x.shape[-1] != kernel.shape[0]:
        raise ShapeMismatch(f"input channels {x.shape[-1]} vs kernel {kernel.shape}")
    if np.shape(bias) != (kernel.shape[1],):
        raise ShapeMismatch(f"bias must have shape ({kernel.shape[1]},)")
    out = x.reshape(-1, kernel.shape[0]) @ kernel + bias
    return out.reshape(x.shape[:-1] + (kernel.shape[1],))


def pointwise_conv2d_backward(x, kernel, dout):
    x = np.asarray(x)
    ci, co = kernel.shape
    g = np.asarray(dout).reshape(-1, co)
    xf = x.reshape(-1, ci)
    return (g @ kernel.T).reshape(x.shape), xf.T @ g, g.sum(axis=0)


# -- activations, pooling, normalization -------------------------------------

def relu(x):
    return np.maximum(x, 0)


def relu_backward(x, dout):
    # subgradient 0 at x == 0
    return np.where(np.asarray(x) > 0, dout, 0).astype(np.result_type(dout), copy=False)


def maxpool2d_with_argmax(x, window: int, stride: int, mode: str = "valid"):
    x, sq = _as_batch(x, 4)
    if window < 1 or stride < 1:
        raise ValueError("window and stride must be >= 1")
    _, h, w, _ = x.shape
    ho = pool_output_size(h, window, stride, mode)
    wo = pool_output_size(w, window, stride, mode)
    out, arg = kernels.backend.maxpool_forward(x, window, stride, ho, wo)
    return _unbatch(out, sq), _unbatch(arg, sq)


def maxpool2d(x, window: int, stride: int, mode: str = "valid"):
    return maxpool2d_with_argmax(x, window, stride, mode)[0]


def maxpool2d_backward_from_argmax(dout, arg, input_shape):
    dout, sq = _as_batch(dout, 4)
    arg, _ = _as_batch(arg, 4)
    h, w = input_shape[-3], input_shape[-2]
    dx = kernels.backend.maxpool_backward(dout, arg, h, w)
    return _unbatch(dx, sq)


def maxpool2d_backward(x, dout, window: int, stride: int, mode: str = "valid"):
    _, arg = maxpool2d_with_argmax(x, window, stride, mode)
    return maxpool2d_backward_from_argmax(dout, arg, np.shape(x))


def _channel_window_sum(v, radius):
    c = v.shape[-1]
    s = np.zeros_like(v)
    for off in range(-radius, radius + 1):
        lo, hi = max(0, -off), min(c, c - off)
        if lo < hi:
            s[..., lo:hi] += v[..., lo + off:hi + off]
    return s


def lrn(x, spec: LrnSpec = LrnSpec()):
    x = np.asarray(x)
    d = spec.bias + spec.alpha * _channel_window_sum(x * x, spec.radius)
    return x * d ** -spec.beta


def lrn_backward(x, dout, spec: LrnSpec = LrnSpec()):
    x = np.asarray(x)
    d = spec.bias + spec.alpha * _channel_window_sum(x * x, spec.radius)
    scale = d ** -spec.beta
    inner = _channel_window_sum(dout * x * scale / d, spec.radius)
    return dout * scale - (2 * spec.alpha * spec.beta) * x * inner


# -- dense layers -------------------------------------------------------------

def fully_connected(x, weights, bias):
    x = np.asarray(x)
    weights = np.asarray(weights)
    if weights.ndim != 2 or x.shape[-1] != weights.shape[0] or x.ndim > 2:
        raise ShapeMismatch(f"input {x.shape} incompatible with weights {weights.shape}")
    if np.shape(bias) != (weights.shape[1],):
        raise ShapeMismatch(f"bias must have shape ({weights.shape[1]},)")
    return x @ weights + bias


def fully_connected_backward(x, weights, dout):
    x = np.asarray(x)
    dout = np.asarray(dout)
    x2 = x.reshape(-1, weights.shape[0])
    g2 = dout.reshape(-1, weights.shape[1])
    return (g2 @ weights.T).reshape(x.shape), x2.T @ g2, g2.sum(axis=0)


def softmax(logits, axis: int = -1):
    logits = np.asarray(logits)
    z = np.exp(logits - logits.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


def softmax_backward(probs, dout, axis: int = -1):
    return probs * (dout - (dout * probs).sum(axis=axis, keepdims=True))


def dropout(x, rate: float, training: bool, rng: Rng | None = None):
    if not 0.0 <= rate < 1.0:
        raise InvalidRate(f"rate must be in [0, 1), got {rate}")
    x = np.asarray(x)
    if not training or rate == 0.0:
        return x
    return x * dropout_mask(rng, x.shape, rate, dtype=x.dtype)


def dropout_backward(mask, dout):
    return dout * mask


# -- generic dispatch ---------------------------------------------------------

def _wrap(fn, n_params):
    def back(upstream, *inputs, **options):
        res = fn(*inputs, upstream, **options)
        if n_params == 0:
            return res, {}
        dx, *grads = res
        return dx, dict(zip(("weight", "bias"), grads))
    return back


_BACKWARD = {
    "conv2d": _wrap(conv2d_backward, 2),
    "depthwise_conv2d": _wrap(depthwise_conv2d_backward, 2),
    "pointwise_conv2d": _wrap(pointwise_conv2d_backward, 2),
    "fully_connected": _wrap(fully_connected_backward, 2),
    "relu": _wrap(relu_backward, 0),
    "maxpool2d": _wrap(maxpool2d_backward, 0),
    "lrn": _wrap(lrn_backward, 0),
    "softmax": _wrap(softmax_backward, 0),
    "dropout": _wrap(dropout_backward, 0),
}

LAYER_KINDS = tuple(_BACKWARD)


def layer_backward(kind: str, upstream, *inputs, **options):
    """Gradient of one layer given its forward inputs.

    ``inputs`` are what the forward call received, minus bias; for softmax it
    is the forward output, for dropout the multiplier mask. Returns
    ``(input_gradient, {"weight": ..., "bias": ...})`` with an empty dict for
    parameter-free layers.
    """
    try:
        back = _BACKWARD[kind]
    except KeyError:
        raise ValueError(f"unknown layer kind {kind!r}; expected one of {LAYER_KINDS}") from None
    return back(upstream, *inputs, **options)


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))
