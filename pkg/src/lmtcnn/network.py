"""LMTCNN topology: one general conv block, two depthwise separable blocks,
two fully connected layers, and separate age and gender softmax heads that
share the whole trunk.

Layer plan for a ``(alpha1, alpha2)`` network::

    conv1 7x7/4 valid -> relu -> maxpool 3/2 ceil -> lrn
    dw1 3x3 same -> pw1 (-> 256*alpha1) -> relu -> maxpool 3/2 ceil
    dw2 3x3 same -> pw2 (-> 384*alpha2) -> relu -> maxpool 3/3 ceil
    flatten -> fc1 -> relu -> dropout -> fc2 -> relu -> dropout
    -> head_age, head_gender
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple

import numpy as np

from . import ops
from .errors import InputTooSmall, InvalidMultiplier, KernelLargerThanInput, ShapeMismatch
from .tensor import DTYPE, Rng, dropout_mask, rng_uniform

CONV1_KERNEL = 7
CONV1_STRIDE = 4
DS_KERNEL = 3
POOL_WINDOW = 3
LRN = ops.LrnSpec()
DROPOUT_RATE = 0.5

PARAM_LAYERS = ("conv1", "dw1", "pw1", "dw2", "pw2", "fc1", "fc2", "head_age", "head_gender")


def round_half_up(x: Fraction) -> int:
    return math.floor(x + Fraction(1, 2))


def as_fraction(value) -> Fraction:
    try:
        frac = Fraction(value) if not isinstance(value, float) else Fraction(str(value))
    except (ValueError, ZeroDivisionError) as exc:
        raise InvalidMultiplier(f"cannot parse width multiplier {value!r}") from exc
    if frac <= 0:
        raise InvalidMultiplier(f"width multiplier must be positive, got {value!r}")
    return frac


class LayerShape(NamedTuple):
    name: str
    kind: str
    input: tuple
    output: tuple


@dataclass(frozen=True)
class NetworkConfig:
    input_size: int = 227
    alpha1: Fraction = Fraction(1)
    alpha2: Fraction = Fraction(1)
    base_channels: tuple = (96, 256, 384)
    fc_width: int = 512
    age_classes: int = 8
    gender_classes: int = 2

    def __post_init__(self):
        object.__setattr__(self, "alpha1", as_fraction(self.alpha1))
        object.__setattr__(self, "alpha2", as_fraction(self.alpha2))
        object.__setattr__(self, "base_channels", tuple(int(c) for c in self.base_channels))
        if len(self.base_channels) != 3 or min(self.base_channels) < 1:
            raise ValueError(f"base_channels must be three positive ints, got {self.base_channels}")
        for name in ("fc_width", "age_classes", "gender_classes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for alpha, base in ((self.alpha1, self.base_channels[1]), (self.alpha2, self.base_channels[2])):
            if round_half_up(alpha * base) < 1:
                raise InvalidMultiplier(f"multiplier {alpha} leaves no channels from {base}")
        self.shape_table()  # raises InputTooSmall early

    @property
    def name(self) -> str:
        return f"LMTCNN-{self.alpha1}-{self.alpha2}"

    @property
    def channels(self) -> tuple[int, int, int]:
        """Output channels of conv1, pw1 and pw2."""
        c1, b1, b2 = self.base_channels
        return c1, round_half_up(self.alpha1 * b1), round_half_up(self.alpha2 * b2)

    def shape_table(self) -> list[LayerShape]:
        c1, p1, p2 = self.channels
        s = self.input_size
        try:
            h = ops.conv_output_size(s, CONV1_KERNEL, CONV1_STRIDE, "valid")
        except KernelLargerThanInput:
            raise InputTooSmall(f"input_size must be >= {CONV1_KERNEL}, got {s}") from None
        rows = []

        def add(name, kind, shape_in, shape_out):
            rows.append(LayerShape(name, kind, tuple(shape_in), tuple(shape_out)))
            return tuple(shape_out)

        x = add("conv1", "conv2d", (s, s, 3), (h, h, c1))
        x = add("relu1", "relu", x, x)
        h = ops.pool_output_size(h, POOL_WINDOW, 2, "ceil")
        x = add("pool1", "maxpool2d", x, (h, h, c1))
        x = add("lrn1", "lrn", x, x)
        x = add("dw1", "depthwise_conv2d", x, (h, h, c1))
        x = add("pw1", "pointwise_conv2d", x, (h, h, p1))
        x = add("relu2", "relu", x, x)
        h = ops.pool_output_size(h, POOL_WINDOW, 2, "ceil")
        x = add("pool2", "maxpool2d", x, (h, h, p1))
        x = add("dw2", "depthwise_conv2d", x, (h, h, p1))
        x = add("pw2", "pointwise_conv2d", x, (h, h, p2))
        x = add("relu3", "relu", x, x)
        h = ops.pool_output_size(h, POOL_WINDOW, POOL_WINDOW, "ceil")
        x = add("pool3", "maxpool2d", x, (h, h, p2))
        x = add("flatten", "flatten", x, (h * h * p2,))
        x = add("fc1", "fully_connected", x, (self.fc_width,))
        x = add("relu4", "relu", x, x)
        x = add("drop1", "dropout", x, x)
        x = add("fc2", "fully_connected", x, (self.fc_width,))
        x = add("relu5", "relu", x, x)
        x = add("drop2", "dropout", x, x)
        add("head_age", "fully_connected", x, (self.age_classes,))
        add("head_gender", "fully_connected", x, (self.gender_classes,))
        return rows

    @property
    def flat_features(self) -> int:
        return next(r.output[0] for r in self.shape_table() if r.name == "flatten")

    def param_shapes(self) -> dict[str, tuple]:
        c1, p1, p2 = self.channels
        fc = self.fc_width
        k, d = CONV1_KERNEL, DS_KERNEL
        return {
            "conv1_w": (k, k, 3, c1), "conv1_b": (c1,),
            "dw1_w": (d, d, c1), "dw1_b": (c1,),
            "pw1_w": (c1, p1), "pw1_b": (p1,),
            "dw2_w": (d, d, p1), "dw2_b": (p1,),
            "pw2_w": (p1, p2), "pw2_b": (p2,),
            "fc1_w": (self.flat_features, fc), "fc1_b": (fc,),
            "fc2_w": (fc, fc), "fc2_b": (fc,),
            "head_age_w": (fc, self.age_classes), "head_age_b": (self.age_classes,),
            "head_gender_w": (fc, self.gender_classes), "head_gender_b": (self.gender_classes,),
        }

    def fans(self, layer: str) -> tuple[int, int]:
        shape = self.param_shapes()[layer + "_w"]
        if len(shape) == 4:
            k2 = shape[0] * shape[1]
            return k2 * shape[2], k2 * shape[3]
        if len(shape) == 3:  # depthwise, multiplier 1
            k2 = shape[0] * shape[1]
            return k2, k2
        return shape


@dataclass
class ModelParams:
    config: NetworkConfig
    tensors: dict = field(default_factory=dict)

    def __post_init__(self):
        expected = self.config.param_shapes()
        if list(self.tensors) != list(expected):
            raise ShapeMismatch(f"tensor names {list(self.tensors)} != {list(expected)}")
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise ShapeMismatch(f"{name}: {self.tensors[name].shape} != {shape}")

    def __getitem__(self, name):
        return self.tensors[name]

    @property
    def dtype(self):
        return self.tensors["conv1_w"].dtype

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(self.config, {k: v.astype(dtype) for k, v in self.tensors.items()})

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    @classmethod
    def zeros(cls, config: NetworkConfig, dtype=DTYPE) -> "ModelParams":
        return cls(config, {k: np.zeros(s, dtype=dtype) for k, s in config.param_shapes().items()})

    def total_params(self) -> int:
        return sum(int(t.size) for t in self.tensors.values())


def build_lmtcnn(alpha1=1, alpha2=1, input_size: int = 227, age_classes: int = 8,
                 gender_classes: int = 2, rng: Rng | None = None, *,
                 base_channels=(96, 256, 384), fc_width: int = 512) -> ModelParams:
    """Fresh LMTCNN parameters.

    Weights are uniform in ``[-b, b]`` with ``b = sqrt(6 / (fan_in + fan_out))``,
    drawn layer by layer in definition order; biases start at zero.
    """
    config = NetworkConfig(input_size, alpha1, alpha2, base_channels, fc_width,
                           age_classes, gender_classes)
    rng = rng if rng is not None else Rng(0)
    tensors = {}
    for name, shape in config.param_shapes().items():
        if name.endswith("_b"):
            tensors[name] = np.zeros(shape, dtype=DTYPE)
        else:
            b = ops.glorot_bound(*config.fans(name[:-2]))
            tensors[name] = rng_uniform(rng, shape, -b, b, dtype=DTYPE)
    return ModelParams(config, tensors)


# -- forward / backward -------------------------------------------------------

def _prepare_images(params: ModelParams, images):
    x = np.asarray(images, dtype=params.dtype)
    single = x.ndim == 3
    if single:
        x = x[None]
    s = params.config.input_size
    if x.ndim != 4 or x.shape[1:] != (s, s, 3):
        raise ShapeMismatch(f"expected images of shape ({s}, {s}, 3), got {np.shape(images)}")
    return np.ascontiguousarray(x), single


def forward(params: ModelParams, images, training: bool = False, rng: Rng | None = None,
            keep_cache: bool = False):
    """Batched forward pass. Returns ``(age_logits, gender_logits, cache)``.

    ``cache`` holds the intermediates :func:`backward` needs (``None`` unless
    ``keep_cache``). Dropout is active only when ``training`` is set.
    """
    p = params.tensors
    x, single = _prepare_images(params, images)
    c = {"input": x}

    a = ops.conv2d_forward(x, p["conv1_w"], p["conv1_b"], stride=CONV1_STRIDE)
    c["conv1"] = a
    a = ops.relu(a)
    a, c["pool1_arg"] = ops.maxpool2d_with_argmax(a, POOL_WINDOW, 2, "ceil")
    c["pool1_in_shape"] = c["conv1"].shape
    c["pool1"] = a
    a = ops.lrn(a, LRN)
    c["lrn1"] = a
    a = ops.depthwise_conv2d_forward(a, p["dw1_w"], p["dw1_b"])
    c["dw1"] = a
    a = ops.pointwise_conv2d_forward(a, p["pw1_w"], p["pw1_b"])
    c["pw1"] = a
    a = ops.relu(a)
    a, c["pool2_arg"] = ops.maxpool2d_with_argmax(a, POOL_WINDOW, 2, "ceil")
    c["pool2"] = a
    a = ops.depthwise_conv2d_forward(a, p["dw2_w"], p["dw2_b"])
    c["dw2"] = a
    a = ops.pointwise_conv2d_forward(a, p["pw2_w"], p["pw2_b"])
    c["pw2"] = a
    a = ops.relu(a)
    a, c["pool3_arg"] = ops.maxpool2d_with_argmax(a, POOL_WINDOW, POOL_WINDOW, "ceil")
    c["pool3_shape"] = a.shape
    a = a.reshape(a.shape[0], -1)
    c["flat"] = a

    a = ops.fully_connected(a, p["fc1_w"], p["fc1_b"])
    c["fc1"] = a
    a = ops.relu(a)
    if training:
        c["mask1"] = dropout_mask(rng, a.shape, DROPOUT_RATE, dtype=a.dtype)
        a = a * c["mask1"]
    c["h1"] = a
    a = ops.fully_connected(a, p["fc2_w"], p["fc2_b"])
    c["fc2"] = a
    a = ops.relu(a)
    if training:
        c["mask2"] = dropout_mask(rng, a.shape, DROPOUT_RATE, dtype=a.dtype)
        a = a * c["mask2"]
    c["h2"] = a

    age = ops.fully_connected(a, p["head_age_w"], p["head_age_b"])
    gender = ops.fully_connected(a, p["head_gender_w"], p["head_gender_b"])
    if single:
        age, gender = age[0], gender[0]
    return age, gender, (c if keep_cache else None)


def backward(params: ModelParams, cache: dict, d_age, d_gender) -> dict:
    """Parameter gradients given gradients w.r.t. both heads' logits."""
    p = params.tensors
    c = cache
    d_age = np.atleast_2d(d_age)
    d_gender = np.atleast_2d(d_gender)
    g = {}

    dh2, g["head_age_w"], g["head_age_b"] = ops.fully_connected_backward(c["h2"], p["head_age_w"], d_age)
    dh2g, g["head_gender_w"], g["head_gender_b"] = ops.fully_connected_backward(
        c["h2"], p["head_gender_w"], d_gender)
    dh2 = dh2 + dh2g
    if "mask2" in c:
        dh2 = dh2 * c["mask2"]
    da = ops.relu_backward(c["fc2"], dh2)
    dh1, g["fc2_w"], g["fc2_b"] = ops.fully_connected_backward(c["h1"], p["fc2_w"], da)
    if "mask1" in c:
        dh1 = dh1 * c["mask1"]
    da = ops.relu_backward(c["fc1"], dh1)
    dflat, g["fc1_w"], g["fc1_b"] = ops.fully_connected_backward(c["flat"], p["fc1_w"], da)

    da = dflat.reshape(c["pool3_shape"])
    da = ops.maxpool2d_backward_from_argmax(da, c["pool3_arg"], c["pw2"].shape)
    da = ops.relu_backward(c["pw2"], da)
    da, g["pw2_w"], g["pw2_b"] = ops.pointwise_conv2d_backward(c["dw2"], p["pw2_w"], da)
    da, g["dw2_w"], g["dw2_b"] = ops.depthwise_conv2d_backward(c["pool2"], p["dw2_w"], da)
    da = ops.maxpool2d_backward_from_argmax(da, c["pool2_arg"], c["pw1"].shape)
    da = ops.relu_backward(c["pw1"], da)
    da, g["pw1_w"], g["pw1_b"] = ops.pointwise_conv2d_backward(c["dw1"], p["pw1_w"], da)
    da, g["dw1_w"], g["dw1_b"] = ops.depthwise_conv2d_backward(c["lrn1"], p["dw1_w"], da)
    da = ops.lrn_backward(c["pool1"], da, LRN)
    da = ops.maxpool2d_backward_from_argmax(da, c["pool1_arg"], c["pool1_in_shape"])
    da = ops.relu_backward(c["conv1"], da)
    _, g["conv1_w"], g["conv1_b"] = ops.conv2d_backward(c["input"], p["conv1_w"], da,
                                                       stride=CONV1_STRIDE)
    return {name: g[name].astype(params.dtype, copy=False) for name in p}


def forward_trunk_heads(params: ModelParams, image, training: bool = False, rng: Rng | None = None):
    """Logits of both heads for one image ``[S, S, 3]`` (or a batch)."""
    age, gender, _ = forward(params, image, training, rng)
    return age, gender


def trace_shapes(params: ModelParams, image) -> dict[str, tuple]:
    """Actual per-layer output shapes observed when ``image`` runs through the net."""
    _, _, c = forward(params, image, keep_cache=True)
    out = {name: c[name].shape[1:] for name in ("conv1", "pool1", "lrn1", "dw1", "pw1",
                                                 "pool2", "dw2", "pw2", "fc1", "fc2")}
    out["pool3"] = c["pool3_shape"][1:]
    out["flatten"] = c["flat"].shape[1:]
    return out


# -- predictions --------------------------------------------------------------

@dataclass(frozen=True)
class Prediction:
    age_probs: np.ndarray
    gender_probs: np.ndarray

    @property
    def age_label(self) -> int:
        return int(np.argmax(self.age_probs))  # first max wins ties

    @property
    def gender_label(self) -> int:
        return int(np.argmax(self.gender_probs))


def predict(params: ModelParams, image) -> Prediction:
    age, gender = forward_trunk_heads(params, image)
    return Prediction(ops.softmax(age), ops.softmax(gender))


def predict_batch(params: ModelParams, images) -> list[Prediction]:
    age, gender, _ = forward(params, images)
    pa, pg = ops.softmax(age), ops.softmax(gender)
    return [Prediction(a, g) for a, g in zip(pa, pg)]
