"""U-Net encoder/decoder built from :mod:`skyrmseg.tensor_core` primitives.

Parameters live in an ordered ``dict`` mapping names such as
``"enc1.conv2.weight"`` to float32 arrays. Encoder level ``i`` (level
``depth`` is the bottleneck) emits ``base_channels * 2**i`` channels; the
decoder mirrors it and a 1x1 head maps to ``num_classes`` logits.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor_core as tc
from .errors import ConfigError, InternalError, ShapeError

BACKGROUND, SKYRMION, DEFECT = 0, 1, 2
CLASS_NAMES = ("background", "skyrmion", "defect")


@dataclass
class UNetConfig:
    depth: int = 3
    base_channels: int = 16
    num_classes: int = 3
    activation: str = "relu"
    dropout_rate: float = 0.05
    input_size: tuple = (128, 128)
    in_channels: int = 1

    def __post_init__(self):
        self.input_size = tuple(int(v) for v in self.input_size)
        self.validate()

    def validate(self):
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if self.base_channels < 1:
            raise ConfigError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.num_classes not in (2, 3):
            raise ConfigError(f"num_classes must be 2 or 3, got {self.num_classes}")
        if self.activation not in tc.ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if len(self.input_size) != 2:
            raise ConfigError("input_size must be (h, w)")
        step = 2 ** self.depth
        h, w = self.input_size
        if h < step or w < step or h % step or w % step:
            raise ConfigError(f"input_size {h}x{w} is not divisible by 2**depth = {step}")

    def channels(self, level):
        return self.base_channels * 2 ** level

    def to_dict(self):
        return asdict(self)


def param_shapes(config: UNetConfig):
    """Ordered mapping of parameter name -> shape implied by ``config``."""
    shapes = {}
    prelu = config.activation == "prelu"

    def block(prefix, cin, cout):
        shapes[f"{prefix}.conv1.weight"] = (cout, cin, 3, 3)
        shapes[f"{prefix}.conv1.bias"] = (cout,)
        if prelu:
            shapes[f"{prefix}.act1.slope"] = (1,)
        shapes[f"{prefix}.conv2.weight"] = (cout, cout, 3, 3)
        shapes[f"{prefix}.conv2.bias"] = (cout,)
        if prelu:
            shapes[f"{prefix}.act2.slope"] = (1,)

    cin = config.in_channels
    for i in range(config.depth + 1):
        block(f"enc{i}", cin, config.channels(i))
        cin = config.channels(i)
    for i in reversed(range(config.depth)):
        shapes[f"up{i}.weight"] = (config.channels(i), config.channels(i + 1), 2, 2)
        shapes[f"up{i}.bias"] = (config.channels(i),)
        block(f"dec{i}", 2 * config.channels(i), config.channels(i))
    shapes["head.weight"] = (config.num_classes, config.base_channels, 1, 1)
    shapes["head.bias"] = (config.num_classes,)
    return shapes


def init_params(config: UNetConfig, seed=0):
    """He-normal weights (std = sqrt(2 / fan_in)), zero biases, prelu slopes 0.25."""
    config.validate()
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".weight"):
            fan_in = shape[1] * shape[2] * shape[3]
            w = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
            params[name] = w.astype(np.float32)
        elif name.endswith(".slope"):
            params[name] = np.full(shape, tc.PRELU_INIT, dtype=np.float32)
        else:
            params[name] = np.zeros(shape, dtype=np.float32)
    return params


def zeros_like_params(params):
    return {k: np.zeros_like(v) for k, v in params.items()}


def cast_params(params, dtype):
    return {k: v.astype(dtype) for k, v in params.items()}


def _kernel(params, prefix):
    return tc.ConvKernel(params[f"{prefix}.weight"], params[f"{prefix}.bias"])


def _act(params, config, name):
    if config.activation == "prelu":
        return tc.ActivationKind("prelu", float(params[f"{name}.slope"][0]))
    return tc.ActivationKind(config.activation)


class Tape:
    """Intermediates recorded by :func:`forward`, consumed once by :func:`backward`."""

    def __init__(self, params, config, dtype):
        self.params = params
        self.config = config
        self.dtype = dtype
        self.blocks = {}
        self.pools = {}
        self.ups = {}
        self.head = None
        self.consumed = False


def _block_forward(params, config, prefix, x, mode, rng, tape):
    k1 = _kernel(params, f"{prefix}.conv1")
    act1 = _act(params, config, f"{prefix}.act1")
    z1, cols1 = tc.conv2d_forward(x, k1, "same", return_cols=True)
    a1 = tc.activation_forward(z1, act1)
    k2 = _kernel(params, f"{prefix}.conv2")
    act2 = _act(params, config, f"{prefix}.act2")
    z2, cols2 = tc.conv2d_forward(a1, k2, "same", return_cols=True)
    a2 = tc.activation_forward(z2, act2)
    out, mask = tc.dropout_apply(a2, config.dropout_rate, mode, rng)
    if tape is not None:
        tape.blocks[prefix] = (x, cols1, z1, a1, cols2, z2, mask)
    return out


def _block_backward(params, config, prefix, cache, g, grads):
    x, cols1, z1, a1, cols2, z2, mask = cache
    g = tc.dropout_backward(mask, g)
    act2 = _act(params, config, f"{prefix}.act2")
    if config.activation == "prelu":
        grads[f"{prefix}.act2.slope"][0] += tc.prelu_slope_grad(z2, g)
    g = tc.activation_backward(z2, act2, g)
    g, dk = tc.conv2d_backward(a1, _kernel(params, f"{prefix}.conv2"), g, "same", cols=cols2)
    grads[f"{prefix}.conv2.weight"] += dk.weight
    grads[f"{prefix}.conv2.bias"] += dk.bias
    act1 = _act(params, config, f"{prefix}.act1")
    if config.activation == "prelu":
        grads[f"{prefix}.act1.slope"][0] += tc.prelu_slope_grad(z1, g)
    g = tc.activation_backward(z1, act1, g)
    g, dk = tc.conv2d_backward(x, _kernel(params, f"{prefix}.conv1"), g, "same", cols=cols1)
    grads[f"{prefix}.conv1.weight"] += dk.weight
    grads[f"{prefix}.conv1.bias"] += dk.bias
    return g


def check_input(config: UNetConfig, x):
    if x.ndim == 2:
        x = x[None, None]
    elif x.ndim == 3:
        x = x[:, None]
    tc.check_tensor(x)
    if x.shape[1] != config.in_channels:
        raise ShapeError(f"expected {config.in_channels} input channel(s), got {x.shape[1]}")
    step = 2 ** config.depth
    h, w = x.shape[2:]
    if h % step or w % step:
        raise ShapeError(f"input {h}x{w} is not divisible by 2**depth = {step}")
    return x


def forward_logits(params, config: UNetConfig, x, mode="infer", seed=0, record=True):
    """Returns (logits, tape). ``tape`` is None when ``record`` is False."""
    x = check_input(config, x)
    dtype = params["head.weight"].dtype
    x = x.astype(dtype, copy=False)
    rng = np.random.default_rng(seed) if mode == "train" else None
    tape = Tape(params, config, dtype) if record else None

    skips = []
    h = x
    for i in range(config.depth):
        h = _block_forward(params, config, f"enc{i}", h, mode, rng, tape)
        skips.append(h)
        h, idx = tc.maxpool2x2_forward(h)
        if tape is not None:
            tape.pools[i] = idx
    h = _block_forward(params, config, f"enc{config.depth}", h, mode, rng, tape)
    for i in reversed(range(config.depth)):
        if tape is not None:
            tape.ups[i] = h
        u = tc.upconv2x2_forward(h, _kernel(params, f"up{i}"))
        h = tc.concat_channels(skips[i], u)
        h = _block_forward(params, config, f"dec{i}", h, mode, rng, tape)
    logits, cols = tc.conv2d_forward(h, _kernel(params, "head"), "same", return_cols=True)
    if tape is not None:
        tape.head = (h, cols)
    return logits, tape


def forward(params, config: UNetConfig, x, mode="infer", seed=0):
    """Returns (probabilities, tape); probabilities are (n, num_classes, h, w)."""
    logits, tape = forward_logits(params, config, x, mode, seed)
    return tc.softmax_channelwise(logits), tape


def backward(tape: Tape, grad_logits):
    """Parameter gradients given dLoss/dLogits (the fused softmax+CE gradient)."""
    if tape is None or tape.consumed or tape.head is None:
        raise InternalError("stale or empty tape: run forward again before backward")
    tape.consumed = True
    params, config = tape.params, tape.config
    grads = zeros_like_params(params)
    grad_logits = np.asarray(grad_logits, dtype=tape.dtype)

    h, cols = tape.head
    g, dk = tc.conv2d_backward(h, _kernel(params, "head"), grad_logits, "same", cols=cols)
    grads["head.weight"] += dk.weight
    grads["head.bias"] += dk.bias

    skip_grads = {}
    for i in range(config.depth):
        g = _block_backward(params, config, f"dec{i}", tape.blocks[f"dec{i}"], g, grads)
        g_skip, g_up = tc.split_channels(g, config.channels(i))
        skip_grads[i] = g_skip
        g, dk = tc.upconv2x2_backward(tape.ups[i], _kernel(params, f"up{i}"), g_up)
        grads[f"up{i}.weight"] += dk.weight
        grads[f"up{i}.bias"] += dk.bias
    g = _block_backward(params, config, f"enc{config.depth}",
                        tape.blocks[f"enc{config.depth}"], g, grads)
    for i in reversed(range(config.depth)):
        g = tc.maxpool2x2_backward(tape.pools[i], g)
        # the encoder output feeds both the pool and the skip concat
        g = g + skip_grads[i]
        g = _block_backward(params, config, f"enc{i}", tape.blocks[f"enc{i}"], g, grads)
    tape.blocks.clear()
    return grads


def predict_proba(params, config: UNetConfig, image, batch_size=8):
    """Infer-mode probabilities for a 2-D image or an (n, h, w) stack."""
    x = check_input(config, np.asarray(image))
    out = []
    for s in range(0, x.shape[0], batch_size):
        logits, _ = forward_logits(params, config, x[s:s + batch_size], "infer", record=False)
        out.append(tc.softmax_channelwise(logits))
    return np.concatenate(out, axis=0)


def argmax_mask(probs):
    """Per-pixel argmax over channels; ties go to the lower class index."""
    return np.argmax(probs, axis=1).astype(np.uint8)


def predict(params, config: UNetConfig, image):
    """ClassMask for a 2-D image (or an (n, h, w) stack of masks)."""
    image = np.asarray(image)
    mask = argmax_mask(predict_proba(params, config, image))
    return mask[0] if image.ndim == 2 else mask


@dataclass
class Model:
    """Convenience bundle of config and parameters."""

    config: UNetConfig
    params: dict = field(repr=False)

    def predict_proba(self, image):
        return predict_proba(self.params, self.config, image)

    def predict(self, image):
        return predict(self.params, self.config, image)
