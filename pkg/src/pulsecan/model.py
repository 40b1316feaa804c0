"""Two-branch convolutional attention network.

The appearance branch looks at a standardized frame and emits a spatial
attention mask at two depths; the motion branch consumes the normalized
frame difference and is gated elementwise by those masks.  The pooled motion
features feed a fully-connected layer and either a linear head (pulse
derivative regression, used for pretraining) or a sigmoid head (real/fake
score).

Weight files are binary: magic ``DFOP-W\\0``, u16 version, the config as
little-endian u32 fields, then each parameter as name / rank / extents /
frozen flag / row-major little-endian float32 payload.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from .tensor_ops import (
    Parameter,
    ShapeError,
    activation,
    activation_backward,
    avgpool2d,
    avgpool2d_backward,
    conv2d_backward,
    conv2d_forward,
    dense,
    dense_backward,
)

WEIGHTS_MAGIC = b"DFOP-W\0"
WEIGHTS_VERSION = 1
_HEAD_CODES = {"regression": 0, "classification": 1}
_HEAD_NAMES = {v: k for k, v in _HEAD_CODES.items()}

# Trunk = everything learned during pulse pretraining; fc + head stay
# trainable after freeze_for_transfer.
TRUNK_NAMES = (
    "appearance_conv1_kernel",
    "appearance_conv1_bias",
    "attention_conv1_kernel",
    "attention_conv1_bias",
    "appearance_conv2_kernel",
    "appearance_conv2_bias",
    "attention_conv2_kernel",
    "attention_conv2_bias",
    "motion_conv1_kernel",
    "motion_conv1_bias",
    "motion_conv2_kernel",
    "motion_conv2_bias",
)
HEAD_NAMES = ("fc_weight", "fc_bias", "head_weight", "head_bias")
PARAM_ORDER = TRUNK_NAMES + HEAD_NAMES


class WeightFileError(ValueError):
    """Weight file is malformed, truncated, or inconsistent."""


@dataclass(frozen=True)
class CanConfig:
    input_side: int = 36
    input_channels: int = 3
    conv_filters: tuple = (32, 64)
    kernel_size: int = 3
    pool_window: int = 2
    fc_size: int = 128
    head: str = "regression"

    def __post_init__(self):
        if self.head not in _HEAD_CODES:
            raise ValueError(f"unknown head {self.head!r}")
        if self.kernel_size % 2 != 1:
            raise ValueError("kernel_size must be odd (same-padding trunk)")
        if self.input_side < self.kernel_size:
            raise ValueError("input_side must be >= kernel_size")
        if self.input_side % self.pool_window:
            raise ValueError("pool_window must divide input_side")
        if (self.input_side // self.pool_window) % self.pool_window:
            raise ValueError("pool_window must divide the post-pool extent too")

    @property
    def padding(self):
        return (self.kernel_size - 1) // 2

    @property
    def side_after_pool1(self):
        return self.input_side // self.pool_window

    @property
    def side_after_pool2(self):
        return self.side_after_pool1 // self.pool_window

    @property
    def flat_size(self):
        return self.conv_filters[1] * self.side_after_pool2 ** 2


def parameter_shapes(config):
    """Name -> shape for every parameter implied by the config."""
    c = config.input_channels
    n1, n2 = config.conv_filters
    k = config.kernel_size
    return {
        "appearance_conv1_kernel": (n1, c, k, k),
        "appearance_conv1_bias": (n1,),
        "attention_conv1_kernel": (1, n1, 1, 1),
        "attention_conv1_bias": (1,),
        "appearance_conv2_kernel": (n2, n1, k, k),
        "appearance_conv2_bias": (n2,),
        "attention_conv2_kernel": (1, n2, 1, 1),
        "attention_conv2_bias": (1,),
        "motion_conv1_kernel": (n1, c, k, k),
        "motion_conv1_bias": (n1,),
        "motion_conv2_kernel": (n2, n1, k, k),
        "motion_conv2_bias": (n2,),
        "fc_weight": (config.fc_size, config.flat_size),
        "fc_bias": (config.fc_size,),
        "head_weight": (1, config.fc_size),
        "head_bias": (1,),
    }


@dataclass
class CanWeights:
    config: CanConfig
    params: dict

    def __post_init__(self):
        shapes = parameter_shapes(self.config)
        for name, shape in shapes.items():
            if name not in self.params:
                raise ShapeError(f"missing parameter {name}")
            if self.params[name].value.shape != shape:
                raise ShapeError(
                    f"parameter {name} has shape {self.params[name].value.shape}, "
                    f"expected {shape}"
                )

    @property
    def head(self):
        return self.config.head

    def param_list(self):
        return [self.params[n] for n in PARAM_ORDER]

    def trainable_scalars(self):
        return sum(p.value.size for p in self.params.values() if not p.frozen)

    def copy(self):
        return CanWeights(
            self.config,
            {
                n: Parameter(p.value.copy(), p.grad.copy(), p.frozen)
                for n, p in self.params.items()
            },
        )


def _glorot(rng, shape):
    fan_out = shape[0] * int(np.prod(shape[2:])) if len(shape) > 1 else shape[0]
    fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_weights(config, seed):
    """Seeded Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith("_bias"):
            params[name] = Parameter(np.zeros(shape))
        else:
            params[name] = Parameter(_glorot(rng, shape))
    return CanWeights(config, params)


def attention_mask(features, kernel, bias):
    """Normalized spatial mask from a 1x1 conv: (H*W/2) * sigmoid(z) / sum.

    Accepts (C,H,W) or (N,C,H,W); the mask always sums to H*W/2 per sample.
    """
    z = conv2d_forward(features, kernel, bias)
    s = activation(z, "sigmoid")
    hw = s.shape[-2] * s.shape[-1]
    if s.ndim == 4:
        total = s.sum(axis=(1, 2, 3), keepdims=True)
    else:
        total = s.sum()
    return 0.5 * hw * s / total


def _attention_forward(features, kernel, bias):
    z = conv2d_forward(features, kernel, bias)
    s = activation(z, "sigmoid")
    hw = s.shape[-2] * s.shape[-1]
    total = s.sum(axis=(1, 2, 3), keepdims=True)
    mask = 0.5 * hw * s / total
    return mask, {"features": features, "s": s, "total": total, "hw": hw}


def _attention_backward(grad_mask, cache, kernel):
    """Backprop through the normalization, sigmoid, and 1x1 conv."""
    s, total, hw = cache["s"], cache["total"], cache["hw"]
    inner = (grad_mask * s).sum(axis=(1, 2, 3), keepdims=True)
    grad_s = 0.5 * hw * (grad_mask / total - inner / total ** 2)
    grad_z = activation_backward(grad_s, s, "sigmoid")
    grad_feat, grad_k, grad_b = conv2d_backward(grad_z, cache["features"], kernel)
    return grad_feat, grad_k, grad_b


def forward_batch(motion, appearance, weights, want_cache=False):
    """Head output for a batch: (N,) scores (classification) or values.

    Inputs are (N, C, L, L); single samples go through ``forward`` /
    ``forward_hr``.
    """
    cfg = weights.config
    P = weights.params
    pad = cfg.padding
    pw = cfg.pool_window
    n = motion.shape[0]
    expect = (n, cfg.input_channels, cfg.input_side, cfg.input_side)
    if motion.shape != expect or appearance.shape != expect:
        raise ShapeError(
            f"inputs must be {expect}, got motion {motion.shape}, "
            f"appearance {appearance.shape}"
        )

    cols = {"appearance_conv1": [], "appearance_conv2": [],
            "motion_conv1": [], "motion_conv2": []}
    a1z = conv2d_forward(appearance, P["appearance_conv1_kernel"].value,
                         P["appearance_conv1_bias"].value, padding=pad,
                         cols_out=cols["appearance_conv1"])
    a1 = activation(a1z, "tanh")
    mask1, att1_cache = _attention_forward(
        a1, P["attention_conv1_kernel"].value, P["attention_conv1_bias"].value)
    a1p = avgpool2d(a1, pw)
    a2z = conv2d_forward(a1p, P["appearance_conv2_kernel"].value,
                         P["appearance_conv2_bias"].value, padding=pad,
                         cols_out=cols["appearance_conv2"])
    a2 = activation(a2z, "tanh")
    mask2, att2_cache = _attention_forward(
        a2, P["attention_conv2_kernel"].value, P["attention_conv2_bias"].value)

    m1 = activation(conv2d_forward(motion, P["motion_conv1_kernel"].value,
                                   P["motion_conv1_bias"].value, padding=pad,
                                   cols_out=cols["motion_conv1"]), "tanh")
    g1 = m1 * mask1
    p1 = avgpool2d(g1, pw)
    m2 = activation(conv2d_forward(p1, P["motion_conv2_kernel"].value,
                                   P["motion_conv2_bias"].value, padding=pad,
                                   cols_out=cols["motion_conv2"]), "tanh")
    g2 = m2 * mask2
    p2 = avgpool2d(g2, pw)
    flat = p2.reshape(n, -1)
    f = activation(dense(flat, P["fc_weight"].value, P["fc_bias"].value), "tanh")
    out = dense(f, P["head_weight"].value, P["head_bias"].value)[:, 0]
    if cfg.head == "classification":
        result = activation(out, "sigmoid")
    else:
        result = out
    if not want_cache:
        return result
    cache = {
        "motion": motion, "appearance": appearance,
        "a1": a1, "att1": att1_cache, "mask1": mask1, "a1p": a1p,
        "a2": a2, "att2": att2_cache, "mask2": mask2,
        "m1": m1, "g1": g1, "p1": p1, "m2": m2, "p2_flat": flat,
        "cols": cols,
        "f": f, "out": out, "result": result,
    }
    return result, cache


def backward_batch(grad_result, cache, weights):
    """Accumulate parameter gradients for a cached forward_batch call."""
    cfg = weights.config
    P = weights.params
    pad = cfg.padding
    pw = cfg.pool_window
    grad_result = np.asarray(grad_result, dtype=np.float64)

    if cfg.head == "classification":
        grad_out = activation_backward(grad_result, cache["result"], "sigmoid")
    else:
        grad_out = grad_result
    grad_f, gw, gb = dense_backward(grad_out[:, None], cache["f"],
                                    P["head_weight"].value)
    P["head_weight"].grad += gw
    P["head_bias"].grad += gb
    grad_fc_pre = activation_backward(grad_f, cache["f"], "tanh")
    grad_flat, gw, gb = dense_backward(grad_fc_pre, cache["p2_flat"],
                                       P["fc_weight"].value)
    P["fc_weight"].grad += gw
    P["fc_bias"].grad += gb

    n = grad_flat.shape[0]
    side2 = cfg.side_after_pool2
    grad_p2 = grad_flat.reshape(n, cfg.conv_filters[1], side2, side2)
    grad_g2 = avgpool2d_backward(grad_p2, pw)
    grad_m2 = grad_g2 * cache["mask2"]
    grad_mask2 = (grad_g2 * cache["m2"]).sum(axis=1, keepdims=True)
    grad_m2_pre = activation_backward(grad_m2, cache["m2"], "tanh")
    grad_p1, gw, gb = conv2d_backward(
        grad_m2_pre, None, P["motion_conv2_kernel"].value, padding=pad,
        cached_cols=cache["cols"]["motion_conv2"][0])
    P["motion_conv2_kernel"].grad += gw
    P["motion_conv2_bias"].grad += gb
    grad_g1 = avgpool2d_backward(grad_p1, pw)
    grad_m1 = grad_g1 * cache["mask1"]
    grad_mask1 = (grad_g1 * cache["m1"]).sum(axis=1, keepdims=True)
    grad_m1_pre = activation_backward(grad_m1, cache["m1"], "tanh")
    _, gw, gb = conv2d_backward(
        grad_m1_pre, None, P["motion_conv1_kernel"].value, padding=pad,
        cached_cols=cache["cols"]["motion_conv1"][0], need_input_grad=False)
    P["motion_conv1_kernel"].grad += gw
    P["motion_conv1_bias"].grad += gb

    # Appearance branch: mask2 path feeds a2, whose gradient joins the
    # pooled-a1 path; mask1 path feeds a1 directly.
    grad_a2, gw, gb = _attention_backward(grad_mask2, cache["att2"],
                                          P["attention_conv2_kernel"].value)
    P["attention_conv2_kernel"].grad += gw
    P["attention_conv2_bias"].grad += gb
    grad_a2_pre = activation_backward(grad_a2, cache["a2"], "tanh")
    grad_a1p, gw, gb = conv2d_backward(
        grad_a2_pre, None, P["appearance_conv2_kernel"].value, padding=pad,
        cached_cols=cache["cols"]["appearance_conv2"][0])
    P["appearance_conv2_kernel"].grad += gw
    P["appearance_conv2_bias"].grad += gb
    grad_a1 = avgpool2d_backward(grad_a1p, pw)
    ga1, gw, gb = _attention_backward(grad_mask1, cache["att1"],
                                      P["attention_conv1_kernel"].value)
    grad_a1 = grad_a1 + ga1
    P["attention_conv1_kernel"].grad += gw
    P["attention_conv1_bias"].grad += gb
    grad_a1_pre = activation_backward(grad_a1, cache["a1"], "tanh")
    _, gw, gb = conv2d_backward(
        grad_a1_pre, None, P["appearance_conv1_kernel"].value, padding=pad,
        cached_cols=cache["cols"]["appearance_conv1"][0], need_input_grad=False)
    P["appearance_conv1_kernel"].grad += gw
    P["appearance_conv1_bias"].grad += gb


def trunk_features(motion, appearance, weights):
    """Flattened pooled motion features (input to the fc layer), (N, flat).

    With a frozen trunk these are constant, so fine-tuning can precompute
    them once and train only the fc and head layers on top.
    """
    cfg = weights.config
    P = weights.params
    pad = cfg.padding
    pw = cfg.pool_window
    a1 = activation(conv2d_forward(appearance, P["appearance_conv1_kernel"].value,
                                   P["appearance_conv1_bias"].value, padding=pad),
                    "tanh")
    mask1, _ = _attention_forward(
        a1, P["attention_conv1_kernel"].value, P["attention_conv1_bias"].value)
    a1p = avgpool2d(a1, pw)
    a2 = activation(conv2d_forward(a1p, P["appearance_conv2_kernel"].value,
                                   P["appearance_conv2_bias"].value, padding=pad),
                    "tanh")
    mask2, _ = _attention_forward(
        a2, P["attention_conv2_kernel"].value, P["attention_conv2_bias"].value)
    m1 = activation(conv2d_forward(motion, P["motion_conv1_kernel"].value,
                                   P["motion_conv1_bias"].value, padding=pad), "tanh")
    p1 = avgpool2d(m1 * mask1, pw)
    m2 = activation(conv2d_forward(p1, P["motion_conv2_kernel"].value,
                                   P["motion_conv2_bias"].value, padding=pad), "tanh")
    p2 = avgpool2d(m2 * mask2, pw)
    return p2.reshape(motion.shape[0], -1)


def head_forward(flat, weights, want_cache=False):
    """Apply fc + head to precomputed trunk features."""
    P = weights.params
    f = activation(dense(flat, P["fc_weight"].value, P["fc_bias"].value), "tanh")
    out = dense(f, P["head_weight"].value, P["head_bias"].value)[:, 0]
    result = activation(out, "sigmoid") if weights.config.head == "classification" else out
    if not want_cache:
        return result
    return result, {"flat": flat, "f": f, "result": result}


def head_backward(grad_result, cache, weights):
    """Accumulate fc/head gradients for a cached head_forward call."""
    P = weights.params
    if weights.config.head == "classification":
        grad_out = activation_backward(grad_result, cache["result"], "sigmoid")
    else:
        grad_out = grad_result
    grad_f, gw, gb = dense_backward(grad_out[:, None], cache["f"],
                                    P["head_weight"].value)
    P["head_weight"].grad += gw
    P["head_bias"].grad += gb
    grad_fc_pre = activation_backward(grad_f, cache["f"], "tanh")
    _, gw, gb = dense_backward(grad_fc_pre, cache["flat"], P["fc_weight"].value)
    P["fc_weight"].grad += gw
    P["fc_bias"].grad += gb


def forward(motion, appearance, weights):
    """Real-face probability in (0,1) for one preprocessed frame pair."""
    if weights.head != "classification":
        raise ValueError("forward requires a classification head")
    return float(forward_batch(motion[None], appearance[None], weights)[0])


def forward_hr(motion, appearance, weights):
    """Pulse time-derivative estimate for one preprocessed frame pair."""
    if weights.head != "regression":
        raise ValueError("forward_hr requires a regression head")
    return float(forward_batch(motion[None], appearance[None], weights)[0])


def convert_head(weights, seed):
    """Swap the regression head for a freshly initialized sigmoid head.

    Trunk and fc parameters are copied bitwise (fc geometry is identical for
    both heads, so only the output layer is re-initialized).
    """
    if weights.head != "regression":
        raise ValueError("convert_head expects regression weights")
    new_cfg = replace(weights.config, head="classification")
    rng = np.random.default_rng(seed)
    params = {}
    for name, p in weights.params.items():
        params[name] = Parameter(p.value.copy(), frozen=p.frozen)
    params["head_weight"] = Parameter(_glorot(rng, (1, new_cfg.fc_size)))
    params["head_bias"] = Parameter(np.zeros(1))
    return CanWeights(new_cfg, params)


def freeze_for_transfer(weights):
    """Freeze everything except the final fully-connected layer and head."""
    if weights.head != "classification":
        raise ValueError("freeze_for_transfer expects a classification head")
    out = weights.copy()
    for name, p in out.params.items():
        p.frozen = name not in HEAD_NAMES
    return out


_CONFIG_FIELDS = 8  # input_side, channels, n1, n2, kernel, pool, fc, head


def _pack_config(config):
    return struct.pack(
        "<8I",
        config.input_side, config.input_channels,
        config.conv_filters[0], config.conv_filters[1],
        config.kernel_size, config.pool_window, config.fc_size,
        _HEAD_CODES[config.head],
    )


def save_weights(weights, path):
    parts = [WEIGHTS_MAGIC, struct.pack("<H", WEIGHTS_VERSION),
             _pack_config(weights.config)]
    for name in PARAM_ORDER:
        p = weights.params[name]
        nb = name.encode("utf-8")
        parts.append(struct.pack("<H", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<B", p.value.ndim))
        parts.append(struct.pack(f"<{p.value.ndim}I", *p.value.shape))
        parts.append(struct.pack("<B", int(p.frozen)))
        parts.append(p.value.astype("<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise WeightFileError(f"truncated weight file while reading {what}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk


def load_weights(path):
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if r.take(len(WEIGHTS_MAGIC), "magic") != WEIGHTS_MAGIC:
        raise WeightFileError("bad magic: not a weight file")
    (version,) = struct.unpack("<H", r.take(2, "version"))
    if version != WEIGHTS_VERSION:
        raise WeightFileError(f"unsupported weight file version {version}")
    vals = struct.unpack(f"<{_CONFIG_FIELDS}I", r.take(4 * _CONFIG_FIELDS, "config"))
    if vals[7] not in _HEAD_NAMES:
        raise WeightFileError(f"bad head code {vals[7]}")
    config = CanConfig(
        input_side=vals[0], input_channels=vals[1],
        conv_filters=(vals[2], vals[3]), kernel_size=vals[4],
        pool_window=vals[5], fc_size=vals[6], head=_HEAD_NAMES[vals[7]],
    )
    shapes = parameter_shapes(config)
    params = {}
    for expected_name in PARAM_ORDER:
        (nlen,) = struct.unpack("<H", r.take(2, "name length"))
        name = r.take(nlen, "name").decode("utf-8")
        if name != expected_name:
            raise WeightFileError(
                f"unexpected parameter {name!r}, expected {expected_name!r}")
        (rank,) = struct.unpack("<B", r.take(1, f"{name} rank"))
        shape = struct.unpack(f"<{rank}I", r.take(4 * rank, f"{name} extents"))
        if shape != shapes[name]:
            raise WeightFileError(
                f"parameter {name} has shape {shape}, expected {shapes[name]}")
        (frozen,) = struct.unpack("<B", r.take(1, f"{name} frozen flag"))
        count = int(np.prod(shape))
        payload = r.take(4 * count, f"{name} payload")
        value = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(shape)
        params[name] = Parameter(value, frozen=bool(frozen))
    if r.pos != len(r.data):
        raise WeightFileError("trailing bytes after last parameter")
    return CanWeights(config, params)
