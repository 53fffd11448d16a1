"""Model constructors and forward passes: toy MLP, compact CNN, small U-Net,
localization network, and the composed defense transformer.

All constructors are deterministic functions of their seed, use He-style
fan-in initialization, and avoid any stateful layer (no batch norm, no
dropout), so forward passes are pure given the parameters.
"""

from __future__ import annotations

import hashlib
from typing import Optional, Sequence

import numpy as np

from . import ops
from .errors import DimensionError, DomainError
from .tensor import Tensor, as_tensor, concat
from .warp import point_affine, warp_image

__all__ = [
    "ClassifierModel",
    "DefenseModel",
    "build_mlp_classifier",
    "build_cnn_classifier",
    "build_unet",
    "build_locnet",
    "build_defense",
    "classifier_forward",
    "defense_forward",
    "single_layer_forward",
    "params_hash",
]


def _he_linear(rng: np.random.Generator, fan_in: int, fan_out: int) -> tuple[Tensor, Tensor]:
    w = rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)
    return Tensor(w, requires_grad=True), Tensor(np.zeros(fan_out), requires_grad=True)


def _he_conv(rng: np.random.Generator, cout: int, cin: int, k: int) -> tuple[Tensor, Tensor]:
    w = rng.standard_normal((cout, cin, k, k)) * np.sqrt(2.0 / (cin * k * k))
    return Tensor(w, requires_grad=True), Tensor(np.zeros(cout), requires_grad=True)


class Linear:
    def __init__(self, w: Tensor, b: Tensor):
        self.w, self.b = w, b

    def forward(self, x: Tensor) -> Tensor:
        return ops.matmul(x, self.w) + self.b

    def params(self) -> list[Tensor]:
        return [self.w, self.b]


class Conv2d:
    def __init__(self, w: Tensor, b: Tensor, stride: int = 1, pad: int = 0):
        self.w, self.b = w, b
        self.stride, self.pad = stride, pad

    def forward(self, x: Tensor) -> Tensor:
        out = ops.conv2d(x, self.w, stride=self.stride, pad=self.pad)
        bias_shape = (-1, 1, 1)
        return out + self.b.reshape(bias_shape)

    def params(self) -> list[Tensor]:
        return [self.w, self.b]


class Relu:
    def forward(self, x: Tensor) -> Tensor:
        return ops.relu(x)

    def params(self) -> list[Tensor]:
        return []


class MaxPool:
    def __init__(self, window: int):
        self.window = window

    def forward(self, x: Tensor) -> Tensor:
        return ops.max_pool2d(x, self.window)

    def params(self) -> list[Tensor]:
        return []


class Flatten:
    def forward(self, x: Tensor) -> Tensor:
        return x.reshape((x.shape[0], -1))

    def params(self) -> list[Tensor]:
        return []


class ClassifierModel:
    """Ordered layer stack ending in a ``num_classes``-dim linear head."""

    def __init__(self, layers: list, num_classes: int, input_shape: tuple, model_id: str):
        self.layers = layers
        self.num_classes = num_classes
        self.input_shape = tuple(input_shape)
        self.model_id = model_id

    def params(self) -> list[Tensor]:
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def param_count(self) -> int:
        return sum(p.size for p in self.params())

    def forward(self, x) -> Tensor:
        x = as_tensor(x)
        single = x.ndim == len(self.input_shape)
        if single:
            x = x.reshape((1,) + x.shape)
        elif x.ndim != len(self.input_shape) + 1:
            raise DimensionError(
                f"input shape {x.shape} incompatible with model input {self.input_shape}")
        for layer in self.layers:
            x = layer.forward(x)
        return x.reshape(x.shape[1:]) if single else x

    def predict(self, x) -> np.ndarray:
        logits = self.forward(x).data
        return np.argmax(logits, axis=-1)


def build_mlp_classifier(input_dim: int, hidden: Sequence[int], num_classes: int,
                         seed: int) -> ClassifierModel:
    if not hidden:
        raise DomainError("hidden layer list must be nonempty")
    rng = np.random.default_rng(seed)
    layers: list = []
    prev = input_dim
    for width in hidden:
        layers.append(Linear(*_he_linear(rng, prev, width)))
        layers.append(Relu())
        prev = width
    layers.append(Linear(*_he_linear(rng, prev, num_classes)))
    return ClassifierModel(layers, num_classes, (input_dim,), f"mlp-{seed}")


def build_cnn_classifier(channels: Sequence[int], num_classes: int, seed: int,
                         in_shape: tuple = (1, 28, 28)) -> ClassifierModel:
    """conv3x3(pad 1) -> relu -> maxpool2 blocks, then a linear head."""
    if not channels:
        raise DomainError("channel list must be nonempty")
    rng = np.random.default_rng(seed)
    cin, h, w = in_shape
    layers: list = []
    for ch in channels:
        layers.append(Conv2d(*_he_conv(rng, ch, cin, 3), pad=1))
        layers.append(Relu())
        layers.append(MaxPool(2))
        cin = ch
        h, w = h // 2, w // 2
    layers.append(Flatten())
    layers.append(Linear(*_he_linear(rng, cin * h * w, num_classes)))
    return ClassifierModel(layers, num_classes, tuple(in_shape), f"cnn-{seed}")


class UNet:
    """Encoder/decoder with skip concatenation and a zero-initialized
    1x1 output conv, so the network starts as the constant-zero function."""

    def __init__(self, in_channels: int, base_width: int, depth: int, seed: int):
        if depth < 1:
            raise DomainError(f"unet depth must be >= 1, got {depth}")
        rng = np.random.default_rng(seed)
        self.depth = depth
        self.enc: list[Conv2d] = []
        cin = in_channels
        widths = [base_width * (2 ** i) for i in range(depth)]
        for w in widths:
            self.enc.append(Conv2d(*_he_conv(rng, w, cin, 3), pad=1))
            cin = w
        self.dec: list[Conv2d] = []
        cur = widths[-1]
        for w in reversed(widths):
            self.dec.append(Conv2d(*_he_conv(rng, w, cur + w, 3), pad=1))
            cur = w
        wf = Tensor(np.zeros((in_channels, widths[0], 1, 1)), requires_grad=True)
        bf = Tensor(np.zeros(in_channels), requires_grad=True)
        self.final = Conv2d(wf, bf)

    def forward(self, x: Tensor) -> Tensor:
        skips = []
        cur = x
        for conv in self.enc:
            cur = ops.relu(conv.forward(cur))
            skips.append(cur)
            cur = ops.avg_pool2d(cur, 2)
        for conv, skip in zip(self.dec, reversed(skips)):
            cur = ops.upsample_nearest2(cur)
            cur = concat([cur, skip], axis=-3)
            cur = ops.relu(conv.forward(cur))
        return self.final.forward(cur)

    def params(self) -> list[Tensor]:
        out = []
        for conv in self.enc + self.dec + [self.final]:
            out.extend(conv.params())
        return out


class Mlp:
    """Plain linear/relu stack; optionally zero weights and a fixed bias on
    the last layer (identity starts for perturbation and localization nets)."""

    def __init__(self, dims: Sequence[int], seed: int, zero_final: bool = False,
                 final_bias: Optional[np.ndarray] = None):
        rng = np.random.default_rng(seed)
        self.linears: list[Linear] = []
        for i in range(len(dims) - 1):
            w, b = _he_linear(rng, dims[i], dims[i + 1])
            self.linears.append(Linear(w, b))
        if zero_final:
            self.linears[-1].w.data[:] = 0.0
        if final_bias is not None:
            self.linears[-1].b.data[:] = final_bias

    def forward(self, x: Tensor) -> Tensor:
        for lin in self.linears[:-1]:
            x = ops.relu(lin.forward(x))
        return self.linears[-1].forward(x)

    def params(self) -> list[Tensor]:
        out = []
        for lin in self.linears:
            out.extend(lin.params())
        return out


_IDENTITY_THETA = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])


class ImageLocNet:
    """Small conv stack regressing the 6 affine entries; initialized so the
    output is exactly the identity transform for any input."""

    def __init__(self, in_shape: tuple, seed: int, width: int = 8):
        cin, h, w = in_shape
        rng = np.random.default_rng(seed)
        self.conv1 = Conv2d(*_he_conv(rng, width, cin, 3), pad=1)
        self.conv2 = Conv2d(*_he_conv(rng, width, width, 3), pad=1)
        flat = width * (h // 4) * (w // 4)
        self.fc1 = Linear(*_he_linear(rng, flat, 32))
        w6, b6 = _he_linear(rng, 32, 6)
        w6.data[:] = 0.0
        b6.data[:] = _IDENTITY_THETA
        self.fc2 = Linear(w6, b6)

    def forward(self, x: Tensor) -> Tensor:
        x = ops.max_pool2d(ops.relu(self.conv1.forward(x)), 2)
        x = ops.max_pool2d(ops.relu(self.conv2.forward(x)), 2)
        x = x.reshape((x.shape[0], -1))
        x = ops.relu(self.fc1.forward(x))
        return self.fc2.forward(x)

    def params(self) -> list[Tensor]:
        out = []
        for layer in (self.conv1, self.conv2, self.fc1, self.fc2):
            out.extend(layer.params())
        return out


def build_unet(in_channels: int, base_width: int, depth: int, seed: int) -> UNet:
    return UNet(in_channels, base_width, depth, seed)


def build_locnet(in_shape: tuple, seed: int):
    """Localization net for image inputs (C,H,W) or point inputs (2,)."""
    if len(in_shape) == 3:
        return ImageLocNet(tuple(in_shape), seed)
    if tuple(in_shape) == (2,):
        return Mlp([2, 32, 6], seed, zero_final=True, final_bias=_IDENTITY_THETA)
    raise DimensionError(f"locnet input must be (C,H,W) or (2,), got {in_shape}")


class DefenseModel:
    """U-Net (or point MLP) residual perturbation plus an affine warp whose
    parameters come from a localization network."""

    def __init__(self, unet, locnet, input_shape: tuple,
                 residual_unet: bool = True, use_unet: bool = True):
        self.unet = unet
        self.locnet = locnet
        self.input_shape = tuple(input_shape)
        self.residual_unet = residual_unet
        self.use_unet = use_unet
        self.kind = "point" if len(self.input_shape) == 1 else "image"

    def params(self) -> list[Tensor]:
        out = []
        if self.use_unet and self.unet is not None:
            out.extend(self.unet.params())
        out.extend(self.locnet.params())
        return out

    def forward(self, x) -> Tensor:
        return defense_forward(self, x)


def build_defense(input_shape: tuple, seed: int, base_width: int = 8, depth: int = 2,
                  residual_unet: bool = True, use_unet: bool = True) -> DefenseModel:
    ss = np.random.SeedSequence(seed)
    unet_seed, loc_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(2))
    if len(input_shape) == 3:
        unet = build_unet(input_shape[0], base_width, depth, unet_seed) if use_unet else None
    elif tuple(input_shape) == (2,):
        unet = Mlp([2, 32, 32, 2], unet_seed, zero_final=True) if use_unet else None
    else:
        raise DimensionError(f"defense input must be (C,H,W) or (2,), got {input_shape}")
    locnet = build_locnet(input_shape, loc_seed)
    return DefenseModel(unet, locnet, input_shape, residual_unet, use_unet)


def defense_forward(d: DefenseModel, x) -> Tensor:
    """Perturb, localize, warp: T(x) = warp(r, locnet(r)) with
    r = x + unet(x) (residual mode), r = unet(x), or r = x (bare STN)."""
    x = as_tensor(x)
    single = x.ndim == len(d.input_shape)
    if single:
        x = x.reshape((1,) + x.shape)
    if d.use_unet:
        r = x + d.unet.forward(x) if d.residual_unet else d.unet.forward(x)
    else:
        r = x
    theta = d.locnet.forward(r).reshape((-1, 2, 3))
    if d.kind == "image":
        out = warp_image(r, theta)
    else:
        out = point_affine(r, theta)
    return out.reshape(out.shape[1:]) if single else out


def classifier_forward(h: ClassifierModel, x) -> Tensor:
    return h.forward(x)


def single_layer_forward(kappa, x, pool_window: int) -> Tensor:
    """The single classifier layer pool(relu(conv(x, kappa))) used by the
    transform-existence bound check."""
    return ops.avg_pool2d(ops.relu(ops.conv2d(x, kappa, stride=1, pad=0)), pool_window)


def params_hash(model) -> str:
    """SHA-256 over all parameter bytes, for frozen-parameter assertions."""
    digest = hashlib.sha256()
    for p in model.params():
        digest.update(p.data.tobytes())
    return digest.hexdigest()
