"""Network description and forward evaluation.

A network is an ordered list of typed modules applied to a 1-D (vector) or
3-D (channel, height, width) input. The forward pass is plain numpy over a
leading batch axis; ``forward_trace`` additionally caches every module input
and the max-pool winner indices, which the backward derivative rules need.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .activations import ACTIVATION_NAMES, activation_value
from .errors import CapabilityError, SchemaError
from .tensor import conv2d_bank, conv_output_dim

__all__ = [
    "FullyConnected",
    "Activation",
    "Conv2D",
    "MaxPool",
    "AvgPool",
    "Flatten",
    "Unflatten",
    "Module",
    "NetworkSpec",
    "ForwardTrace",
    "forward",
    "forward_trace",
    "split_outputs",
    "avgpool_equivalent_bank",
]


def _pair(value, what: str) -> tuple[int, int]:
    pair = tuple(int(v) for v in value)
    if len(pair) != 2 or any(v < 0 for v in pair):
        raise SchemaError(f"{what} must be a pair of non-negative integers, got {value!r}")
    return pair


@dataclass(frozen=True)
class FullyConnected:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    kind = "fully_connected"

    def __post_init__(self):
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise SchemaError(
                f"fully_connected weight {self.weight.shape} and bias {self.bias.shape} disagree"
            )
        if not (np.all(np.isfinite(self.weight)) and np.all(np.isfinite(self.bias))):
            raise SchemaError("fully_connected parameters contain non-finite entries")


@dataclass(frozen=True)
class Activation:
    name: str
    kind = "activation"

    def __post_init__(self):
        if self.name not in ACTIVATION_NAMES:
            raise SchemaError(
                f"unknown activation {self.name!r}; supported: {', '.join(ACTIVATION_NAMES)}"
            )


@dataclass(frozen=True)
class Conv2D:
    weight: np.ndarray  # (out_ch, in_ch, kh, kw)
    bias: np.ndarray | None = None
    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (0, 0)
    kind = "conv2d"

    def __post_init__(self):
        if self.weight.ndim != 4:
            raise SchemaError(f"conv2d weight must be 4-D, got shape {self.weight.shape}")
        if self.bias is not None and self.bias.shape != (self.weight.shape[0],):
            raise SchemaError(
                f"conv2d bias {self.bias.shape} does not match {self.weight.shape[0]} output channels"
            )
        if not np.all(np.isfinite(self.weight)):
            raise SchemaError("conv2d weight contains non-finite entries")
        object.__setattr__(self, "stride", _pair(self.stride, "stride"))
        object.__setattr__(self, "padding", _pair(self.padding, "padding"))
        if min(self.stride) < 1:
            raise SchemaError("conv2d stride must be >= 1")


@dataclass(frozen=True)
class MaxPool:
    kernel: tuple[int, int]
    stride: tuple[int, int]
    kind = "max_pool"

    def __post_init__(self):
        object.__setattr__(self, "kernel", _pair(self.kernel, "kernel"))
        object.__setattr__(self, "stride", _pair(self.stride, "stride"))
        if min(self.kernel) < 1 or min(self.stride) < 1:
            raise SchemaError("pool kernel and stride must be >= 1")


@dataclass(frozen=True)
class AvgPool:
    kernel: tuple[int, int]
    stride: tuple[int, int]
    kind = "avg_pool"

    def __post_init__(self):
        object.__setattr__(self, "kernel", _pair(self.kernel, "kernel"))
        object.__setattr__(self, "stride", _pair(self.stride, "stride"))
        if min(self.kernel) < 1 or min(self.stride) < 1:
            raise SchemaError("pool kernel and stride must be >= 1")


@dataclass(frozen=True)
class Flatten:
    kind = "flatten"


@dataclass(frozen=True)
class Unflatten:
    shape: tuple[int, int, int]
    kind = "unflatten"

    def __post_init__(self):
        shape = tuple(int(v) for v in self.shape)
        if len(shape) != 3 or min(shape) < 1:
            raise SchemaError(f"unflatten target must be (channels, h, w), got {self.shape!r}")
        object.__setattr__(self, "shape", shape)


Module = Union[FullyConnected, Activation, Conv2D, MaxPool, AvgPool, Flatten, Unflatten]


def module_output_shape(module: Module, in_shape: tuple[int, ...]) -> tuple[int, ...]:
    """Output shape of one module, validating the input shape against it."""
    if module.kind == "fully_connected":
        if len(in_shape) != 1 or in_shape[0] != module.weight.shape[1]:
            raise SchemaError(
                f"fully_connected expects a vector of {module.weight.shape[1]}, got {in_shape}"
            )
        return (module.weight.shape[0],)
    if module.kind == "activation":
        return in_shape
    if module.kind == "conv2d":
        oc, ic, kh, kw = module.weight.shape
        if len(in_shape) != 3 or in_shape[0] != ic:
            raise SchemaError(f"conv2d expects ({ic}, h, w) input, got {in_shape}")
        oh = conv_output_dim(in_shape[1], kh, module.stride[0], module.padding[0])
        ow = conv_output_dim(in_shape[2], kw, module.stride[1], module.padding[1])
        return (oc, oh, ow)
    if module.kind in ("max_pool", "avg_pool"):
        if len(in_shape) != 3:
            raise SchemaError(f"{module.kind} expects (c, h, w) input, got {in_shape}")
        oh = conv_output_dim(in_shape[1], module.kernel[0], module.stride[0], 0)
        ow = conv_output_dim(in_shape[2], module.kernel[1], module.stride[1], 0)
        return (in_shape[0], oh, ow)
    if module.kind == "flatten":
        if len(in_shape) != 3:
            raise SchemaError(f"flatten expects (c, h, w) input, got {in_shape}")
        return (int(np.prod(in_shape)),)
    if module.kind == "unflatten":
        if len(in_shape) != 1 or in_shape[0] != int(np.prod(module.shape)):
            raise SchemaError(
                f"unflatten to {module.shape} needs a vector of {int(np.prod(module.shape))}, got {in_shape}"
            )
        return module.shape
    raise SchemaError(f"unknown module kind {module.kind!r}")


@dataclass(frozen=True)
class NetworkSpec:
    input_shape: tuple[int, ...]
    modules: tuple[Module, ...]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        shape = tuple(int(v) for v in self.input_shape)
        if len(shape) not in (1, 3) or min(shape) < 1:
            raise SchemaError(f"input shape must be (n,) or (c, h, w), got {self.input_shape!r}")
        object.__setattr__(self, "input_shape", shape)
        object.__setattr__(self, "modules", tuple(self.modules))
        for idx, mod in enumerate(self.modules):
            try:
                shape = module_output_shape(mod, shape)
            except SchemaError as exc:
                raise SchemaError(f"modules[{idx}]: {exc}") from exc
        object.__setattr__(self, "_output_shape", shape)

    @property
    def output_shape(self) -> tuple[int, ...]:
        return self._output_shape

    @property
    def input_size(self) -> int:
        return int(np.prod(self.input_shape))

    @property
    def output_size(self) -> int:
        return int(np.prod(self.output_shape))

    def shape_chain(self) -> list[tuple[int, ...]]:
        shapes = [self.input_shape]
        for mod in self.modules:
            shapes.append(module_output_shape(mod, shapes[-1]))
        return shapes


@dataclass(frozen=True)
class ForwardTrace:
    """Cached per-module inputs plus the network output. For max-pool
    modules, ``pool_indices`` holds the flat (within channel-major layout)
    index of each window's winner, shaped like the module output."""

    inputs: tuple[np.ndarray, ...]
    output: np.ndarray
    pool_indices: dict[int, np.ndarray]


def _pool_windows(x: np.ndarray, kernel, stride) -> np.ndarray:
    kh, kw = kernel
    sh, sw = stride
    conv_output_dim(x.shape[2], kh, sh, 0)
    conv_output_dim(x.shape[3], kw, sw, 0)
    view = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    return view[:, :, ::sh, ::sw]


def _maxpool_forward(x: np.ndarray, module: MaxPool):
    b, c, h, w = x.shape
    kh, kw = module.kernel
    windows = _pool_windows(x, module.kernel, module.stride)
    flat = windows.reshape(windows.shape[:4] + (kh * kw,))
    local = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, local[..., np.newaxis], axis=-1)[..., 0]
    oh, ow = out.shape[2], out.shape[3]
    ki, kj = local // kw, local % kw
    iy = np.arange(oh)[np.newaxis, np.newaxis, :, np.newaxis] * module.stride[0] + ki
    ix = np.arange(ow)[np.newaxis, np.newaxis, np.newaxis, :] * module.stride[1] + kj
    chan = np.arange(c)[np.newaxis, :, np.newaxis, np.newaxis]
    flat_global = (chan * h + iy) * w + ix
    return out, flat_global


def _module_forward(module: Module, x: np.ndarray):
    """Apply one module to a batched input; returns (output, pool_indices)."""
    if module.kind == "fully_connected":
        return x @ module.weight.T + module.bias, None
    if module.kind == "activation":
        return activation_value(module.name, x), None
    if module.kind == "conv2d":
        return conv2d_bank(x, module.weight, module.stride, module.padding, module.bias), None
    if module.kind == "max_pool":
        return _maxpool_forward(x, module)
    if module.kind == "avg_pool":
        windows = _pool_windows(x, module.kernel, module.stride)
        scale = 1.0 / (module.kernel[0] * module.kernel[1])
        return windows.sum(axis=(-2, -1)) * scale, None
    if module.kind == "flatten":
        return x.reshape(x.shape[0], -1), None
    if module.kind == "unflatten":
        return x.reshape((x.shape[0],) + module.shape), None
    raise SchemaError(f"unknown module kind {module.kind!r}")


def _as_batch(net: NetworkSpec, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.shape == net.input_shape:
        return x[np.newaxis], True
    if x.shape[1:] == net.input_shape:
        return x, False
    raise SchemaError(f"input shape {x.shape} does not match network input {net.input_shape}")


def forward(net: NetworkSpec, x) -> np.ndarray:
    """Run the network on one input (shaped like ``input_shape``) or a batch
    with a leading batch axis."""
    xb, single = _as_batch(net, x)
    for module in net.modules:
        xb, _ = _module_forward(module, xb)
    return xb[0] if single else xb


def forward_trace(net: NetworkSpec, x) -> ForwardTrace:
    """Forward pass that caches every module input (batched) and max-pool
    winner indices for the backward derivative rules."""
    xb, _ = _as_batch(net, x)
    inputs = []
    pool_indices = {}
    for idx, module in enumerate(net.modules):
        inputs.append(xb)
        xb, winners = _module_forward(module, xb)
        if winners is not None:
            pool_indices[idx] = winners
    return ForwardTrace(inputs=tuple(inputs), output=xb, pool_indices=pool_indices)


def split_outputs(net: NetworkSpec) -> list[NetworkSpec]:
    """One single-output copy per output unit of the final fully connected
    layer; copy i keeps row i of the weight matrix and bias entry i."""
    if net.output_shape == (1,):
        return [net]
    if not net.modules or net.modules[-1].kind != "fully_connected":
        raise CapabilityError(
            "cannot split outputs: final module must be fully_connected"
        )
    head = net.modules[-1]
    nets = []
    for i in range(head.weight.shape[0]):
        single = FullyConnected(weight=head.weight[i : i + 1], bias=head.bias[i : i + 1])
        nets.append(
            NetworkSpec(
                input_shape=net.input_shape,
                modules=net.modules[:-1] + (single,),
                metadata=dict(net.metadata),
            )
        )
    return nets


def avgpool_equivalent_bank(channels: int, kernel: tuple[int, int]) -> np.ndarray:
    """Kernel bank of the convolution equivalent to an average pool: one
    kernel per channel, uniform weight 1/(kh*kw), zero across channels."""
    kh, kw = kernel
    bank = np.zeros((channels, channels, kh, kw))
    for c in range(channels):
        bank[c, c] = 1.0 / (kh * kw)
    return bank
