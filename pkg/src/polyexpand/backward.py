"""Backward propagation of per-order derivative stacks through each module
kind, plus the drivers that expand a whole network at a reference input.

The walk mirrors ordinary back-propagation: start from the scalar output
with stack [1, 0, ..., 0], then pull the stack through every module in
reverse. Internally stacks carry a leading batch axis so grids of reference
points (needed for interval bounds) share one pass; the public single-point
functions squeeze it away.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from .activations import activation_derivs
from .chain import (
    DerivStack,
    FaaDiBrunoCoeffs,
    MixedDerivStack,
    build_mixed_transform,
    faa_di_bruno_table,
    propagate_mixed,
)
from .errors import CapabilityError, NumericError, SchemaError
from .network import (
    Conv2D,
    ForwardTrace,
    Module,
    NetworkSpec,
    avgpool_equivalent_bank,
    forward_trace,
    module_output_shape,
)
from .tensor import unrolled_conv_matrix

__all__ = [
    "output_init",
    "fc_backward",
    "fc_mixed_backward",
    "conv_backward",
    "activation_backward",
    "maxpool_backward",
    "avgpool_backward",
    "reshape_backward",
    "expand_unmixed",
    "expand_unmixed_batch",
    "expand_mixed",
    "linear_effective_matrix",
]

Blocks = list[np.ndarray]  # per order, each (batch, width)


@lru_cache(maxsize=None)
def _coeffs(n: int) -> FaaDiBrunoCoeffs:
    return faa_di_bruno_table(n)


def _lift(stack: DerivStack) -> Blocks:
    return [b[np.newaxis, :] for b in stack.blocks]


def _drop(blocks: Blocks) -> DerivStack:
    return DerivStack(tuple(b[0] for b in blocks))


def output_init(n: int) -> DerivStack:
    """Initial stack at the scalar output: first order 1, the rest 0."""
    if n < 1:
        raise SchemaError(f"order must be >= 1, got {n}")
    return DerivStack(tuple(np.array([1.0 if k == 1 else 0.0]) for k in range(1, n + 1)))


def _output_init_blocks(n: int, batch: int) -> Blocks:
    blocks = [np.zeros((batch, 1)) for _ in range(n)]
    blocks[0][:, 0] = 1.0
    return blocks


# ---------------------------------------------------------------------------
# Per-module rules on batched blocks
# ---------------------------------------------------------------------------


def _fc_blocks(blocks: Blocks, weight: np.ndarray) -> Blocks:
    if blocks[0].shape[1] != weight.shape[0]:
        raise SchemaError(
            f"stack width {blocks[0].shape[1]} does not match {weight.shape[0]} layer outputs"
        )
    return [blocks[k] @ weight ** (k + 1) for k in range(len(blocks))]


def _activation_blocks(blocks: Blocks, name: str, cached_input: np.ndarray) -> Blocks:
    n = len(blocks)
    if blocks[0].shape != cached_input.shape:
        raise SchemaError(
            f"stack width {blocks[0].shape} does not match cached input {cached_input.shape}"
        )
    derivs = activation_derivs(name, cached_input, n)  # (n, batch, width)
    coeffs = _coeffs(n)
    out = []
    for i in range(1, n + 1):
        acc = np.zeros_like(blocks[0])
        for j in range(1, i + 1):
            factor = np.zeros_like(blocks[0])
            for coef, parts in coeffs.monomials(i, j):
                term = np.full_like(blocks[0], float(coef))
                for order, mult in parts:
                    term = term * derivs[order - 1] ** mult
                factor += term
            acc += factor * blocks[j - 1]
        out.append(acc)
    return out


def _conv_scatter(
    grad: np.ndarray,
    bank_pow: np.ndarray,
    stride: tuple[int, int],
    padding: tuple[int, int],
    in_hw: tuple[int, int],
) -> np.ndarray:
    """Transposed correlation: spread (batch, oc, oh, ow) values back onto
    the (batch, ic, h, w) input grid through one power of the kernel bank."""
    b, oc, oh, ow = grad.shape
    _, ic, kh, kw = bank_pow.shape
    sh, sw = stride
    ph, pw = padding
    h, w = in_hw
    acc = np.zeros((b, ic, h, w))
    for ki in range(kh):
        oy_lo = max(0, (ph - ki + sh - 1) // sh)
        oy_hi = min(oh - 1, (h - 1 - ki + ph) // sh)
        if oy_lo > oy_hi:
            continue
        for kj in range(kw):
            ox_lo = max(0, (pw - kj + sw - 1) // sw)
            ox_hi = min(ow - 1, (w - 1 - kj + pw) // sw)
            if ox_lo > ox_hi:
                continue
            iy = oy_lo * sh + ki - ph
            ix = ox_lo * sw + kj - pw
            ny = oy_hi - oy_lo + 1
            nx = ox_hi - ox_lo + 1
            acc[:, :, iy : iy + (ny - 1) * sh + 1 : sh, ix : ix + (nx - 1) * sw + 1 : sw] += (
                np.einsum(
                    "oi,bohw->bihw",
                    bank_pow[:, :, ki, kj],
                    grad[:, :, oy_lo : oy_hi + 1, ox_lo : ox_hi + 1],
                )
            )
    return acc


def _conv_blocks(
    blocks: Blocks,
    bank: np.ndarray,
    stride: tuple[int, int],
    padding: tuple[int, int],
    in_shape: tuple[int, int, int],
    out_shape: tuple[int, int, int],
) -> Blocks:
    b = blocks[0].shape[0]
    ic, h, w = in_shape
    if blocks[0].shape[1] != int(np.prod(out_shape)):
        raise SchemaError(
            f"stack width {blocks[0].shape[1]} does not match output map {out_shape}"
        )
    out = []
    for k, block in enumerate(blocks, start=1):
        grad = block.reshape((b,) + out_shape)
        spread = _conv_scatter(grad, bank**k, stride, padding, (h, w))
        out.append(spread.reshape(b, ic * h * w))
    return out


def _maxpool_blocks(blocks: Blocks, winners: np.ndarray, in_size: int) -> Blocks:
    b = blocks[0].shape[0]
    idx = winners.reshape(b, -1)
    if idx.shape[1] != blocks[0].shape[1]:
        raise SchemaError(
            f"stack width {blocks[0].shape[1]} does not match {idx.shape[1]} pool outputs"
        )
    rows = np.arange(b)[:, np.newaxis]
    out = []
    for block in blocks:
        acc = np.zeros((b, in_size))
        np.add.at(acc, (rows, idx), block)
        out.append(acc)
    return out


def _avgpool_blocks(
    blocks: Blocks,
    kernel: tuple[int, int],
    stride: tuple[int, int],
    in_shape: tuple[int, int, int],
    out_shape: tuple[int, int, int],
) -> Blocks:
    b = blocks[0].shape[0]
    c, h, w = in_shape
    weight = 1.0 / (kernel[0] * kernel[1])
    single = np.ones((1, 1) + kernel)
    out = []
    for k, block in enumerate(blocks, start=1):
        grad = block.reshape((b,) + out_shape)
        # channels never mix: push each channel through a 1-channel kernel
        merged = grad.reshape(b * c, 1, out_shape[1], out_shape[2])
        spread = _conv_scatter(merged, single * weight**k, stride, (0, 0), (h, w))
        out.append(spread.reshape(b, c * h * w))
    return out


# ---------------------------------------------------------------------------
# Public single-stack rules
# ---------------------------------------------------------------------------


def fc_backward(v_next: DerivStack, weight: np.ndarray) -> DerivStack:
    """Pull a stack through a fully connected layer: block k picks up the
    k-th Hadamard power of the transposed weights."""
    return _drop(_fc_blocks(_lift(v_next), np.asarray(weight, dtype=np.float64)))


def fc_mixed_backward(v_next: DerivStack, weight: np.ndarray, input_dim: int) -> MixedDerivStack:
    """Mixed-derivative step across an input-adjacent fully connected layer."""
    weight = np.asarray(weight, dtype=np.float64)
    if weight.shape[1] != input_dim:
        raise SchemaError(
            f"weight has {weight.shape[1]} input columns, expected {input_dim}"
        )
    transform = build_mixed_transform(weight, v_next.order)
    return propagate_mixed(v_next, transform)


def conv_backward(
    v_next: DerivStack,
    bank: np.ndarray,
    in_shape: tuple[int, int, int],
    stride: tuple[int, int] = (1, 1),
    padding: tuple[int, int] = (0, 0),
) -> DerivStack:
    """Pull a stack laid out on the output feature map back through a
    convolution: order k correlates with the k-th Hadamard power of the
    (rotated) kernels, summed over output channels."""
    bank = np.asarray(bank, dtype=np.float64)
    module = Conv2D(weight=bank, bias=None, stride=stride, padding=padding)
    out_shape = module_output_shape(module, in_shape)
    return _drop(_conv_blocks(_lift(v_next), bank, stride, padding, in_shape, out_shape))


def activation_backward(v_next: DerivStack, name: str, cached_input: np.ndarray) -> DerivStack:
    """Pull a stack through an elementwise activation via the per-node
    composition transform built from its derivatives at the cached input."""
    cached = np.asarray(cached_input, dtype=np.float64).reshape(-1)
    return _drop(_activation_blocks(_lift(v_next), name, cached[np.newaxis, :]))


def maxpool_backward(v_next: DerivStack, winners: np.ndarray, in_size: int) -> DerivStack:
    """Route each output derivative to its recorded winner input position;
    overlapping windows that share a winner accumulate."""
    return _drop(_maxpool_blocks(_lift(v_next), winners.reshape(1, -1), in_size))


def avgpool_backward(
    v_next: DerivStack,
    kernel: tuple[int, int],
    stride: tuple[int, int],
    in_shape: tuple[int, int, int],
    out_shape: tuple[int, int, int],
) -> DerivStack:
    """Average pooling backward: a convolution backward with uniform
    per-channel kernels of weight 1/(kh*kw)."""
    return _drop(_avgpool_blocks(_lift(v_next), kernel, stride, in_shape, out_shape))


def reshape_backward(v_next: DerivStack, index_map: np.ndarray, in_size: int) -> DerivStack:
    """Permute a stack through a reshaping module; ``index_map[i]`` is the
    input position feeding output position i. Must be a bijection."""
    index_map = np.asarray(index_map)
    if index_map.shape != (v_next.width,) or in_size != v_next.width:
        raise SchemaError("reshape index map must pair up input and output positions 1:1")
    if len(np.unique(index_map)) != in_size:
        raise SchemaError("reshape index map is not a bijection")
    blocks = []
    for block in v_next.blocks:
        out = np.empty_like(block)
        out[index_map] = block
        blocks.append(out)
    return DerivStack(tuple(blocks))


# ---------------------------------------------------------------------------
# Whole-network drivers
# ---------------------------------------------------------------------------


def _module_backward(
    module: Module,
    blocks: Blocks,
    cached_input: np.ndarray,
    winners: np.ndarray | None,
) -> Blocks:
    if module.kind == "fully_connected":
        return _fc_blocks(blocks, module.weight)
    if module.kind == "activation":
        flat = cached_input.reshape(cached_input.shape[0], -1)
        return _activation_blocks(blocks, module.name, flat)
    if module.kind == "conv2d":
        in_shape = cached_input.shape[1:]
        out_shape = module_output_shape(module, in_shape)
        return _conv_blocks(blocks, module.weight, module.stride, module.padding, in_shape, out_shape)
    if module.kind == "max_pool":
        return _maxpool_blocks(blocks, winners, int(np.prod(cached_input.shape[1:])))
    if module.kind == "avg_pool":
        in_shape = cached_input.shape[1:]
        out_shape = module_output_shape(module, in_shape)
        return _avgpool_blocks(blocks, module.kernel, module.stride, in_shape, out_shape)
    if module.kind in ("flatten", "unflatten"):
        return blocks  # row-major on both sides: the identity permutation
    raise SchemaError(f"unknown module kind {module.kind!r}")


def _require_scalar_output(net: NetworkSpec):
    if net.output_size != 1:
        raise CapabilityError(
            f"expansion needs a single-output network (got {net.output_shape}); "
            "split the outputs first"
        )


def _backward_from(
    net: NetworkSpec, trace: ForwardTrace, order: int, stop_before: int = 0
) -> Blocks:
    """Stack of the scalar output w.r.t. the input of module ``stop_before``
    (0 = the network input), batched over the traced points."""
    batch = trace.inputs[0].shape[0]
    blocks = _output_init_blocks(order, batch)
    for idx in range(len(net.modules) - 1, stop_before - 1, -1):
        blocks = _module_backward(
            net.modules[idx], blocks, trace.inputs[idx], trace.pool_indices.get(idx)
        )
    for k, block in enumerate(blocks, start=1):
        if not np.all(np.isfinite(block)):
            raise NumericError(f"order-{k} derivatives overflowed to non-finite values")
    return blocks


def expand_unmixed(net: NetworkSpec, x0, order: int) -> DerivStack:
    """All unmixed derivatives of the scalar output w.r.t. every input
    coordinate (row-major flattening) at the reference input."""
    _require_scalar_output(net)
    trace = forward_trace(net, np.asarray(x0, dtype=np.float64))
    if trace.inputs[0].shape[0] != 1:
        raise SchemaError("expand_unmixed takes a single reference input")
    return _drop(_backward_from(net, trace, order))


def expand_unmixed_batch(net: NetworkSpec, points: np.ndarray, order: int) -> list[np.ndarray]:
    """Unmixed derivative blocks, each (num_points, input_size), sharing one
    backward pass across many reference points."""
    _require_scalar_output(net)
    points = np.asarray(points, dtype=np.float64)
    trace = forward_trace(net, points)
    return _backward_from(net, trace, order)


def linear_effective_matrix(module: Module, in_shape: tuple[int, ...]) -> np.ndarray:
    """Dense (out, in) matrix of a linear module; raises for nonlinear ones."""
    if module.kind == "fully_connected":
        return module.weight
    if module.kind == "conv2d":
        return unrolled_conv_matrix(module.weight, in_shape, module.stride, module.padding)
    if module.kind == "avg_pool":
        bank = avgpool_equivalent_bank(in_shape[0], module.kernel)
        return unrolled_conv_matrix(bank, in_shape, module.stride, (0, 0))
    if module.kind in ("flatten", "unflatten"):
        return np.eye(int(np.prod(in_shape)))
    raise CapabilityError(
        f"mixed derivatives need a linear first module, got {module.kind!r}"
    )


def expansion_exactness(net: NetworkSpec) -> tuple[bool, str | None]:
    """Classify whether the per-order stack propagation is complete for this
    architecture.

    Walking from the output, each interface is tagged L (everything above is
    affine or piecewise-linear, all derivatives beyond first order vanish),
    D (derivative tensors above are coordinate-diagonal) or N (cross
    derivatives exist). Crossing a mixing linear module is complete for L and
    D but drops cross terms under N; elementwise and routing modules are
    always complete. Returns (True, None) or (False, reason).
    """
    shapes = net.shape_chain()
    state = "L"
    for idx in range(len(net.modules) - 1, -1, -1):
        module = net.modules[idx]
        if module.kind == "activation":
            if module.name != "relu" and state == "L":
                state = "D"
        elif module.kind in ("max_pool", "flatten", "unflatten"):
            pass
        elif module.kind in ("fully_connected", "conv2d", "avg_pool"):
            out_size = int(np.prod(shapes[idx + 1]))
            in_size = int(np.prod(shapes[idx]))
            if state == "N" and out_size > 1:
                return False, (
                    f"modules[{idx}] ({module.kind}) mixes coordinates whose cross "
                    "derivatives the stack propagation does not carry; orders >= 2 "
                    "are a structured approximation here (check with the oracle)"
                )
            if state != "L":
                state = "D" if in_size == 1 else "N"
    return True, None


def expand_mixed(net: NetworkSpec, x0, order: int, max_entries: int | None = None) -> MixedDerivStack:
    """All mixed derivatives w.r.t. the input, available when the first
    module is linear: the unmixed stack stops at that module's output and is
    pushed through the block-diagonal mixed transform."""
    _require_scalar_output(net)
    if not net.modules:
        raise SchemaError("network has no modules")
    trace = forward_trace(net, np.asarray(x0, dtype=np.float64))
    if trace.inputs[0].shape[0] != 1:
        raise SchemaError("expand_mixed takes a single reference input")
    w_eff = linear_effective_matrix(net.modules[0], net.input_shape)
    blocks = _backward_from(net, trace, order, stop_before=1)
    stack = _drop(blocks)
    kwargs = {} if max_entries is None else {"max_entries": max_entries}
    transform = build_mixed_transform(w_eff, order, **kwargs)
    return propagate_mixed(stack, transform)
