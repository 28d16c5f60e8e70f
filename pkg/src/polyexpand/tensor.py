"""Dense numeric kernels: validated arrays, Hadamard algebra, Kronecker
products, kernel rotation and 2-D cross-correlation.

Everything is float64 and row-major. Operations are pure and keep a fixed
summation order so repeated runs are bit-identical.
"""
from __future__ import annotations

import numpy as np

from .errors import SchemaError

__all__ = [
    "matrix",
    "vector",
    "hadamard_power",
    "hadamard_product",
    "kronecker",
    "rot180",
    "conv_output_dim",
    "conv2d",
    "conv2d_bank",
    "unrolled_conv_matrix",
]


def _finite(a: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise SchemaError(f"{what} contains non-finite entries")
    return a


def matrix(data) -> np.ndarray:
    """Validate and return a 2-D float64 array (finite entries only)."""
    a = np.asarray(data, dtype=np.float64)
    if a.ndim != 2:
        raise SchemaError(f"matrix must be 2-D, got ndim={a.ndim}")
    return _finite(a, "matrix")


def vector(data) -> np.ndarray:
    """Validate and return a 1-D float64 array (finite entries only)."""
    a = np.asarray(data, dtype=np.float64)
    if a.ndim != 1:
        raise SchemaError(f"vector must be 1-D, got ndim={a.ndim}")
    return _finite(a, "vector")


def hadamard_power(a: np.ndarray, k: int) -> np.ndarray:
    """Elementwise integer power ``a[i,j] ** k`` for k >= 1."""
    if k < 1:
        raise SchemaError(f"hadamard power needs k >= 1, got {k}")
    return np.asarray(a, dtype=np.float64) ** k


def hadamard_product(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise product; shapes must match exactly (no broadcasting)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise SchemaError(f"hadamard product shape mismatch: {a.shape} vs {b.shape}")
    return a * b


def kronecker(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker product: block (i, j) of the result is ``a[i,j] * b``."""
    return np.kron(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))


def rot180(f: np.ndarray) -> np.ndarray:
    """Reverse both axes of a 2-D kernel (an involution)."""
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 2:
        raise SchemaError(f"rot180 expects a 2-D kernel, got ndim={f.ndim}")
    return f[::-1, ::-1].copy()


def conv_output_dim(size: int, kernel: int, stride: int, padding: int) -> int:
    """Output size of a strided correlation; rejects non-integral and
    non-positive results."""
    span = size + 2 * padding - kernel
    if span < 0 or span % stride != 0:
        raise SchemaError(
            f"invalid conv geometry: size={size} kernel={kernel} "
            f"stride={stride} padding={padding}"
        )
    return span // stride + 1


def conv2d(
    x: np.ndarray,
    kernel: np.ndarray,
    stride: tuple[int, int] = (1, 1),
    padding: tuple[int, int] = (0, 0),
) -> np.ndarray:
    """Single-channel 2-D cross-correlation with zero padding.

    Accumulation runs row-major over the kernel, so the summation order is
    fixed regardless of shapes.
    """
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    if x.ndim != 2 or kernel.ndim != 2:
        raise SchemaError("conv2d expects 2-D input and kernel")
    out = conv2d_bank(
        x[np.newaxis, np.newaxis], kernel[np.newaxis, np.newaxis], stride, padding
    )
    return out[0, 0]


def conv2d_bank(
    x: np.ndarray,
    bank: np.ndarray,
    stride: tuple[int, int] = (1, 1),
    padding: tuple[int, int] = (0, 0),
    bias: np.ndarray | None = None,
) -> np.ndarray:
    """Batched multi-channel cross-correlation.

    x: (batch, in_ch, h, w); bank: (out_ch, in_ch, kh, kw); returns
    (batch, out_ch, oh, ow). Accumulates kernel taps row-major and input
    channels in einsum's fixed reduction order.
    """
    x = np.asarray(x, dtype=np.float64)
    bank = np.asarray(bank, dtype=np.float64)
    if x.ndim != 4 or bank.ndim != 4:
        raise SchemaError("conv2d_bank expects 4-D input and kernel bank")
    if x.shape[1] != bank.shape[1]:
        raise SchemaError(
            f"channel mismatch: input has {x.shape[1]}, bank expects {bank.shape[1]}"
        )
    sh, sw = stride
    ph, pw = padding
    _, _, kh, kw = bank.shape
    oh = conv_output_dim(x.shape[2], kh, sh, ph)
    ow = conv_output_dim(x.shape[3], kw, sw, pw)
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    out = np.zeros((x.shape[0], bank.shape[0], oh, ow))
    for ki in range(kh):
        for kj in range(kw):
            window = x[:, :, ki : ki + sh * oh : sh, kj : kj + sw * ow : sw]
            out += np.einsum("oi,bihw->bohw", bank[:, :, ki, kj], window)
    if bias is not None:
        out += np.asarray(bias, dtype=np.float64)[np.newaxis, :, np.newaxis, np.newaxis]
    return out


def unrolled_conv_matrix(
    bank: np.ndarray,
    input_shape: tuple[int, int, int],
    stride: tuple[int, int] = (1, 1),
    padding: tuple[int, int] = (0, 0),
) -> np.ndarray:
    """Dense weight matrix of the fully connected layer equivalent to a
    convolution, with row-major (channel, row, col) flattening on both sides.
    """
    bank = np.asarray(bank, dtype=np.float64)
    ic, h, w = input_shape
    oc, bank_ic, kh, kw = bank.shape
    if bank_ic != ic:
        raise SchemaError(f"channel mismatch: input has {ic}, bank expects {bank_ic}")
    sh, sw = stride
    ph, pw = padding
    oh = conv_output_dim(h, kh, sh, ph)
    ow = conv_output_dim(w, kw, sw, pw)
    weight = np.zeros((oc * oh * ow, ic * h * w))
    for o in range(oc):
        for oy in range(oh):
            for ox in range(ow):
                row = (o * oh + oy) * ow + ox
                for c in range(ic):
                    for ki in range(kh):
                        for kj in range(kw):
                            iy = oy * sh - ph + ki
                            ix = ox * sw - pw + kj
                            if 0 <= iy < h and 0 <= ix < w:
                                col = (c * h + iy) * w + ix
                                weight[row, col] = bank[o, c, ki, kj]
    return weight
