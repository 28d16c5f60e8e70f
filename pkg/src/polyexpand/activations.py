"""Activation functions and their derivatives to arbitrary order.

Sigmoid and tanh derivatives are polynomials in the activation value itself;
their integer coefficient tables are generated once per order by exact
integer recurrences (arbitrary-precision, so no silent wraparound) and then
evaluated in float64. Sine cycles through its four derivatives, relu and the
square test activation are handled directly.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from .errors import SchemaError

__all__ = [
    "ACTIVATION_NAMES",
    "sigmoid_table",
    "tanh_table",
    "activation_value",
    "activation_derivs",
]

ACTIVATION_NAMES = ("sine", "relu", "sigmoid", "tanh", "square")


@lru_cache(maxsize=None)
def sigmoid_table(n: int) -> tuple[tuple[int, ...], ...]:
    """Lower-triangular (n+1) x (n+1) integer table B with
    sigmoid^(k)(x) = sum_i B[k+1, i] * sigmoid(x)^i (rows/cols 1-based)."""
    if n < 1:
        raise SchemaError(f"table order must be >= 1, got {n}")
    size = n + 1
    b = [[0] * (size + 1) for _ in range(size + 1)]
    b[1][1] = 1
    for i in range(2, size + 1):
        for j in range(1, i + 1):
            b[i][j] = j * b[i - 1][j] - (j - 1) * b[i - 1][j - 1]
    return tuple(tuple(row[1:]) for row in b[1:])


@lru_cache(maxsize=None)
def tanh_table(n: int) -> tuple[tuple[int, ...], ...]:
    """Lower-triangular (n+2) x (n+2) integer table C with
    tanh^(k)(x) = sum_i C[k+2, i] * tanh(x)^(i-1) (rows/cols 1-based)."""
    if n < 1:
        raise SchemaError(f"table order must be >= 1, got {n}")
    size = n + 2
    c = [[0] * (size + 2) for _ in range(size + 1)]
    c[1][1] = 1
    c[2][2] = 1
    for i in range(3, size + 1):
        for j in range(1, i + 1):
            c[i][j] = j * c[i - 1][j + 1] - (j - 2) * c[i - 1][j - 1]
    return tuple(tuple(row[1 : size + 1]) for row in c[1:])


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def activation_value(name: str, x) -> np.ndarray:
    """Forward value of a named activation, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    if name == "sine":
        return np.sin(x)
    if name == "relu":
        return np.maximum(0.0, x)
    if name == "sigmoid":
        return _sigmoid(x)
    if name == "tanh":
        return np.tanh(x)
    if name == "square":
        return x * x
    raise SchemaError(f"unknown activation {name!r}")


def activation_derivs(name: str, x, n: int) -> np.ndarray:
    """Derivatives 1..n of a named activation, elementwise.

    Returns an array of shape (n,) + x.shape; entry k-1 holds the k-th
    derivative at x. At exactly x = 0 relu uses derivative 0.
    """
    if n < 1:
        raise SchemaError(f"derivative order must be >= 1, got {n}")
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros((n,) + x.shape)
    if name == "sine":
        cycle = (np.cos(x), -np.sin(x), -np.cos(x), np.sin(x))
        for k in range(1, n + 1):
            out[k - 1] = cycle[(k - 1) % 4]
    elif name == "relu":
        out[0] = (x > 0).astype(np.float64)
    elif name == "square":
        out[0] = 2.0 * x
        if n >= 2:
            out[1] = 2.0
    elif name == "sigmoid":
        table = sigmoid_table(n)
        s = _sigmoid(x)
        powers = np.stack([s ** i for i in range(1, n + 2)])
        for k in range(1, n + 1):
            row = table[k]  # row k+1, 1-based
            for i in range(1, k + 2):
                if row[i - 1]:
                    out[k - 1] += float(row[i - 1]) * powers[i - 1]
    elif name == "tanh":
        table = tanh_table(n)
        s = np.tanh(x)
        powers = np.stack([s ** i for i in range(0, n + 2)])
        for k in range(1, n + 1):
            row = table[k + 1]  # row k+2, 1-based
            for i in range(1, k + 3):
                if row[i - 1]:
                    out[k - 1] += float(row[i - 1]) * powers[i - 1]
    else:
        raise SchemaError(f"unknown activation {name!r}")
    return out
