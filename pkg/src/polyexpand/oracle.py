"""Independent ground truth for derivative checks.

``jet_forward`` pushes a truncated power series x0 + t*direction through the
network with series arithmetic: affine modules act coefficient-wise, smooth
activations use their own ODE recurrences on the coefficients (sigmoid via
s' = (s - s^2) u', tanh via s' = (1 - s^2) u', sine/cosine as a coupled
pair), relu and max-pool freeze to the region seen at t = 0. This shares no
code with the transform-based backward pass, which is the point.

``finite_diff`` is a Richardson-extrapolated central difference, and
``closed_form_reference`` gives analytic derivatives for one-neuron nets
(high-precision arithmetic where no elementary closed form exists).
"""
from __future__ import annotations

from dataclasses import dataclass
from math import factorial, pi

import mpmath
import numpy as np

from .errors import CapabilityError, NumericError, SchemaError
from .network import NetworkSpec, _maxpool_forward, _pool_windows, forward
from .tensor import conv2d_bank

__all__ = ["Jet1D", "jet_forward", "finite_diff", "closed_form_reference"]


@dataclass(frozen=True)
class Jet1D:
    """Coefficients c_0..c_n of a truncated univariate power series in t;
    the k-th directional derivative is k! * c_k."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(c)):
            raise NumericError("jet coefficients are not finite")
        object.__setattr__(self, "coeffs", c)

    @property
    def order(self) -> int:
        return self.coeffs.size - 1

    def derivative(self, k: int) -> float:
        return float(factorial(k) * self.coeffs[k])

    def derivatives(self) -> np.ndarray:
        return np.array([self.derivative(k) for k in range(1, self.order + 1)])


def series_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Truncated Cauchy product along axis 0."""
    n = a.shape[0]
    out = np.zeros_like(a)
    for k in range(n):
        for j in range(k + 1):
            out[k] += a[j] * b[k - j]
    return out


def _series_sine(u: np.ndarray) -> np.ndarray:
    n = u.shape[0] - 1
    s = np.zeros_like(u)
    c = np.zeros_like(u)
    s[0] = np.sin(u[0])
    c[0] = np.cos(u[0])
    for k in range(1, n + 1):
        for j in range(1, k + 1):
            s[k] += j * u[j] * c[k - j]
            c[k] -= j * u[j] * s[k - j]
        s[k] /= k
        c[k] /= k
    return s


def _series_sigmoid_like(u: np.ndarray, s0: np.ndarray, rate) -> np.ndarray:
    """Solve s' = rate(s) * u' on series coefficients, where rate takes the
    partial series s[:m+1] and returns coefficient m of the rate series."""
    n = u.shape[0] - 1
    s = np.zeros_like(u)
    s[0] = s0
    w = np.zeros_like(u)  # rate series, filled as s becomes known
    w[0] = rate(s, 0)
    for k in range(1, n + 1):
        acc = np.zeros_like(u[0])
        for j in range(1, k + 1):
            acc += j * u[j] * w[k - j]
        s[k] = acc / k
        if k <= n - 1:
            w[k] = rate(s, k)
    return s


def _sigmoid_rate(s: np.ndarray, m: int) -> np.ndarray:
    # coefficient m of s - s^2
    conv = np.zeros_like(s[0])
    for i in range(m + 1):
        conv += s[i] * s[m - i]
    return s[m] - conv


def _tanh_rate(s: np.ndarray, m: int) -> np.ndarray:
    conv = np.zeros_like(s[0])
    for i in range(m + 1):
        conv += s[i] * s[m - i]
    if m == 0:
        return 1.0 - conv
    return -conv


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _jet_module(module, series: np.ndarray) -> np.ndarray:
    """Push a (n+1, *shape) coefficient stack through one module."""
    kind = module.kind
    if kind == "fully_connected":
        out = series @ module.weight.T
        out[0] = out[0] + module.bias
        return out
    if kind == "conv2d":
        rows = [
            conv2d_bank(
                series[k][np.newaxis],
                module.weight,
                module.stride,
                module.padding,
                module.bias if k == 0 else None,
            )[0]
            for k in range(series.shape[0])
        ]
        return np.stack(rows)
    if kind == "avg_pool":
        windows = _pool_windows(series, module.kernel, module.stride)
        return windows.sum(axis=(-2, -1)) / (module.kernel[0] * module.kernel[1])
    if kind == "max_pool":
        value0 = series[0][np.newaxis]
        windows = _pool_windows(value0, module.kernel, module.stride)
        flat = windows.reshape(windows.shape[:4] + (-1,))
        maxima = flat.max(axis=-1, keepdims=True)
        if np.any((flat == maxima).sum(axis=-1) > 1):
            raise NumericError("max-pool tie at the reference input: jet is undefined here")
        _, winners = _maxpool_forward(value0, module)
        routed = series.reshape(series.shape[0], -1)[:, winners[0].ravel()]
        return routed.reshape((series.shape[0],) + winners.shape[1:])
    if kind == "flatten":
        return series.reshape(series.shape[0], -1)
    if kind == "unflatten":
        return series.reshape((series.shape[0],) + module.shape)
    if kind == "activation":
        name = module.name
        if name == "sine":
            return _series_sine(series)
        if name == "square":
            return series_mul(series, series)
        if name == "sigmoid":
            return _series_sigmoid_like(series, _stable_sigmoid(series[0]), _sigmoid_rate)
        if name == "tanh":
            return _series_sigmoid_like(series, np.tanh(series[0]), _tanh_rate)
        if name == "relu":
            if np.any(series[0] == 0.0):
                raise NumericError("relu kink at the reference input: jet is undefined here")
            mask = (series[0] > 0).astype(np.float64)
            return series * mask
        raise SchemaError(f"unknown activation {name!r}")
    raise SchemaError(f"unknown module kind {kind!r}")


def jet_forward(net: NetworkSpec, x0, direction, n: int) -> Jet1D:
    """Truncated series of t -> f(x0 + t * direction) up to order n."""
    if net.output_size != 1:
        raise CapabilityError("jet oracle needs a single-output network")
    x0 = np.asarray(x0, dtype=np.float64).reshape(net.input_shape)
    direction = np.asarray(direction, dtype=np.float64).reshape(net.input_shape)
    if not np.any(direction):
        raise SchemaError("direction must be nonzero")
    series = np.zeros((n + 1,) + net.input_shape)
    series[0] = x0
    series[1] = direction
    for module in net.modules:
        series = _jet_module(module, series)
    return Jet1D(series.reshape(n + 1))


# ---------------------------------------------------------------------------
# Finite differences
# ---------------------------------------------------------------------------

# Base steps per derivative order: rounding error grows like eps / h^k, so
# higher orders need a larger step than the first-order default.
_FD_STEPS = {1: 1e-3, 2: 1e-3, 3: 1e-2, 4: 2e-2}


def finite_diff(net: NetworkSpec, x0, coordinate: int, k: int) -> float:
    """Central difference with one Richardson step for d^k f / dx_i^k.

    Only orders up to 4 are meaningful in 64-bit arithmetic.
    """
    if not 1 <= k <= 4:
        raise SchemaError(f"finite differences support orders 1..4, got {k}")
    if net.output_size != 1:
        raise CapabilityError("finite differences need a single-output network")
    x0 = np.asarray(x0, dtype=np.float64).reshape(-1)
    if not 0 <= coordinate < x0.size:
        raise SchemaError(f"coordinate {coordinate} out of range")
    h = _FD_STEPS[k] * max(1.0, abs(x0[coordinate]))

    def stencil(step: float) -> float:
        offsets = np.array([k / 2.0 - j for j in range(k + 1)]) * step
        signs = np.array([(-1.0) ** j * _binom(k, j) for j in range(k + 1)])
        points = np.tile(x0, (k + 1, 1))
        points[:, coordinate] += offsets
        values = forward(net, points.reshape((k + 1,) + net.input_shape)).reshape(-1)
        return float(signs @ values) / step**k

    coarse = stencil(h)
    fine = stencil(h / 2.0)
    return (4.0 * fine - coarse) / 3.0


def _binom(n: int, k: int) -> float:
    return float(factorial(n) // (factorial(k) * factorial(n - k)))


# ---------------------------------------------------------------------------
# Closed-form references
# ---------------------------------------------------------------------------


def closed_form_reference(name: str, params: tuple[float, float], x0: float, n: int) -> np.ndarray:
    """Derivatives 1..n of f(x) = act(w * x + b) for one-neuron networks.

    The sine case is the exact phase-shift formula; sigmoid and tanh are
    differentiated in 50-digit arithmetic, which is exact at float64 scale.
    """
    w, b = float(params[0]), float(params[1])
    inner = w * x0 + b
    if name == "sin_affine":
        return np.array([w**k * np.sin(inner + k * pi / 2.0) for k in range(1, n + 1)])
    if name in ("sigmoid_affine", "tanh_affine"):
        with mpmath.workdps(50):
            if name == "sigmoid_affine":
                func = lambda t: 1 / (1 + mpmath.exp(-t))  # noqa: E731
            else:
                func = mpmath.tanh
            return np.array(
                [float(w**k * mpmath.diff(func, inner, k)) for k in range(1, n + 1)]
            )
    raise SchemaError(f"unknown closed-form reference {name!r}")
