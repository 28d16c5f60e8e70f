import numpy as np
import pytest

from polyexpand.network import (
    Activation,
    Conv2D,
    Flatten,
    FullyConnected,
    MaxPool,
    NetworkSpec,
)


def make_mlp(widths, activation, w0=1.0, seed=0, bias_scale=0.1):
    """MLP with uniform(-w0/fan_in, w0/fan_in) weights, like the convergence
    study setup; widths = (in, hidden..., out)."""
    rng = np.random.default_rng(seed)
    modules = []
    for i in range(len(widths) - 1):
        fan_in = widths[i]
        w = rng.uniform(-w0 / fan_in, w0 / fan_in, size=(widths[i + 1], fan_in))
        b = rng.uniform(-bias_scale, bias_scale, size=widths[i + 1])
        modules.append(FullyConnected(w, b))
        if i < len(widths) - 2:
            modules.append(Activation(activation))
    return NetworkSpec((widths[0],), tuple(modules))


def scalar_chain(activation, depth, seed=0, weight=1.0, bias=0.0):
    """Width-1 chain alternating 1x1 affine and activation modules."""
    modules = []
    for _ in range(depth):
        modules.append(FullyConnected(np.array([[float(weight)]]), np.array([float(bias)])))
        modules.append(Activation(activation))
    modules.append(FullyConnected(np.array([[1.0]]), np.zeros(1)))
    return NetworkSpec((1,), tuple(modules))


def square_construction_net():
    """Exact realization of y = (x1^2 + x2)/2 with one square stage:
    x2 = ((x2+1)^2 - (x2-1)^2)/4."""
    w1 = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    b1 = np.array([0.0, 1.0, -1.0])
    w2 = np.array([[0.5, 0.125, -0.125]])
    return NetworkSpec(
        (2,),
        (
            FullyConnected(w1, b1),
            Activation("square"),
            FullyConnected(w2, np.zeros(1)),
        ),
    )


def small_cnn(seed=0, w0=0.1, in_hw=8, channels=2, activation="tanh"):
    """conv -> activation -> max_pool -> flatten -> fc head; single
    nonlinear stage, so stack propagation is complete on it."""
    rng = np.random.default_rng(seed)
    conv_w = rng.uniform(-w0, w0, size=(channels, 1, 3, 3))
    conv_b = rng.uniform(-w0, w0, size=channels)
    side = (in_hw - 2) // 2  # 3x3 valid conv then 2x2/2 pool
    head = rng.uniform(-w0, w0, size=(1, channels * side * side))
    return NetworkSpec(
        (1, in_hw, in_hw),
        (
            Conv2D(conv_w, conv_b),
            Activation(activation),
            MaxPool((2, 2), (2, 2)),
            Flatten(),
            FullyConnected(head, np.zeros(1)),
        ),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
