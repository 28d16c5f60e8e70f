import mpmath
import numpy as np
import pytest

from polyexpand.activations import (
    activation_derivs,
    activation_value,
    sigmoid_table,
    tanh_table,
)
from polyexpand.errors import SchemaError

SAMPLE_POINTS = np.linspace(-3.0, 3.0, 20)


def central_diff_highprec(func, x, k, h="1e-4"):
    """Central difference of order k evaluated in 50-digit arithmetic, so
    only the O(h^2) truncation error remains."""
    with mpmath.workdps(50):
        h = mpmath.mpf(h)
        total = mpmath.mpf(0)
        for j in range(k + 1):
            offset = (mpmath.mpf(k) / 2 - j) * h
            total += (-1) ** j * mpmath.binomial(k, j) * func(mpmath.mpf(x) + offset)
        return float(total / h**k)


class TestTables:
    def test_sigmoid_rows(self):
        table = sigmoid_table(3)
        assert table[0][:2] == (1, 0)
        assert table[1][:2] == (1, -1)
        assert table[2][:3] == (1, -3, 2)
        assert table[3][:4] == (1, -7, 12, -6)

    def test_tanh_rows(self):
        table = tanh_table(3)
        assert table[0][:2] == (1, 0)
        assert table[1][:3] == (0, 1, 0)
        assert table[2][:4] == (1, 0, -1, 0)
        assert table[3][:5] == (0, -2, 0, 2, 0)

    def test_lower_triangular(self):
        b = sigmoid_table(8)
        c = tanh_table(8)
        for i, row in enumerate(b):
            assert all(v == 0 for v in row[i + 1 :])
        for i, row in enumerate(c):
            assert all(v == 0 for v in row[i + 1 :])

    def test_exact_integers_at_high_order(self):
        # entries overflow 64-bit well before order 30; Python ints keep them exact
        table = sigmoid_table(25)
        assert isinstance(table[-1][0], int)
        assert max(abs(v) for v in table[-1]) > 2**63


class TestKnownValues:
    def test_sigmoid_at_zero(self):
        d = activation_derivs("sigmoid", 0.0, 3)
        assert np.allclose(d, [0.25, 0.0, -0.125], atol=1e-15)

    def test_tanh_at_zero(self):
        d = activation_derivs("tanh", 0.0, 3)
        assert np.allclose(d, [1.0, 0.0, -2.0], atol=1e-15)

    def test_sine_cycle(self):
        d = activation_derivs("sine", 0.0, 4)
        assert np.allclose(d, [1.0, 0.0, -1.0, 0.0], atol=1e-15)

    def test_relu_convention(self):
        d = activation_derivs("relu", np.array([-1.0, 0.0, 2.0]), 3)
        assert np.array_equal(d[0], [0.0, 0.0, 1.0])
        assert np.array_equal(d[1], [0.0, 0.0, 0.0])

    def test_square(self):
        d = activation_derivs("square", np.array([3.0]), 4)
        assert np.array_equal(d[:, 0], [6.0, 2.0, 0.0, 0.0])

    def test_unknown_name(self):
        with pytest.raises(SchemaError):
            activation_derivs("gelu", 0.0, 2)
        with pytest.raises(SchemaError):
            activation_value("gelu", 0.0)


class TestFiniteDifferenceCrossCheck:
    @pytest.mark.parametrize("name,func", [
        ("sigmoid", lambda t: 1 / (1 + mpmath.exp(-t))),
        ("tanh", mpmath.tanh),
    ])
    def test_derivatives_match_central_differences(self, name, func):
        for k in range(1, 7):
            for x in SAMPLE_POINTS:
                got = float(activation_derivs(name, float(x), k)[k - 1])
                ref = central_diff_highprec(func, float(x), k)
                rel = abs(got - ref) / max(abs(got), abs(ref), 1e-30)
                assert rel <= 1e-5, (name, k, x, got, ref)

    def test_sine_against_phase_shift(self):
        for k in range(1, 9):
            for x in SAMPLE_POINTS:
                got = float(activation_derivs("sine", float(x), k)[k - 1])
                assert abs(got - np.sin(x + k * np.pi / 2)) <= 1e-12
