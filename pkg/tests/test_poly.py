import numpy as np
import pytest

from polyexpand.backward import expand_mixed, expand_unmixed
from polyexpand.errors import NumericError, SchemaError
from polyexpand.network import FullyConnected, NetworkSpec, forward
from polyexpand.poly import (
    TaylorPolynomial,
    assemble,
    bounds_1d,
    convergence_ratios,
    evaluate,
    evaluate_batch,
    heatmap,
    recenter,
)
from tests.conftest import make_mlp, scalar_chain, small_cnn, square_construction_net


def expand_poly(net, x0, order, mode="unmixed"):
    x0 = np.asarray(x0, dtype=np.float64)
    stack = (
        expand_mixed(net, x0, order) if mode == "mixed" else expand_unmixed(net, x0, order)
    )
    f0 = float(forward(net, x0.reshape(net.input_shape))[0])
    return assemble(stack, x0.reshape(-1), f0, order, mode)


def linear_scalar_net(w=2.0, b=1.0):
    return NetworkSpec((1,), (FullyConnected(np.array([[w]]), np.array([b])),))


class TestAssemble:
    def test_scalar_linear_net(self):
        poly = expand_poly(linear_scalar_net(), [0.0], 3)
        assert poly.f0 == 1.0
        assert poly.terms == {((0, 1),): 2.0}

    def test_square_construction_mixed(self):
        net = square_construction_net()
        poly = expand_poly(net, [0.0, 0.0], 2, mode="mixed")
        assert abs(poly.terms[((0, 2),)] - 0.5) <= 1e-12
        assert abs(poly.terms[((1, 1),)] - 0.5) <= 1e-12
        others = {k: v for k, v in poly.terms.items() if k not in (((0, 2),), ((1, 1),))}
        assert all(abs(v) <= 1e-12 for v in others.values())

    def test_mode_mismatch_rejected(self, rng):
        net = make_mlp((2, 6, 1), "tanh", seed=0)
        stack = expand_unmixed(net, np.zeros(2), 3)
        with pytest.raises(SchemaError):
            assemble(stack, np.zeros(2), 0.0, 3, "mixed")

    def test_unmixed_keeps_single_coordinate_powers(self, rng):
        net = make_mlp((3, 8, 1), "sine", w0=2.0, seed=6)
        poly = expand_poly(net, rng.normal(size=3), 4)
        assert all(len(index) == 1 for index in poly.terms)


class TestEvaluate:
    def test_at_reference_returns_f0_exactly(self, rng):
        net = make_mlp((2, 8, 1), "tanh", w0=2.0, seed=8)
        x0 = rng.normal(size=2)
        poly = expand_poly(net, x0, 5)
        assert evaluate(poly, x0) == poly.f0

    def test_linear_poly(self):
        poly = TaylorPolynomial(
            x0=np.zeros(1), f0=1.0, order=1, mode="unmixed", terms={((0, 1),): 2.0}
        )
        assert evaluate(poly, np.array([3.0])) == 7.0

    def test_order10_error_within_remainder_bound(self):
        net = make_mlp((1, 24, 1), "sine", w0=3.0, seed=2)
        x0 = 0.1
        n = 10
        poly = expand_poly(net, [x0], n)
        report = bounds_1d(net, x0, n, (-0.4, 0.6), grid_size=201)
        x = x0 + 0.1
        err = abs(evaluate(poly, np.array([x])) - float(forward(net, np.array([x]))[0]))
        assert err <= report.e2

    def test_dimension_mismatch(self):
        poly = TaylorPolynomial(
            x0=np.zeros(2), f0=0.0, order=1, mode="unmixed", terms={}
        )
        with pytest.raises(SchemaError):
            evaluate(poly, np.zeros(3))


class TestEvaluateBatch:
    def test_reference_batch(self, rng):
        net = make_mlp((2, 6, 1), "tanh", w0=2.0, seed=3)
        x0 = rng.normal(size=2)
        poly = expand_poly(net, x0, 4)
        out = evaluate_batch(poly, np.tile(x0, (3, 1)))
        assert np.array_equal(out, np.full(3, poly.f0))

    def test_single_row_equals_evaluate(self, rng):
        net = make_mlp((3, 6, 1), "sine", w0=2.0, seed=4)
        x0 = rng.normal(size=3)
        poly = expand_poly(net, x0, 4)
        x = x0 + rng.normal(size=3) * 0.1
        assert evaluate_batch(poly, x[np.newaxis, :])[0] == evaluate(poly, x)

    def test_batch_bitwise_equals_scalar_loop(self, rng):
        net = make_mlp((2, 10, 1), "tanh", w0=2.0, seed=5)
        x0 = rng.normal(size=2)
        poly = expand_poly(net, x0, 6)
        xs = x0 + rng.normal(size=(40, 2)) * 0.3
        batch = evaluate_batch(poly, xs)
        loop = np.array([evaluate(poly, x) for x in xs])
        assert np.array_equal(batch, loop)


class TestRecenter:
    def test_square_construction_all_reference_points(self):
        net = square_construction_net()
        for ref in ([0.0, 0.0], [0.5, 0.5], [-0.5, -0.5]):
            poly = expand_poly(net, ref, 2, mode="mixed")
            centered = recenter(poly, np.zeros(2))
            assert abs(centered.terms.get(((0, 2),), 0.0) - 0.5) <= 1e-10
            assert abs(centered.terms.get(((1, 1),), 0.0) - 0.5) <= 1e-10
            assert abs(centered.f0) <= 1e-10
            rest = {
                k: v
                for k, v in centered.terms.items()
                if k not in (((0, 2),), ((1, 1),))
            }
            assert all(abs(v) <= 1e-10 for v in rest.values())

    def test_recentring_preserves_values(self, rng):
        net = make_mlp((2, 8, 1), "square", w0=2.0, seed=7)
        x0 = np.array([0.3, -0.2])
        poly = expand_poly(net, x0, 2, mode="mixed")
        moved = recenter(poly, np.array([0.0, 0.1]))
        for x in rng.normal(size=(10, 2)):
            assert abs(evaluate(poly, x) - evaluate(moved, x)) <= 1e-9


class TestPolynomialExactness:
    def test_degree2_construction_exact_on_grid(self):
        net = square_construction_net()
        poly = expand_poly(net, [0.0, 0.0], 2, mode="mixed")
        grid = np.linspace(-1, 1, 21)
        pts = np.array([[a, b] for a in grid for b in grid])
        net_vals = forward(net, pts).reshape(-1)
        poly_vals = evaluate_batch(poly, pts)
        assert np.max(np.abs(net_vals - poly_vals)) <= 1e-9

    def test_scalar_square_chain_degree4(self):
        net = scalar_chain("square", 2, weight=0.7, bias=0.3)
        poly = expand_poly(net, [0.2], 4)
        xs = np.linspace(-1, 1, 101)[:, np.newaxis]
        net_vals = forward(net, xs).reshape(-1)
        poly_vals = evaluate_batch(poly, xs)
        assert np.max(np.abs(net_vals - poly_vals)) <= 1e-9

    @pytest.mark.parametrize("n", [2, 3])
    def test_local_contraction_order(self, n):
        # error at x0 + h scales like h^(n+1): doubling h multiplies it by
        # about 2^(n+1) (within a factor of 3)
        net = make_mlp((1, 16, 1), "tanh", w0=2.0, seed=10)
        x0 = 0.25
        poly = expand_poly(net, [x0], n)

        def err(h):
            x = np.array([x0 + h])
            return abs(evaluate(poly, x) - float(forward(net, x)[0]))

        ratio = err(2e-2) / err(1e-2)
        assert 2 ** (n + 1) / 3 <= ratio <= 2 ** (n + 1) * 3


class TestBounds:
    def test_linear_net_zero_remainder(self):
        report = bounds_1d(linear_scalar_net(), 0.0, 2, (-1.0, 1.0), grid_size=101)
        assert report.e2 == 0.0
        assert report.e1 <= 1e-12
        assert np.allclose(report.f1, report.f_net)
        assert np.allclose(report.f2, report.f_net)

    def test_constant_net_collapses(self):
        net = NetworkSpec(
            (1,), (FullyConnected(np.array([[0.0]]), np.array([2.5])),)
        )
        report = bounds_1d(net, 0.0, 3, (-1.0, 1.0), grid_size=101)
        assert np.allclose(report.f1, 2.5)
        assert np.allclose(report.f2, 2.5)
        assert report.e1 == 0.0 and report.e2 == 0.0

    def test_envelope_ordering_and_e1_le_e2(self):
        net = make_mlp((1, 20, 1), "sine", w0=3.0, seed=12)
        for n in range(1, 15):
            report = bounds_1d(net, 0.0, n, (-6.0, 6.0), grid_size=301)
            assert np.all(report.f_lower <= report.f_upper + 1e-12)
            assert report.e1 <= report.e2

    def test_rejects_multidim(self):
        net = make_mlp((2, 4, 1), "tanh", seed=0)
        with pytest.raises(SchemaError):
            bounds_1d(net, 0.0, 2, (-1, 1))

    def test_rejects_outside_reference(self):
        with pytest.raises(SchemaError):
            bounds_1d(linear_scalar_net(), 2.0, 2, (-1, 1))

    def test_rejects_small_grid(self):
        with pytest.raises(SchemaError):
            bounds_1d(linear_scalar_net(), 0.0, 2, (-1, 1), grid_size=50)


class TestConvergence:
    def test_linear_ratios(self):
        stack = expand_unmixed(linear_scalar_net(), np.zeros(1), 4)
        report = convergence_ratios(stack)
        assert report.ratios[0] == 1.0
        assert report.ratios[1:] == (0.0, 0.0, 0.0)
        assert not report.diverging

    def test_small_weight_ratio_scale(self):
        net = make_mlp((1, 64, 64, 64, 64, 1), "tanh", w0=0.01, seed=1)
        stack = expand_unmixed(net, np.zeros(1), 2)
        report = convergence_ratios(stack)
        assert 1e-5 <= report.ratios[1] <= 1e-1

    def test_large_weight_divergence_flag(self):
        net = make_mlp((1, 64, 64, 64, 64, 1), "tanh", w0=10.0, seed=1)
        stack = expand_unmixed(net, np.zeros(1), 10)
        report = convergence_ratios(stack)
        assert report.ratios[-1] > 1.0
        assert report.diverging

    def test_zero_gradient_rejected(self):
        net = NetworkSpec(
            (1,), (FullyConnected(np.array([[0.0]]), np.array([1.0])),)
        )
        stack = expand_unmixed(net, np.zeros(1), 3)
        with pytest.raises(NumericError):
            convergence_ratios(stack)


class TestHeatmap:
    def test_zero_dx_zero_map(self, rng):
        net = small_cnn(seed=1)
        stack = expand_unmixed(net, rng.normal(size=(1, 8, 8)), 3)
        out = heatmap(stack, (1, 8, 8), 0.0)
        assert np.array_equal(out.values, np.zeros((1, 8, 8)))

    def test_order1_equals_gradient_bitwise(self, rng):
        net = small_cnn(seed=2)
        stack = expand_unmixed(net, rng.normal(size=(1, 8, 8)), 1)
        out = heatmap(stack, (1, 8, 8), 1.0)
        assert np.array_equal(out.values, stack.blocks[0].reshape(1, 8, 8))

    def test_matches_perturbation_on_small_cnn(self, rng):
        net = small_cnn(seed=5, w0=0.1)
        x0 = rng.normal(size=(1, 8, 8))
        stack = expand_unmixed(net, x0, 4)
        taylor = heatmap(stack, (1, 8, 8), 1.0).values
        base = float(forward(net, x0)[0])
        flat = x0.reshape(-1)
        perturbed = np.tile(flat, (flat.size, 1))
        perturbed[np.arange(flat.size), np.arange(flat.size)] += 1.0
        outs = forward(net, perturbed.reshape(-1, 1, 8, 8)).reshape(-1)
        reference = (outs - base).reshape(1, 8, 8)
        assert np.mean(np.abs(taylor - reference)) <= 5e-2

    def test_shape_mismatch(self, rng):
        net = small_cnn(seed=1)
        stack = expand_unmixed(net, rng.normal(size=(1, 8, 8)), 2)
        with pytest.raises(SchemaError):
            heatmap(stack, (1, 7, 7), 1.0)
