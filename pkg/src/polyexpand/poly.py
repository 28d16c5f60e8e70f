"""Taylor polynomials assembled from derivative stacks: evaluation,
recentering, interval bounds, convergence diagnostics and heat maps.

A term index is a sparse multiset of input coordinates, stored as a tuple of
(coordinate, multiplicity) pairs sorted by coordinate. The constant lives in
``f0``; the term map only holds degree >= 1 entries. Terms are kept and
serialized in graded-lexicographic order so evaluation and files are
deterministic.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import factorial

import numpy as np

from .backward import expand_unmixed, expand_unmixed_batch
from .chain import DerivStack, MixedDerivStack, lex_offset
from .errors import NumericError, SchemaError
from .network import NetworkSpec, forward

__all__ = [
    "TermIndex",
    "TaylorPolynomial",
    "assemble",
    "evaluate",
    "evaluate_batch",
    "recenter",
    "BoundsReport",
    "bounds_1d",
    "ConvergenceReport",
    "convergence_ratios",
    "HeatMap",
    "heatmap",
]

TermIndex = tuple[tuple[int, int], ...]  # ((coordinate, multiplicity), ...)


def term_degree(index: TermIndex) -> int:
    return sum(m for _, m in index)


def _grlex_key(index: TermIndex, dim: int):
    exps = [0] * dim
    for coord, mult in index:
        exps[coord] = mult
    return (term_degree(index), tuple(-e for e in exps))


def _canonical(index) -> TermIndex:
    pairs = tuple((int(c), int(m)) for c, m in index)
    if any(m < 1 for _, m in pairs):
        raise SchemaError(f"term multiplicities must be >= 1: {pairs}")
    if sorted(c for c, _ in pairs) != sorted(set(c for c, _ in pairs)):
        raise SchemaError(f"term index repeats a coordinate: {pairs}")
    return tuple(sorted(pairs))


@dataclass(frozen=True)
class TaylorPolynomial:
    """Polynomial around a reference input: value is
    f0 + sum_alpha c_alpha * prod_j (x_j - x0_j)^alpha_j."""

    x0: np.ndarray
    f0: float
    order: int
    mode: str  # "mixed" or "unmixed"
    terms: dict[TermIndex, float] = field(repr=False)

    def __post_init__(self):
        x0 = np.asarray(self.x0, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "x0", x0)
        if self.mode not in ("mixed", "unmixed"):
            raise SchemaError(f"polynomial mode must be mixed or unmixed, got {self.mode!r}")
        if not np.isfinite(self.f0):
            raise NumericError("polynomial base value is not finite")
        clean: dict[TermIndex, float] = {}
        for index, coef in self.terms.items():
            index = _canonical(index)
            if index == ():
                raise SchemaError("the constant term belongs in f0, not the term map")
            if term_degree(index) > self.order:
                raise SchemaError(
                    f"term {index} exceeds the declared order {self.order}"
                )
            if any(c >= x0.size for c, _ in index):
                raise SchemaError(f"term {index} references a coordinate beyond x0")
            if not np.isfinite(coef):
                raise NumericError(f"coefficient for {index} is not finite")
            if index in clean:
                raise SchemaError(f"duplicate term index {index}")
            clean[index] = float(coef)
        ordered = dict(
            sorted(clean.items(), key=lambda kv: _grlex_key(kv[0], x0.size))
        )
        object.__setattr__(self, "terms", ordered)

    @property
    def dim(self) -> int:
        return self.x0.size

    def degree(self) -> int:
        """Largest degree actually present (0 for a constant)."""
        return max((term_degree(i) for i in self.terms), default=0)


def assemble(stack, x0, f0: float, order: int, mode: str) -> TaylorPolynomial:
    """Turn a derivative stack at x0 into the Taylor coefficient map.

    A derivative with coordinate multiplicities (a_1, ..., a_p) contributes
    the coefficient derivative / prod(a_j!); in mixed mode every multiset of
    coordinates appears, in unmixed mode only single-coordinate powers.
    Exact-zero coefficients are dropped.
    """
    x0 = np.asarray(x0, dtype=np.float64).reshape(-1)
    terms: dict[TermIndex, float] = {}
    if mode == "unmixed":
        if not isinstance(stack, DerivStack):
            raise SchemaError("unmixed assembly expects an unmixed derivative stack")
        if stack.width != x0.size:
            raise SchemaError(
                f"stack width {stack.width} does not match x0 dimension {x0.size}"
            )
        if stack.order != order:
            raise SchemaError(f"stack order {stack.order} != requested order {order}")
        for k in range(1, order + 1):
            block = stack.blocks[k - 1]
            for i in range(x0.size):
                coef = block[i] / factorial(k)
                if coef != 0.0:
                    terms[((i, k),)] = float(coef)
    elif mode == "mixed":
        if not isinstance(stack, MixedDerivStack):
            raise SchemaError("mixed assembly expects a mixed derivative stack")
        if stack.input_dim != x0.size:
            raise SchemaError(
                f"stack dimension {stack.input_dim} does not match x0 dimension {x0.size}"
            )
        if stack.order != order:
            raise SchemaError(f"stack order {stack.order} != requested order {order}")
        p = stack.input_dim
        for k in range(1, order + 1):
            block = stack.blocks[k - 1]
            for combo in itertools.combinations_with_replacement(range(p), k):
                value = block[lex_offset(combo, p)]
                if value == 0.0:
                    continue
                index = tuple((c, len(list(g))) for c, g in itertools.groupby(combo))
                denom = 1
                for _, m in index:
                    denom *= factorial(m)
                terms[index] = float(value / denom)
    else:
        raise SchemaError(f"mode must be mixed or unmixed, got {mode!r}")
    return TaylorPolynomial(x0=x0, f0=float(f0), order=order, mode=mode, terms=terms)


def _eval_rows(poly: TaylorPolynomial, dx: np.ndarray) -> np.ndarray:
    max_pow: dict[int, int] = {}
    for index in poly.terms:
        for coord, mult in index:
            if mult > max_pow.get(coord, 0):
                max_pow[coord] = mult
    # powers by repeated multiplication: the per-element op chain is the same
    # for any batch size, so batched and scalar evaluation agree bitwise
    powers: dict[int, list[np.ndarray]] = {}
    for coord, top in max_pow.items():
        col = dx[:, coord]
        ladder = [col]
        for _ in range(top - 1):
            ladder.append(ladder[-1] * col)
        powers[coord] = ladder
    acc = np.full(dx.shape[0], poly.f0)
    for index, coef in poly.terms.items():
        term = np.full(dx.shape[0], coef)
        for coord, mult in index:
            term = term * powers[coord][mult - 1]
        acc = acc + term
    return acc


def evaluate(poly: TaylorPolynomial, x) -> float:
    """Value at one input, term order fixed (graded-lexicographic)."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape != poly.x0.shape:
        raise SchemaError(f"input dimension {x.size} does not match x0 ({poly.x0.size})")
    return float(_eval_rows(poly, (x - poly.x0)[np.newaxis, :])[0])


def evaluate_batch(poly: TaylorPolynomial, xs) -> np.ndarray:
    """Vectorized evaluation over rows; per-row results are bit-identical to
    the scalar path because every row runs the same elementwise chain."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim == 1:
        xs = xs[:, np.newaxis] if poly.dim == 1 else xs[np.newaxis, :]
    if xs.ndim != 2 or xs.shape[1] != poly.dim:
        raise SchemaError(f"batch shape {xs.shape} does not match x0 dimension {poly.dim}")
    return _eval_rows(poly, xs - poly.x0[np.newaxis, :])


def recenter(poly: TaylorPolynomial, new_x0) -> TaylorPolynomial:
    """Rewrite the polynomial around another reference point (exact in the
    coefficients, up to float rounding). Term count can grow combinatorially
    with degree, so this is meant for low-dimensional diagnostics."""
    new_x0 = np.asarray(new_x0, dtype=np.float64).reshape(-1)
    if new_x0.shape != poly.x0.shape:
        raise SchemaError("new reference point has the wrong dimension")
    shift = new_x0 - poly.x0  # (x - x0) = (x - new_x0) + (new_x0 - x0)
    out: dict[TermIndex, float] = {}
    const = poly.f0
    for index, coef in poly.terms.items():
        # expand prod_j ((x_j - new_x0_j) + shift_j)^{m_j}
        expansions = []
        for coord, mult in index:
            expansions.append(
                [
                    (coord, t, _binomial(mult, t) * shift[coord] ** (mult - t))
                    for t in range(mult + 1)
                ]
            )
        for picks in itertools.product(*expansions):
            c = coef
            new_index = []
            for coord, t, factor in picks:
                c *= factor
                if t:
                    new_index.append((coord, t))
            if not new_index:
                const += c
            else:
                key = tuple(sorted(new_index))
                out[key] = out.get(key, 0.0) + c
    return TaylorPolynomial(
        x0=new_x0, f0=const, order=poly.order, mode=poly.mode, terms=out
    )


def _binomial(n: int, k: int) -> float:
    return float(factorial(n) // (factorial(k) * factorial(n - k)))


# ---------------------------------------------------------------------------
# Interval bounds (1-D networks)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundsReport:
    """Envelope of a 1-D network and its expansion over an interval.

    f1/f2 replace the polynomial's top-order coefficient with the grid
    extremes of the order-n derivative; f_u/f_d are their pointwise max/min.
    e1 is the observed max |network - polynomial| on the grid, e2 the
    theoretical cap (dmax - dmin)/n! * max|interval edge - x0|^n.
    """

    interval: tuple[float, float]
    order: int
    x0: float
    grid: np.ndarray
    f_net: np.ndarray
    f_poly: np.ndarray
    f1: np.ndarray
    f2: np.ndarray
    f_upper: np.ndarray
    f_lower: np.ndarray
    dmax: float
    dmin: float
    e1: float
    e2: float


def bounds_1d(
    net: NetworkSpec, x0: float, order: int, interval: tuple[float, float], grid_size: int = 2001
) -> BoundsReport:
    """Bounds report for a scalar-input network; derivative extremes come
    from expanding at every grid point in one batched pass."""
    if net.input_shape != (1,):
        raise SchemaError(f"bounds need a 1-D input network, got input {net.input_shape}")
    a, b = float(interval[0]), float(interval[1])
    if not a < x0 < b:
        raise SchemaError(f"reference point {x0} must lie inside ({a}, {b})")
    if grid_size < 101:
        raise SchemaError(f"grid size must be >= 101, got {grid_size}")
    grid = np.linspace(a, b, grid_size)
    grid_blocks = expand_unmixed_batch(net, grid[:, np.newaxis], order)
    fn_grid = grid_blocks[order - 1][:, 0]
    dmax = float(fn_grid.max())
    dmin = float(fn_grid.min())

    ref = np.array([x0])
    stack = expand_unmixed(net, ref, order)
    f0 = float(forward(net, ref)[0])
    poly = assemble(stack, ref, f0, order, "unmixed")
    f_net = forward(net, grid[:, np.newaxis])[:, 0]
    f_poly = evaluate_batch(poly, grid[:, np.newaxis])

    delta = grid - x0
    prefix = np.full_like(grid, f0)
    for k in range(1, order):
        prefix = prefix + stack.blocks[k - 1][0] / factorial(k) * delta**k
    top = delta**order / factorial(order)
    f1 = prefix + dmax * top
    f2 = prefix + dmin * top
    e1 = float(np.max(np.abs(f_net - f_poly)))
    e2 = (dmax - dmin) / factorial(order) * max(abs(a - x0), abs(b - x0)) ** order
    return BoundsReport(
        interval=(a, b),
        order=order,
        x0=float(x0),
        grid=grid,
        f_net=f_net,
        f_poly=f_poly,
        f1=f1,
        f2=f2,
        f_upper=np.maximum(f1, f2),
        f_lower=np.minimum(f1, f2),
        dmax=dmax,
        dmin=dmin,
        e1=e1,
        e2=float(e2),
    )


# ---------------------------------------------------------------------------
# Convergence diagnostics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConvergenceReport:
    """Per-order derivative magnitudes relative to first order; monotone
    growth over the last three orders flags a diverging expansion."""

    ratios: tuple[float, ...]
    diverging: bool


def convergence_ratios(stack: DerivStack) -> ConvergenceReport:
    """Ratio |d^k f| / |d^1 f| per order; multivariate stacks reduce each
    order by the max over input coordinates."""
    mags = [float(np.max(np.abs(block))) for block in stack.blocks]
    if mags[0] == 0.0:
        raise NumericError("first derivative is zero: convergence ratios are undefined")
    ratios = tuple(m / mags[0] for m in mags)
    diverging = len(ratios) >= 3 and ratios[-3] < ratios[-2] < ratios[-1]
    return ConvergenceReport(ratios=ratios, diverging=diverging)


# ---------------------------------------------------------------------------
# Heat maps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HeatMap:
    """Per-input-element truncated-Taylor estimate of the output change for
    a perturbation dx."""

    values: np.ndarray
    order: int
    dx: np.ndarray


def heatmap(stack: DerivStack, input_shape: tuple[int, ...], dx, order: int | None = None) -> HeatMap:
    """Elementwise output-change map: sum over orders of
    block_k / k! * dx^k, laid out like the input."""
    if order is None:
        order = stack.order
    if order > stack.order:
        raise SchemaError(f"requested order {order} exceeds stack order {stack.order}")
    size = int(np.prod(input_shape))
    if stack.width != size:
        raise SchemaError(
            f"stack width {stack.width} does not reshape to input {input_shape}"
        )
    dx_arr = np.asarray(dx, dtype=np.float64)
    if dx_arr.ndim == 0:
        dx_arr = np.full(input_shape, float(dx_arr))
    if dx_arr.shape != tuple(input_shape):
        raise SchemaError(f"dx shape {dx_arr.shape} does not match input {input_shape}")
    values = (stack.blocks[0].reshape(input_shape) / factorial(1)) * dx_arr
    for k in range(2, order + 1):
        values = values + stack.blocks[k - 1].reshape(input_shape) / factorial(k) * dx_arr**k
    return HeatMap(values=values, order=order, dx=dx_arr)
