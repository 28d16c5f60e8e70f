"""Composite-function machinery for high-order derivatives.

A module with input x (p nodes) and output z (s nodes) turns the derivative
stack of the final scalar output y w.r.t. z into the stack w.r.t. x through a
block lower-triangular transform. Block (i, j) sums, over the partitions of i
into j parts, an integer multiplier times a Hadamard product of the module's
own derivative blocks. The multipliers are the classic composition
coefficients; they are generated symbolically once per order and reused.

For a linear module adjacent to the network input the same stack can instead
be pushed into the full mixed-derivative vector through a block-diagonal
transform whose k-th block enumerates all length-k index tuples.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import factorial

import numpy as np

from .errors import NumericError, SchemaError

__all__ = [
    "DerivStack",
    "MixedDerivStack",
    "LocalJet",
    "FaaDiBrunoCoeffs",
    "faa_di_bruno_table",
    "faa_di_bruno_table_recurrence",
    "UnmixedTransform",
    "build_unmixed_transform",
    "propagate_unmixed",
    "MixedTransform",
    "build_mixed_transform",
    "mixed_transform_kronecker",
    "propagate_mixed",
    "lex_offset",
    "mixed_stack_entries",
]

MAX_ORDER = 30
MAX_MIXED_ENTRIES = 5_000_000

# A monomial in the module's derivative orders: ((order, multiplicity), ...)
# sorted by order, e.g. 3 * z' * z'' is (3, ((1, 1), (2, 1))).
Monomial = tuple[int, tuple[tuple[int, int], ...]]


@dataclass(frozen=True)
class DerivStack:
    """Per-order unmixed derivatives of the scalar output w.r.t. one
    module's output: block k holds d^k y / d node_i^k for every node i."""

    blocks: tuple[np.ndarray, ...]

    def __post_init__(self):
        if not self.blocks:
            raise SchemaError("derivative stack needs at least one block")
        width = self.blocks[0].shape
        for k, b in enumerate(self.blocks, start=1):
            if b.ndim != 1 or b.shape != width:
                raise SchemaError(f"stack block {k} has shape {b.shape}, expected {width}")
            if not np.all(np.isfinite(b)):
                raise NumericError(f"stack block {k} contains non-finite entries")

    @property
    def order(self) -> int:
        return len(self.blocks)

    @property
    def width(self) -> int:
        return self.blocks[0].shape[0]


@dataclass(frozen=True)
class MixedDerivStack:
    """All mixed partial derivatives w.r.t. a p-dimensional input; block k
    has p**k entries in lexicographic index-tuple order."""

    input_dim: int
    blocks: tuple[np.ndarray, ...]

    def __post_init__(self):
        for k, b in enumerate(self.blocks, start=1):
            if b.shape != (self.input_dim**k,):
                raise SchemaError(
                    f"mixed block {k} has shape {b.shape}, expected ({self.input_dim**k},)"
                )
            if not np.all(np.isfinite(b)):
                raise NumericError(f"mixed block {k} contains non-finite entries")

    @property
    def order(self) -> int:
        return len(self.blocks)

    def value(self, index_tuple: tuple[int, ...]) -> float:
        """Mixed partial for a 0-based coordinate tuple (i_1, ..., i_k)."""
        k = len(index_tuple)
        return float(self.blocks[k - 1][lex_offset(index_tuple, self.input_dim)])


@dataclass(frozen=True)
class LocalJet:
    """A module's own derivative blocks d^k z^T / d x^k, one (p, s) matrix
    per order k = 1..n."""

    blocks: tuple[np.ndarray, ...]

    def __post_init__(self):
        shape = self.blocks[0].shape
        for k, b in enumerate(self.blocks, start=1):
            if b.ndim != 2 or b.shape != shape:
                raise SchemaError(f"jet block {k} has shape {b.shape}, expected {shape}")

    @property
    def order(self) -> int:
        return len(self.blocks)

    @property
    def in_dim(self) -> int:
        return self.blocks[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.blocks[0].shape[1]

    @staticmethod
    def elementwise(derivs: np.ndarray) -> "LocalJet":
        """Diagonal jet of an elementwise map from per-node derivative values
        shaped (order, width)."""
        return LocalJet(tuple(np.diag(row) for row in np.asarray(derivs, dtype=np.float64)))


def lex_offset(index_tuple: tuple[int, ...], p: int) -> int:
    """Offset of a 0-based coordinate tuple in lexicographic block order."""
    off = 0
    for i in index_tuple:
        if not 0 <= i < p:
            raise SchemaError(f"coordinate {i} out of range for dimension {p}")
        off = off * p + i
    return off


def mixed_stack_entries(p: int, n: int) -> int:
    return sum(p**k for k in range(1, n + 1))


# ---------------------------------------------------------------------------
# Composition coefficients
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FaaDiBrunoCoeffs:
    """Integer composition coefficients up to a given order.

    ``monomials(i, j)`` lists the (multiplier, partition) pairs for block
    (i, j): each partition of i into j parts appears once, with multiplier
    i! / prod(m_l! * (l!)**m_l) over its part multiplicities m_l.
    """

    order: int
    table: dict[tuple[int, int], tuple[Monomial, ...]] = field(repr=False)

    def monomials(self, i: int, j: int) -> tuple[Monomial, ...]:
        if not 1 <= j <= i <= self.order:
            return ()
        return self.table[(i, j)]


def _partitions_into(i: int, j: int, max_part: int | None = None):
    """Yield partitions of i into exactly j parts as non-increasing tuples."""
    if max_part is None:
        max_part = i
    if j == 1:
        if i <= max_part:
            yield (i,)
        return
    for first in range(min(i - j + 1, max_part), 0, -1):
        for rest in _partitions_into(i - first, j - 1, first):
            yield (first,) + rest


def _multiplier(i: int, parts: tuple[int, ...]) -> int:
    denom = 1
    for l in set(parts):
        m = parts.count(l)
        denom *= factorial(m) * factorial(l) ** m
    coef, rem = divmod(factorial(i), denom)
    if rem:
        raise NumericError(f"non-integer multiplier for partition {parts} of {i}")
    return coef


def faa_di_bruno_table(n: int) -> FaaDiBrunoCoeffs:
    """Composition coefficients from the closed-form partition formula."""
    if not 1 <= n <= MAX_ORDER:
        raise SchemaError(f"order must be in 1..{MAX_ORDER}, got {n}")
    table: dict[tuple[int, int], tuple[Monomial, ...]] = {}
    for i in range(1, n + 1):
        for j in range(1, i + 1):
            entries = []
            for parts in _partitions_into(i, j):
                mults = tuple(
                    sorted((l, parts.count(l)) for l in sorted(set(parts)))
                )
                entries.append((_multiplier(i, parts), mults))
            table[(i, j)] = tuple(entries)
    return FaaDiBrunoCoeffs(order=n, table=table)


def faa_di_bruno_table_recurrence(n: int) -> FaaDiBrunoCoeffs:
    """Same coefficients derived by differentiating the previous row
    symbolically: entry (i, j) = d/dx entry (i-1, j) + z' * entry (i-1, j-1).

    Monomials are exponent maps over the derivative orders; d/dx bumps one
    factor's order at a time. Must agree exactly with the closed form.
    """
    if not 1 <= n <= MAX_ORDER:
        raise SchemaError(f"order must be in 1..{MAX_ORDER}, got {n}")

    def ddx(poly: dict) -> dict:
        out: dict = {}
        for exps, coef in poly.items():
            for l, m in exps:
                bumped = dict(exps)
                bumped[l] = m - 1
                if bumped[l] == 0:
                    del bumped[l]
                bumped[l + 1] = bumped.get(l + 1, 0) + 1
                key = tuple(sorted(bumped.items()))
                out[key] = out.get(key, 0) + coef * m
        return out

    def times_z1(poly: dict) -> dict:
        out = {}
        for exps, coef in poly.items():
            bumped = dict(exps)
            bumped[1] = bumped.get(1, 0) + 1
            out[tuple(sorted(bumped.items()))] = coef
        return out

    rows: dict[tuple[int, int], dict] = {(1, 1): {((1, 1),): 1}}
    for i in range(2, n + 1):
        for j in range(1, i + 1):
            poly: dict = {}
            for src in (
                ddx(rows.get((i - 1, j), {})),
                times_z1(rows.get((i - 1, j - 1), {})),
            ):
                for exps, coef in src.items():
                    poly[exps] = poly.get(exps, 0) + coef
            rows[(i, j)] = poly
    table = {
        key: tuple((coef, exps) for exps, coef in sorted(poly.items()))
        for key, poly in rows.items()
    }
    return FaaDiBrunoCoeffs(order=n, table=table)


# ---------------------------------------------------------------------------
# Unmixed propagation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class UnmixedTransform:
    """Block lower-triangular transform; block (i, j) maps the order-j
    output-side block to the order-i input-side block."""

    order: int
    in_dim: int
    out_dim: int
    blocks: dict[tuple[int, int], np.ndarray] = field(repr=False)


def build_unmixed_transform(jet: LocalJet, coeffs: FaaDiBrunoCoeffs) -> UnmixedTransform:
    """Evaluate the composition coefficients on a module's jet.

    Products of scalar derivatives become Hadamard products of the jet
    blocks, so block (i, j) keeps the (p, s) shape of the jet.
    """
    if jet.order < coeffs.order:
        raise SchemaError(
            f"jet of order {jet.order} cannot build an order-{coeffs.order} transform"
        )
    n = coeffs.order
    blocks: dict[tuple[int, int], np.ndarray] = {}
    for i in range(1, n + 1):
        for j in range(1, i + 1):
            acc = np.zeros((jet.in_dim, jet.out_dim))
            for coef, parts in coeffs.monomials(i, j):
                term = np.full((jet.in_dim, jet.out_dim), float(coef))
                for l, m in parts:
                    term = term * jet.blocks[l - 1] ** m
                acc += term
            blocks[(i, j)] = acc
    return UnmixedTransform(order=n, in_dim=jet.in_dim, out_dim=jet.out_dim, blocks=blocks)


def propagate_unmixed(v_next: DerivStack, transform: UnmixedTransform) -> DerivStack:
    """Apply a block lower-triangular transform to an output-side stack."""
    if v_next.order != transform.order:
        raise SchemaError(
            f"stack order {v_next.order} does not match transform order {transform.order}"
        )
    if v_next.width != transform.out_dim:
        raise SchemaError(
            f"stack width {v_next.width} does not match transform columns {transform.out_dim}"
        )
    blocks = []
    for i in range(1, transform.order + 1):
        acc = np.zeros(transform.in_dim)
        for j in range(1, i + 1):
            acc += transform.blocks[(i, j)] @ v_next.blocks[j - 1]
        blocks.append(acc)
    return DerivStack(tuple(blocks))


# ---------------------------------------------------------------------------
# Mixed propagation (linear module adjacent to the input)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MixedTransform:
    """Block-diagonal transform onto the mixed-derivative vector; block k is
    a (p**k, s) matrix whose row for tuple (i_1..i_k) is the elementwise
    product of the rows i_1..i_k of the transposed weight matrix.

    Rows are stored deduplicated by sorted index tuple (``unique[k]``) with a
    scatter map ``inverse[k]`` back to lexicographic order; propagation runs
    the matrix product on the unique rows only and mirrors the values, which
    makes permutation symmetry of the result bitwise and skips redundant
    work."""

    input_dim: int
    out_dim: int
    unique: tuple[np.ndarray, ...]
    inverse: tuple[np.ndarray, ...]

    @property
    def order(self) -> int:
        return len(self.unique)

    @property
    def blocks(self) -> tuple[np.ndarray, ...]:
        return tuple(u[inv] for u, inv in zip(self.unique, self.inverse))


def build_mixed_transform(
    w_eff: np.ndarray, n: int, max_entries: int = MAX_MIXED_ENTRIES
) -> MixedTransform:
    """Mixed transform of a linear module with effective weight matrix
    ``w_eff`` of shape (s, p).

    Rows for permuted index tuples are built by multiplying the same rows in
    sorted order, so permutation symmetry holds bitwise.
    """
    w_eff = np.asarray(w_eff, dtype=np.float64)
    if w_eff.ndim != 2:
        raise SchemaError("effective weight matrix must be 2-D")
    if not 1 <= n <= MAX_ORDER:
        raise SchemaError(f"order must be in 1..{MAX_ORDER}, got {n}")
    s, p = w_eff.shape
    total = mixed_stack_entries(p, n)
    if total > max_entries:
        raise NumericError(
            f"mixed stack needs {total} entries for input dimension {p} at order {n}; "
            f"limit is {max_entries} (use unmixed mode)"
        )
    wt = w_eff.T  # (p, s), row i = derivatives of all outputs w.r.t. input i
    unique = [wt.copy()]
    inverse = [np.arange(p)]
    tuples = np.arange(p)[:, np.newaxis]
    for k in range(2, n + 1):
        tuples = np.hstack(
            [np.repeat(np.arange(p), p ** (k - 1))[:, np.newaxis], np.tile(tuples, (p, 1))]
        )
        srt = np.sort(tuples, axis=1)
        uniq, inv = np.unique(srt, axis=0, return_inverse=True)
        prod = wt[uniq[:, 0]].copy()
        for c in range(1, k):
            prod *= wt[uniq[:, c]]
        unique.append(prod)
        inverse.append(inv.reshape(-1))
    return MixedTransform(input_dim=p, out_dim=s, unique=tuple(unique), inverse=tuple(inverse))


def mixed_transform_kronecker(w_eff: np.ndarray, n: int) -> MixedTransform:
    """Literal recurrence form: Q_1 = W^T and
    Q_k = (W^T kron 1) hadamard (1 kron Q_{k-1}). Used as a cross-check of
    the symmetric builder; association order of the products differs, so
    agreement is to rounding, not bitwise."""
    w_eff = np.asarray(w_eff, dtype=np.float64)
    s, p = w_eff.shape
    wt = w_eff.T
    blocks = [wt.copy()]
    for k in range(2, n + 1):
        left = np.kron(wt, np.ones((p ** (k - 1), 1)))
        right = np.kron(np.ones((p, 1)), blocks[-1])
        blocks.append(left * right)
    return MixedTransform(
        input_dim=p,
        out_dim=s,
        unique=tuple(blocks),
        inverse=tuple(np.arange(b.shape[0]) for b in blocks),
    )


def propagate_mixed(v_next: DerivStack, transform: MixedTransform) -> MixedDerivStack:
    """Apply the block-diagonal mixed transform to an output-side stack."""
    if v_next.order != transform.order:
        raise SchemaError(
            f"stack order {v_next.order} does not match transform order {transform.order}"
        )
    if v_next.width != transform.out_dim:
        raise SchemaError(
            f"stack width {v_next.width} does not match transform columns {transform.out_dim}"
        )
    blocks = tuple(
        (transform.unique[k] @ v_next.blocks[k])[transform.inverse[k]]
        for k in range(transform.order)
    )
    return MixedDerivStack(input_dim=transform.input_dim, blocks=blocks)
