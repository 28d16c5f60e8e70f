"""Expand trained feed-forward networks into explicit high-order Taylor
polynomials, then evaluate, bound, benchmark and visualize them."""

__version__ = "0.1.0"

from .backward import (
    expand_mixed,
    expand_unmixed,
    expand_unmixed_batch,
    expansion_exactness,
)
from .chain import DerivStack, MixedDerivStack
from .errors import CapabilityError, NumericError, PolyexpandError, SchemaError
from .formats import (
    load_network,
    load_polynomial,
    save_network,
    save_polynomial,
)
from .network import (
    Activation,
    AvgPool,
    Conv2D,
    Flatten,
    FullyConnected,
    MaxPool,
    NetworkSpec,
    Unflatten,
    forward,
    split_outputs,
)
from .poly import (
    TaylorPolynomial,
    assemble,
    bounds_1d,
    convergence_ratios,
    evaluate,
    evaluate_batch,
    heatmap,
    recenter,
)

__all__ = [
    "__version__",
    "NetworkSpec",
    "FullyConnected",
    "Activation",
    "Conv2D",
    "MaxPool",
    "AvgPool",
    "Flatten",
    "Unflatten",
    "forward",
    "split_outputs",
    "DerivStack",
    "MixedDerivStack",
    "expand_unmixed",
    "expand_unmixed_batch",
    "expand_mixed",
    "expansion_exactness",
    "TaylorPolynomial",
    "assemble",
    "evaluate",
    "evaluate_batch",
    "recenter",
    "bounds_1d",
    "convergence_ratios",
    "heatmap",
    "load_network",
    "save_network",
    "load_polynomial",
    "save_polynomial",
    "PolyexpandError",
    "SchemaError",
    "CapabilityError",
    "NumericError",
]
