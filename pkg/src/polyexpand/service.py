"""Service layer: pydantic request/response models plus plain handler
functions, wrapped by a FastAPI app.

Networks and polynomials travel inline in the same JSON shape as their file
formats (see docs/formats.md), so any HTTP client can drive the engine; the
CLI calls these handlers in process with files loaded from disk.
"""
from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, Field

from . import __version__
from .backward import expand_mixed, expand_unmixed, expansion_exactness
from .chain import MAX_ORDER
from .errors import CapabilityError, PolyexpandError, SchemaError
from .formats import (
    network_from_dict,
    polynomial_from_dict,
    polynomial_to_dict,
)
from .network import NetworkSpec, forward, split_outputs
from .oracle import finite_diff, jet_forward
from .poly import (
    TaylorPolynomial,
    assemble,
    bounds_1d,
    convergence_ratios,
    evaluate_batch,
    heatmap,
)

EFFECTIVE_ORDER_1 = (
    "effective order 1: the expansion carries no terms beyond first order "
    "(piecewise-linear modules have no higher derivatives)"
)


def max_threads() -> int:
    """Parallelism cap: HOPE_THREADS if set, else the CPU count."""
    value = os.environ.get("HOPE_THREADS")
    if value:
        try:
            return max(1, int(value))
        except ValueError:
            raise SchemaError(f"HOPE_THREADS must be an integer, got {value!r}") from None
    return os.cpu_count() or 1


def _load_network(obj: dict) -> NetworkSpec:
    return network_from_dict(obj)


def _load_poly(obj: dict) -> TaylorPolynomial:
    return polynomial_from_dict(obj)


def _reference_input(net: NetworkSpec, x0) -> np.ndarray:
    arr = np.asarray(x0, dtype=np.float64)
    if arr.size != net.input_size:
        raise SchemaError(
            f"x0 has {arr.size} values but the network input is {net.input_shape}"
        )
    return arr.reshape(net.input_shape)


def _select_output(net: NetworkSpec, output_index: Optional[int]) -> NetworkSpec:
    if net.output_size == 1:
        return net
    if output_index is None:
        raise CapabilityError(
            f"network has {net.output_size} outputs; pass an output index to select one"
        )
    parts = split_outputs(net)
    if not 0 <= output_index < len(parts):
        raise SchemaError(f"output index {output_index} out of range 0..{len(parts) - 1}")
    return parts[output_index]


def _check_order(order: int):
    if not 1 <= order <= MAX_ORDER:
        raise SchemaError(f"order must be in 1..{MAX_ORDER}, got {order}")


# ---------------------------------------------------------------------------
# Expand / evaluate
# ---------------------------------------------------------------------------


class ExpandRequest(BaseModel):
    network: dict
    x0: list
    order: int
    mode: Literal["unmixed", "mixed"] = "unmixed"
    output_index: Optional[int] = None


class ExpandResponse(BaseModel):
    polynomial: dict
    f0: float
    term_count: int
    exact: bool
    warning: Optional[str] = None


def handle_expand(req: ExpandRequest) -> ExpandResponse:
    net = _select_output(_load_network(req.network), req.output_index)
    _check_order(req.order)
    x0 = _reference_input(net, req.x0)
    exact, reason = expansion_exactness(net)
    if req.mode == "mixed":
        stack = expand_mixed(net, x0, req.order)
    else:
        stack = expand_unmixed(net, x0, req.order)
    f0 = float(forward(net, x0)[0])
    poly = assemble(stack, x0.reshape(-1), f0, req.order, req.mode)
    return ExpandResponse(
        polynomial=polynomial_to_dict(poly),
        f0=f0,
        term_count=len(poly.terms),
        exact=exact,
        warning=None if exact else reason,
    )


class EvaluateRequest(BaseModel):
    polynomial: dict
    inputs: list[list[float]]


class EvaluateResponse(BaseModel):
    values: list[float]


def handle_evaluate(req: EvaluateRequest) -> EvaluateResponse:
    poly = _load_poly(req.polynomial)
    if not req.inputs:
        raise SchemaError("inputs must contain at least one row")
    values = evaluate_batch(poly, np.asarray(req.inputs, dtype=np.float64))
    return EvaluateResponse(values=[float(v) for v in values])


class NetworkForwardRequest(BaseModel):
    network: dict
    inputs: list


class NetworkForwardResponse(BaseModel):
    outputs: list


def handle_network_forward(req: NetworkForwardRequest) -> NetworkForwardResponse:
    net = _load_network(req.network)
    arr = np.asarray(req.inputs, dtype=np.float64)
    if arr.shape[1:] != net.input_shape:
        raise SchemaError(
            f"inputs shaped {arr.shape} are not a batch of {net.input_shape} arrays"
        )
    return NetworkForwardResponse(outputs=forward(net, arr).tolist())


# ---------------------------------------------------------------------------
# Compare
# ---------------------------------------------------------------------------


class GridSpec(BaseModel):
    start: float
    stop: float
    steps: int = Field(ge=2)


class SampleSpec(BaseModel):
    count: int = Field(ge=1)
    seed: int = 0
    radius: float = 1.0


class CompareRequest(BaseModel):
    network: dict
    polynomial: dict
    grid: Optional[GridSpec] = None
    samples: Optional[SampleSpec] = None
    output_index: Optional[int] = None


class ComparePoint(BaseModel):
    input: list[float]
    network_value: float
    polynomial_value: float
    abs_error: float


class CompareResponse(BaseModel):
    points: list[ComparePoint]
    max_error: float
    mean_error: float
    warning: Optional[str] = None


def handle_compare(req: CompareRequest) -> CompareResponse:
    net = _select_output(_load_network(req.network), req.output_index)
    poly = _load_poly(req.polynomial)
    if poly.dim != net.input_size:
        raise SchemaError(
            f"polynomial is {poly.dim}-dimensional but network input is {net.input_shape}"
        )
    if (req.grid is None) == (req.samples is None):
        raise SchemaError("pass exactly one of grid or samples")
    if req.grid is not None:
        if net.input_size != 1:
            raise SchemaError("a grid sweep needs a 1-D input network")
        xs = np.linspace(req.grid.start, req.grid.stop, req.grid.steps)[:, np.newaxis]
    else:
        rng = np.random.default_rng(req.samples.seed)
        xs = poly.x0 + rng.uniform(
            -req.samples.radius, req.samples.radius, size=(req.samples.count, poly.dim)
        )
    net_vals = forward(net, xs.reshape((-1,) + net.input_shape)).reshape(-1)
    poly_vals = evaluate_batch(poly, xs)
    errs = np.abs(net_vals - poly_vals)
    warning = None
    if poly.order >= 2 and poly.degree() <= 1:
        warning = EFFECTIVE_ORDER_1
    return CompareResponse(
        points=[
            ComparePoint(
                input=[float(v) for v in x],
                network_value=float(nv),
                polynomial_value=float(pv),
                abs_error=float(e),
            )
            for x, nv, pv, e in zip(xs, net_vals, poly_vals, errs)
        ],
        max_error=float(errs.max()),
        mean_error=float(errs.mean()),
        warning=warning,
    )


# ---------------------------------------------------------------------------
# Bounds
# ---------------------------------------------------------------------------


class BoundsRequest(BaseModel):
    network: dict
    x0: float
    order: int
    interval: tuple[float, float]
    grid_size: int = 2001
    output_index: Optional[int] = None


class BoundsRow(BaseModel):
    x: float
    network_value: float
    polynomial_value: float
    f1: float
    f2: float
    f_upper: float
    f_lower: float


class BoundsResponse(BaseModel):
    rows: list[BoundsRow]
    e1: float
    e2: float
    dmax: float
    dmin: float


def handle_bounds(req: BoundsRequest) -> BoundsResponse:
    net = _select_output(_load_network(req.network), req.output_index)
    _check_order(req.order)
    report = bounds_1d(net, req.x0, req.order, req.interval, req.grid_size)
    rows = [
        BoundsRow(
            x=float(x),
            network_value=float(fn),
            polynomial_value=float(fp),
            f1=float(f1),
            f2=float(f2),
            f_upper=float(fu),
            f_lower=float(fd),
        )
        for x, fn, fp, f1, f2, fu, fd in zip(
            report.grid,
            report.f_net,
            report.f_poly,
            report.f1,
            report.f2,
            report.f_upper,
            report.f_lower,
        )
    ]
    return BoundsResponse(
        rows=rows, e1=report.e1, e2=report.e2, dmax=report.dmax, dmin=report.dmin
    )


# ---------------------------------------------------------------------------
# Convergence
# ---------------------------------------------------------------------------


class ConvergenceRequest(BaseModel):
    network: dict
    x0: list
    order: int
    output_index: Optional[int] = None


class ConvergenceResponse(BaseModel):
    ratios: list[float]
    diverging: bool
    warning: Optional[str] = None


def handle_convergence(req: ConvergenceRequest) -> ConvergenceResponse:
    net = _select_output(_load_network(req.network), req.output_index)
    _check_order(req.order)
    x0 = _reference_input(net, req.x0)
    stack = expand_unmixed(net, x0, req.order)
    report = convergence_ratios(stack)
    warning = (
        "derivative magnitudes grow over the last three orders; "
        "the expansion diverges away from the reference point"
        if report.diverging
        else None
    )
    return ConvergenceResponse(
        ratios=list(report.ratios), diverging=report.diverging, warning=warning
    )


# ---------------------------------------------------------------------------
# Heat maps
# ---------------------------------------------------------------------------


class HeatmapRequest(BaseModel):
    network: dict
    x0: list
    order: int
    dx: float = 1.0
    method: Literal["taylor", "perturbation"] = "taylor"
    output_index: Optional[int] = None


class HeatmapResponse(BaseModel):
    values: list
    shape: list[int]
    order: int
    method: str


def handle_heatmap(req: HeatmapRequest) -> HeatmapResponse:
    net = _select_output(_load_network(req.network), req.output_index)
    _check_order(req.order)
    x0 = _reference_input(net, req.x0)
    if req.method == "taylor":
        stack = expand_unmixed(net, x0, req.order)
        values = heatmap(stack, net.input_shape, req.dx, req.order).values
    else:
        base = float(forward(net, x0)[0])
        flat = x0.reshape(-1)
        perturbed = np.tile(flat, (flat.size, 1))
        perturbed[np.arange(flat.size), np.arange(flat.size)] += req.dx
        outs = forward(net, perturbed.reshape((-1,) + net.input_shape)).reshape(-1)
        values = (outs - base).reshape(net.input_shape)
    return HeatmapResponse(
        values=values.tolist(),
        shape=list(net.input_shape),
        order=req.order,
        method=req.method,
    )


# ---------------------------------------------------------------------------
# Oracle checks
# ---------------------------------------------------------------------------

ORACLE_TOLERANCES = {"jet": 1e-8, "fd": 1e-4}


class OracleRequest(BaseModel):
    network: dict
    x0: list
    order: int
    method: Literal["jet", "fd"] = "jet"
    output_index: Optional[int] = None


class OracleRow(BaseModel):
    coordinate: int
    order: int
    expansion: float
    reference: float
    rel_error: float


class OracleResponse(BaseModel):
    rows: list[OracleRow]
    max_rel_error: float
    tolerance: float
    passed: bool
    exact_architecture: bool


def _rel(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-30)


def handle_oracle(req: OracleRequest) -> OracleResponse:
    net = _select_output(_load_network(req.network), req.output_index)
    _check_order(req.order)
    if req.method == "fd" and req.order > 4:
        raise SchemaError("finite differences support orders 1..4 only")
    x0 = _reference_input(net, req.x0)
    stack = expand_unmixed(net, x0, req.order)
    p = net.input_size
    rows: list[OracleRow] = []
    if req.method == "jet":
        def one(i: int):
            direction = np.zeros(p)
            direction[i] = 1.0
            return jet_forward(net, x0, direction.reshape(net.input_shape), req.order)

        with ThreadPoolExecutor(max_workers=min(max_threads(), p)) as pool:
            jets = list(pool.map(one, range(p)))
        for i, jet in enumerate(jets):
            refs = jet.derivatives()
            for k in range(1, req.order + 1):
                got = float(stack.blocks[k - 1][i])
                rows.append(
                    OracleRow(
                        coordinate=i,
                        order=k,
                        expansion=got,
                        reference=float(refs[k - 1]),
                        rel_error=_rel(got, float(refs[k - 1])),
                    )
                )
    else:
        for i in range(p):
            for k in range(1, req.order + 1):
                ref = finite_diff(net, x0.reshape(-1), i, k)
                got = float(stack.blocks[k - 1][i])
                rows.append(
                    OracleRow(
                        coordinate=i,
                        order=k,
                        expansion=got,
                        reference=ref,
                        rel_error=_rel(got, ref),
                    )
                )
    tolerance = ORACLE_TOLERANCES[req.method]
    max_rel = max((r.rel_error for r in rows), default=0.0)
    exact, _ = expansion_exactness(net)
    return OracleResponse(
        rows=rows,
        max_rel_error=max_rel,
        tolerance=tolerance,
        passed=max_rel <= tolerance,
        exact_architecture=exact,
    )


# ---------------------------------------------------------------------------
# Benchmarks
# ---------------------------------------------------------------------------


class BenchRequest(BaseModel):
    network: dict
    polynomial: dict
    batches: list[int]
    repeat: int = Field(default=5, ge=1)
    seed: int = 0


class BenchRow(BaseModel):
    batch: int
    network_ms: float
    polynomial_ms: float
    speedup: float


class BenchResponse(BaseModel):
    rows: list[BenchRow]


def _median_ms(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append((time.perf_counter() - start) * 1000.0)
    return float(np.median(times))


def handle_bench(req: BenchRequest) -> BenchResponse:
    net = _load_network(req.network)
    poly = _load_poly(req.polynomial)
    if poly.dim != net.input_size:
        raise SchemaError("polynomial and network input dimensions disagree")
    rng = np.random.default_rng(req.seed)
    rows = []
    for batch in req.batches:
        if batch < 1:
            raise SchemaError(f"batch sizes must be >= 1, got {batch}")
        xs = poly.x0 + rng.uniform(-1.0, 1.0, size=(batch, poly.dim))
        net_in = xs.reshape((-1,) + net.input_shape)
        forward(net, net_in)  # warm up
        evaluate_batch(poly, xs)
        net_ms = _median_ms(lambda: forward(net, net_in), req.repeat)
        poly_ms = _median_ms(lambda: evaluate_batch(poly, xs), req.repeat)
        rows.append(
            BenchRow(
                batch=batch,
                network_ms=net_ms,
                polynomial_ms=poly_ms,
                speedup=net_ms / poly_ms if poly_ms > 0 else float("inf"),
            )
        )
    return BenchResponse(rows=rows)


# ---------------------------------------------------------------------------
# FastAPI app
# ---------------------------------------------------------------------------


def create_app():
    from fastapi import FastAPI, Request
    from fastapi.responses import JSONResponse

    app = FastAPI(title="polyexpand", version=__version__)

    @app.exception_handler(PolyexpandError)
    async def _domain_error(request: Request, exc: PolyexpandError):
        return JSONResponse(
            status_code=400, content={"detail": str(exc), "code": exc.code}
        )

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.post("/expand", response_model=ExpandResponse)
    def expand(req: ExpandRequest):
        return handle_expand(req)

    @app.post("/evaluate", response_model=EvaluateResponse)
    def evaluate(req: EvaluateRequest):
        return handle_evaluate(req)

    @app.post("/network/forward", response_model=NetworkForwardResponse)
    def network_forward(req: NetworkForwardRequest):
        return handle_network_forward(req)

    @app.post("/compare", response_model=CompareResponse)
    def compare(req: CompareRequest):
        return handle_compare(req)

    @app.post("/bounds", response_model=BoundsResponse)
    def bounds(req: BoundsRequest):
        return handle_bounds(req)

    @app.post("/convergence", response_model=ConvergenceResponse)
    def convergence(req: ConvergenceRequest):
        return handle_convergence(req)

    @app.post("/heatmap", response_model=HeatmapResponse)
    def heatmap_route(req: HeatmapRequest):
        return handle_heatmap(req)

    @app.post("/oracle", response_model=OracleResponse)
    def oracle(req: OracleRequest):
        return handle_oracle(req)

    @app.post("/bench", response_model=BenchResponse)
    def bench(req: BenchRequest):
        return handle_bench(req)

    return app
