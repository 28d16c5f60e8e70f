"""Command-line client for the expansion service.

Every subcommand loads its input files, builds the same request models the
HTTP endpoints accept, calls the service handler in process, and writes the
results. Tabular outputs are CSV with a header row; --format json writes the
same rows as a JSON document. All files are written atomically (temp file +
rename). Exit codes: 0 success, 1 oracle disagreement, 2 bad input or
schema, 3 unsupported capability, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import tempfile

import numpy as np

from . import __version__, service
from .errors import PolyexpandError, SchemaError
from .formats import (
    _read_json,
    load_array,
    write_json_atomic,
)


def _write_rows_atomic(path: str, header: list[str], rows: list[list], fmt: str):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            if fmt == "json":
                json.dump(
                    [dict(zip(header, row)) for row in rows], fh, indent=1, allow_nan=False
                )
                fh.write("\n")
            else:
                writer = csv.writer(fh)
                writer.writerow(header)
                writer.writerows(rows)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _note(message: str):
    print(message, file=sys.stderr)


def _load_x0(path: str) -> list:
    return load_array(path).tolist()


def _read_batch_csv(path: str) -> list[list[float]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [row for row in csv.reader(fh) if row]
    except FileNotFoundError:
        raise SchemaError(f"{path}: file not found") from None
    try:
        return [[float(v) for v in row] for row in rows]
    except ValueError:
        # tolerate a header row
        try:
            return [[float(v) for v in row] for row in rows[1:]]
        except ValueError as exc:
            raise SchemaError(f"{path}: not a numeric CSV ({exc})") from None


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_expand(args) -> int:
    req = service.ExpandRequest(
        network=_read_json(args.model),
        x0=_load_x0(args.x0),
        order=args.order,
        mode=args.mode,
        output_index=args.output_index,
    )
    resp = service.handle_expand(req)
    if resp.warning:
        _note(f"warning: {resp.warning}")
    write_json_atomic(resp.polynomial, args.out)
    print(f"f0: {resp.f0}")
    print(f"terms: {resp.term_count}")
    print(f"wrote {args.out}")
    return 0


def cmd_eval(args) -> int:
    poly_obj = _read_json(args.poly)
    if args.input:
        x = load_array(args.input).reshape(-1)
        inputs = [x.tolist()]
    else:
        inputs = _read_batch_csv(args.batch)
    resp = service.handle_evaluate(
        service.EvaluateRequest(polynomial=poly_obj, inputs=inputs)
    )
    if args.out:
        _write_rows_atomic(
            args.out, ["value"], [[v] for v in resp.values], args.format
        )
        print(f"wrote {args.out}")
    else:
        for v in resp.values:
            print(v)
    return 0


def _parse_grid(text: str) -> service.GridSpec:
    parts = text.split(":")
    if len(parts) != 3:
        raise SchemaError(f"grid must look like a:b:steps, got {text!r}")
    try:
        return service.GridSpec(
            start=float(parts[0]), stop=float(parts[1]), steps=int(parts[2])
        )
    except ValueError as exc:
        raise SchemaError(f"bad grid {text!r}: {exc}") from None


def cmd_compare(args) -> int:
    req = service.CompareRequest(
        network=_read_json(args.model),
        polynomial=_read_json(args.poly),
        grid=_parse_grid(args.grid) if args.grid else None,
        samples=(
            service.SampleSpec(count=args.samples, seed=args.seed, radius=args.radius)
            if args.samples
            else None
        ),
        output_index=args.output_index,
    )
    if args.samples:
        _note(f"seed: {args.seed}")
    resp = service.handle_compare(req)
    if resp.warning:
        _note(f"warning: {resp.warning}")
    dim = len(resp.points[0].input) if resp.points else 0
    header = [f"x{i}" for i in range(dim)] + ["network", "polynomial", "abs_error"]
    rows = [
        p.input + [p.network_value, p.polynomial_value, p.abs_error]
        for p in resp.points
    ]
    _write_rows_atomic(args.out, header, rows, args.format)
    print(f"max_error: {resp.max_error}")
    print(f"mean_error: {resp.mean_error}")
    print(f"wrote {args.out}")
    return 0


def cmd_bounds(args) -> int:
    x0 = load_array(args.x0).reshape(-1)
    if x0.size != 1:
        raise SchemaError("bounds need a scalar x0")
    req = service.BoundsRequest(
        network=_read_json(args.model),
        x0=float(x0[0]),
        order=args.order,
        interval=(args.interval[0], args.interval[1]),
        grid_size=args.grid,
        output_index=args.output_index,
    )
    resp = service.handle_bounds(req)
    header = ["x", "network", "polynomial", "f1", "f2", "f_upper", "f_lower"]
    rows = [
        [r.x, r.network_value, r.polynomial_value, r.f1, r.f2, r.f_upper, r.f_lower]
        for r in resp.rows
    ]
    _write_rows_atomic(args.out, header, rows, args.format)
    print(f"e1: {resp.e1}")
    print(f"e2: {resp.e2}")
    print(f"dmax: {resp.dmax}")
    print(f"dmin: {resp.dmin}")
    print(f"wrote {args.out}")
    return 0


def cmd_heatmap(args) -> int:
    req = service.HeatmapRequest(
        network=_read_json(args.model),
        x0=_load_x0(args.x0),
        order=args.order,
        dx=args.dx,
        method=args.method,
        output_index=args.output_index,
    )
    resp = service.handle_heatmap(req)
    values = np.asarray(resp.values)
    if values.ndim == 3 and values.shape[0] == 1:
        values = values[0]
    if values.ndim == 1:
        values = values[np.newaxis, :]
    elif values.ndim == 3:
        values = values.reshape(-1, values.shape[-1])  # stack channels vertically
    header = [f"c{j}" for j in range(values.shape[1])]
    _write_rows_atomic(args.out, header, values.tolist(), args.format)
    print(f"wrote {args.out}")
    return 0


def cmd_convergence(args) -> int:
    req = service.ConvergenceRequest(
        network=_read_json(args.model),
        x0=_load_x0(args.x0),
        order=args.order,
        output_index=args.output_index,
    )
    resp = service.handle_convergence(req)
    if args.format == "json":
        print(json.dumps({"ratios": resp.ratios, "diverging": resp.diverging}, indent=1))
    else:
        print("order,ratio")
        for k, ratio in enumerate(resp.ratios, start=1):
            print(f"{k},{ratio}")
    if resp.warning:
        _note(f"warning: {resp.warning}")
    return 0


def cmd_bench(args) -> int:
    batches = [int(v) for v in args.batches.split(",") if v]
    _note(f"seed: {args.seed}")
    req = service.BenchRequest(
        network=_read_json(args.model),
        polynomial=_read_json(args.poly),
        batches=batches,
        repeat=args.repeat,
        seed=args.seed,
    )
    resp = service.handle_bench(req)
    header = ["batch", "network_ms", "polynomial_ms", "speedup"]
    rows = [[r.batch, r.network_ms, r.polynomial_ms, r.speedup] for r in resp.rows]
    if args.out:
        _write_rows_atomic(args.out, header, rows, args.format)
        print(f"wrote {args.out}")
    else:
        print(",".join(header))
        for row in rows:
            print(",".join(str(v) for v in row))
    return 0


def cmd_oracle(args) -> int:
    req = service.OracleRequest(
        network=_read_json(args.model),
        x0=_load_x0(args.x0),
        order=args.order,
        method=args.method,
        output_index=args.output_index,
    )
    resp = service.handle_oracle(req)
    header = ["coordinate", "order", "expansion", "reference", "rel_error"]
    rows = [
        [r.coordinate, r.order, r.expansion, r.reference, r.rel_error]
        for r in resp.rows
    ]
    if args.report:
        _write_rows_atomic(args.report, header, rows, args.format)
        print(f"wrote {args.report}")
    print(f"max_rel_error: {resp.max_rel_error}")
    print(f"tolerance: {resp.tolerance}")
    print(f"passed: {resp.passed}")
    if not resp.exact_architecture:
        _note(
            "warning: architecture outside the exact propagation class; "
            "orders >= 2 are a structured approximation"
        )
    return 0 if resp.passed else 1


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser, *, model=True, x0=False, order=False):
    if model:
        p.add_argument("--model", required=True, help="network.json path")
    if x0:
        p.add_argument("--x0", required=True, help="JSON array file with the reference input")
    if order:
        p.add_argument("--order", type=int, required=True, help="expansion order n")
    p.add_argument(
        "--output-index",
        type=int,
        default=None,
        help="output unit to expand when the network has several",
    )
    p.add_argument("--format", choices=("csv", "json"), default="csv")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="polyexpand",
        description="Expand a trained network into an explicit Taylor polynomial "
        "and work with the result.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("expand", help="expand a network into a polynomial file")
    _add_common(p, x0=True, order=True)
    p.add_argument("--mode", choices=("unmixed", "mixed"), default="unmixed")
    p.add_argument("--out", required=True, help="poly.json output path")
    p.set_defaults(func=cmd_expand)

    p = sub.add_parser("eval", help="evaluate a polynomial file")
    p.add_argument("--poly", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--input", help="JSON array file with one input")
    group.add_argument("--batch", help="CSV file, one input per row")
    p.add_argument("--out", default=None)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="network vs polynomial on a grid or samples")
    _add_common(p)
    p.add_argument("--poly", required=True)
    p.add_argument("--grid", default=None, help="a:b:steps sweep (1-D networks); use --grid=-1:1:50 for negative starts")
    p.add_argument("--samples", type=int, default=None, help="random sample count")
    p.add_argument("--radius", type=float, default=1.0, help="sampling half-width around x0")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("bounds", help="interval envelopes and the error bound")
    _add_common(p, x0=True, order=True)
    p.add_argument("--interval", type=float, nargs=2, required=True, metavar=("A", "B"))
    p.add_argument("--grid", type=int, default=2001)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("heatmap", help="per-input contribution map")
    _add_common(p, x0=True, order=True)
    p.add_argument("--dx", type=float, default=1.0)
    p.add_argument("--method", choices=("taylor", "perturbation"), default="taylor")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("convergence", help="per-order derivative ratio table")
    _add_common(p, x0=True, order=True)
    p.set_defaults(func=cmd_convergence)

    p = sub.add_parser("bench", help="network forward vs polynomial evaluation timing")
    _add_common(p)
    p.add_argument("--poly", required=True)
    p.add_argument("--batches", default="1,4,16,64,256,1024,4096")
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("oracle", help="check the expansion against an independent oracle")
    _add_common(p, x0=True, order=True)
    p.add_argument("--method", choices=("jet", "fd"), default="jet")
    p.add_argument("--report", default=None, help="write the per-order table here")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except PolyexpandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
