"""Command-line interface: ``netexport export`` and ``netexport verify``."""
from __future__ import annotations

import argparse
import sys

from .convert import ExportError, UnsupportedLayers, export
from .verify import verify


def _parse_shape(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split("x")]
    except ValueError:
        raise ExportError(f"bad input shape {text!r}: expected like 1x28x28") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="netexport",
        description="Convert PyTorch checkpoints to the neutral network.json "
        "format and verify the round trip.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export", help="write network.json from a checkpoint")
    p.add_argument("checkpoint", help=".pt/.pth file (nn.Sequential or state dict)")
    p.add_argument(
        "--arch",
        default=None,
        help="module sequence for state-dict checkpoints, e.g. "
        "'fc,tanh,fc,tanh,fc' or 'conv:1x1:0x0,relu,maxpool:2x2,flatten,fc'",
    )
    p.add_argument(
        "--input-shape",
        default=None,
        help="network input shape like 784 or 1x28x28 (required when the "
        "first module is not fully connected)",
    )
    p.add_argument("--name", default=None, help="metadata name for the file")
    p.add_argument("-o", "--out", required=True)

    v = sub.add_parser("verify", help="compare checkpoint and network.json forwards")
    v.add_argument("checkpoint")
    v.add_argument("network_json")
    v.add_argument("-n", "--samples", type=int, default=100)
    v.add_argument("--seed", type=int, default=7)
    v.add_argument("--threshold", type=float, default=1e-6)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "export":
            shape = _parse_shape(args.input_shape) if args.input_shape else None
            obj = export(
                args.checkpoint,
                args.out,
                arch_hint=args.arch,
                input_shape=shape,
                name=args.name,
            )
            print(f"modules: {len(obj['modules'])}")
            print(f"wrote {args.out}")
            return 0
        report = verify(
            args.checkpoint,
            args.network_json,
            samples=args.samples,
            seed=args.seed,
            threshold=args.threshold,
        )
        for line in report.lines():
            print(line)
        return 0 if report.passed else 1
    except UnsupportedLayers as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
