"""Framework-neutral JSON files: ``network.json`` describes a module list,
``poly.json`` a Taylor polynomial. Both carry a mandatory schema_version.

Floats serialize through Python's shortest-round-trip repr, so
load(save(x)) is bit-identical and re-saving an unchanged object yields
byte-identical files. Writes go to a temp file in the target directory and
are renamed into place.
"""
from __future__ import annotations

import json
import os
import tempfile
from typing import Any

import numpy as np

from .errors import SchemaError
from .network import (
    Activation,
    AvgPool,
    Conv2D,
    Flatten,
    FullyConnected,
    MaxPool,
    Module,
    NetworkSpec,
    Unflatten,
)
from .poly import TaylorPolynomial, _grlex_key, term_degree

__all__ = [
    "SCHEMA_VERSION",
    "load_network",
    "save_network",
    "network_to_dict",
    "network_from_dict",
    "load_polynomial",
    "save_polynomial",
    "polynomial_to_dict",
    "polynomial_from_dict",
    "write_json_atomic",
    "load_array",
]

SCHEMA_VERSION = 1

MODULE_KINDS = (
    "fully_connected",
    "activation",
    "conv2d",
    "max_pool",
    "avg_pool",
    "flatten",
    "unflatten",
)


def _fail(path: str, message: str):
    raise SchemaError(f"{path}: {message}")


def _need(obj: dict, key: str, path: str):
    if not isinstance(obj, dict):
        _fail(path, f"expected an object, got {type(obj).__name__}")
    if key not in obj:
        _fail(path, f"missing required field {key!r}")
    return obj[key]


def _array(value, path: str, ndim: int) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=np.float64)
    except (TypeError, ValueError):
        _fail(path, "expected a numeric array")
    if arr.ndim != ndim:
        _fail(path, f"expected a {ndim}-D array, got {arr.ndim}-D")
    if not np.all(np.isfinite(arr)):
        _fail(path, "array contains non-finite values")
    return arr


def _int_pair(value, path: str) -> tuple[int, int]:
    if (
        not isinstance(value, (list, tuple))
        or len(value) != 2
        or not all(isinstance(v, int) for v in value)
    ):
        _fail(path, f"expected a pair of integers, got {value!r}")
    return (value[0], value[1])


def _check_version(obj: dict, path: str):
    version = _need(obj, "schema_version", path)
    if version != SCHEMA_VERSION:
        _fail(path + ".schema_version", f"unsupported schema version {version!r} (this build reads {SCHEMA_VERSION})")


# ---------------------------------------------------------------------------
# Network files
# ---------------------------------------------------------------------------


def _module_from_dict(obj: dict, path: str) -> Module:
    kind = _need(obj, "kind", path)
    if kind not in MODULE_KINDS:
        _fail(
            path + ".kind",
            f"unknown module kind {kind!r} in schema_version {SCHEMA_VERSION}; "
            f"supported: {', '.join(MODULE_KINDS)}",
        )
    try:
        if kind == "fully_connected":
            return FullyConnected(
                weight=_array(_need(obj, "weight", path), path + ".weight", 2),
                bias=_array(_need(obj, "bias", path), path + ".bias", 1),
            )
        if kind == "activation":
            return Activation(name=_need(obj, "name", path))
        if kind == "conv2d":
            bias = obj.get("bias")
            return Conv2D(
                weight=_array(_need(obj, "weight", path), path + ".weight", 4),
                bias=None if bias is None else _array(bias, path + ".bias", 1),
                stride=_int_pair(obj.get("stride", [1, 1]), path + ".stride"),
                padding=_int_pair(obj.get("padding", [0, 0]), path + ".padding"),
            )
        if kind == "max_pool":
            return MaxPool(
                kernel=_int_pair(_need(obj, "kernel", path), path + ".kernel"),
                stride=_int_pair(_need(obj, "stride", path), path + ".stride"),
            )
        if kind == "avg_pool":
            return AvgPool(
                kernel=_int_pair(_need(obj, "kernel", path), path + ".kernel"),
                stride=_int_pair(_need(obj, "stride", path), path + ".stride"),
            )
        if kind == "flatten":
            return Flatten()
        return Unflatten(shape=tuple(_need(obj, "shape", path)))
    except SchemaError as exc:
        if str(exc).startswith(path):
            raise
        raise SchemaError(f"{path}: {exc}") from exc


def _module_to_dict(module: Module) -> dict:
    if module.kind == "fully_connected":
        return {
            "kind": module.kind,
            "weight": module.weight.tolist(),
            "bias": module.bias.tolist(),
        }
    if module.kind == "activation":
        return {"kind": module.kind, "name": module.name}
    if module.kind == "conv2d":
        return {
            "kind": module.kind,
            "weight": module.weight.tolist(),
            "bias": None if module.bias is None else module.bias.tolist(),
            "stride": list(module.stride),
            "padding": list(module.padding),
        }
    if module.kind in ("max_pool", "avg_pool"):
        return {"kind": module.kind, "kernel": list(module.kernel), "stride": list(module.stride)}
    if module.kind == "flatten":
        return {"kind": module.kind}
    return {"kind": module.kind, "shape": list(module.shape)}


def network_from_dict(obj: dict, path: str = "network") -> NetworkSpec:
    _check_version(obj, path)
    input_shape = _need(obj, "input_shape", path)
    if not isinstance(input_shape, (list, tuple)) or not all(
        isinstance(v, int) for v in input_shape
    ):
        _fail(path + ".input_shape", f"expected a list of integers, got {input_shape!r}")
    modules_obj = _need(obj, "modules", path)
    if not isinstance(modules_obj, list):
        _fail(path + ".modules", "expected a list of modules")
    modules = [
        _module_from_dict(m, f"{path}.modules[{i}]") for i, m in enumerate(modules_obj)
    ]
    metadata = obj.get("metadata", {})
    if not isinstance(metadata, dict):
        _fail(path + ".metadata", "expected an object")
    try:
        return NetworkSpec(
            input_shape=tuple(input_shape), modules=tuple(modules), metadata=metadata
        )
    except SchemaError as exc:
        raise SchemaError(f"{path}: {exc}") from exc


def network_to_dict(net: NetworkSpec) -> dict:
    out: dict[str, Any] = {
        "schema_version": SCHEMA_VERSION,
        "input_shape": list(net.input_shape),
        "modules": [_module_to_dict(m) for m in net.modules],
    }
    if net.metadata:
        out["metadata"] = net.metadata
    return out


def load_network(path: str) -> NetworkSpec:
    return network_from_dict(_read_json(path), path=str(path))


def save_network(net: NetworkSpec, path: str):
    write_json_atomic(network_to_dict(net), path)


# ---------------------------------------------------------------------------
# Polynomial files
# ---------------------------------------------------------------------------


def polynomial_from_dict(obj: dict, path: str = "polynomial") -> TaylorPolynomial:
    _check_version(obj, path)
    x0 = _array(_need(obj, "x0", path), path + ".x0", 1)
    f0 = _need(obj, "f0", path)
    order = _need(obj, "order", path)
    mode = _need(obj, "mode", path)
    if not isinstance(order, int) or order < 1:
        _fail(path + ".order", f"order must be a positive integer, got {order!r}")
    raw_terms = _need(obj, "terms", path)
    if not isinstance(raw_terms, list):
        _fail(path + ".terms", "expected a list of terms")
    terms: dict = {}
    for i, entry in enumerate(raw_terms):
        tpath = f"{path}.terms[{i}]"
        index_obj = _need(entry, "index", tpath)
        coef = _need(entry, "coefficient", tpath)
        if not isinstance(index_obj, list) or not all(
            isinstance(p, list) and len(p) == 2 for p in index_obj
        ):
            _fail(tpath + ".index", "expected a list of [coordinate, multiplicity] pairs")
        index = tuple(sorted((int(c), int(m)) for c, m in index_obj))
        if index in terms:
            _fail(tpath, f"duplicate term index {list(index)}")
        if term_degree(index) > order:
            _fail(tpath, f"term degree {term_degree(index)} exceeds order {order}")
        terms[index] = coef
    try:
        return TaylorPolynomial(x0=x0, f0=float(f0), order=order, mode=mode, terms=terms)
    except SchemaError as exc:
        raise SchemaError(f"{path}: {exc}") from exc


def polynomial_to_dict(poly: TaylorPolynomial) -> dict:
    ordered = sorted(poly.terms.items(), key=lambda kv: _grlex_key(kv[0], poly.dim))
    return {
        "schema_version": SCHEMA_VERSION,
        "x0": poly.x0.tolist(),
        "f0": poly.f0,
        "order": poly.order,
        "mode": poly.mode,
        "terms": [
            {"index": [list(pair) for pair in index], "coefficient": coef}
            for index, coef in ordered
        ],
    }


def load_polynomial(path: str) -> TaylorPolynomial:
    return polynomial_from_dict(_read_json(path), path=str(path))


def save_polynomial(poly: TaylorPolynomial, path: str):
    write_json_atomic(polynomial_to_dict(poly), path)


# ---------------------------------------------------------------------------
# Shared plumbing
# ---------------------------------------------------------------------------


def _reject_constant(name: str):
    raise SchemaError(f"non-finite JSON constant {name!r} is not allowed")


def _read_json(path: str) -> dict:
    obj = _read_json_any(path)
    if not isinstance(obj, dict):
        raise SchemaError(f"{path}: expected a JSON object at the top level")
    return obj


def write_json_atomic(obj: dict, path: str):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(obj, fh, indent=1, allow_nan=False)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_array(path: str) -> np.ndarray:
    """Read a JSON array file (vector or nested image) as float64."""
    obj = _read_json_any(path)
    try:
        arr = np.asarray(obj, dtype=np.float64)
    except (TypeError, ValueError):
        raise SchemaError(f"{path}: expected a numeric JSON array") from None
    if not np.all(np.isfinite(arr)):
        raise SchemaError(f"{path}: array contains non-finite values")
    return arr


def _read_json_any(path: str):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh, parse_constant=_reject_constant)
    except FileNotFoundError:
        raise SchemaError(f"{path}: file not found") from None
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc})") from None
