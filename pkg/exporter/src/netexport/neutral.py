"""Self-contained reader and evaluator for the neutral network.json format.

Deliberately independent of the expansion package: this module implements
the documented schema (docs/formats.md in the main repository) from
scratch, so verification exercises the published contract rather than
shared code.
"""
from __future__ import annotations

import json

import numpy as np

SCHEMA_VERSION = 1

ACTIVATIONS = {
    "sine": np.sin,
    "relu": lambda x: np.maximum(0.0, x),
    "sigmoid": lambda x: np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x)))),
    "tanh": np.tanh,
    "square": lambda x: x * x,
}


class NeutralFormatError(ValueError):
    pass


def load(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    if obj.get("schema_version") != SCHEMA_VERSION:
        raise NeutralFormatError(
            f"{path}: unsupported schema_version {obj.get('schema_version')!r}"
        )
    for key in ("input_shape", "modules"):
        if key not in obj:
            raise NeutralFormatError(f"{path}: missing {key!r}")
    return obj


def _conv2d(x: np.ndarray, weight: np.ndarray, bias, stride, padding) -> np.ndarray:
    sh, sw = stride
    ph, pw = padding
    oc, ic, kh, kw = weight.shape
    if ph or pw:
        x = np.pad(x, ((0, 0), (ph, ph), (pw, pw)))
    h, w = x.shape[1], x.shape[2]
    oh = (h - kh) // sh + 1
    ow = (w - kw) // sw + 1
    out = np.zeros((oc, oh, ow))
    for o in range(oc):
        for oy in range(oh):
            for ox in range(ow):
                patch = x[:, oy * sh : oy * sh + kh, ox * sw : ox * sw + kw]
                out[o, oy, ox] = np.sum(weight[o] * patch)
    if bias is not None:
        out += np.asarray(bias)[:, np.newaxis, np.newaxis]
    return out


def _pool(x: np.ndarray, kernel, stride, reducer) -> np.ndarray:
    kh, kw = kernel
    sh, sw = stride
    c, h, w = x.shape
    oh = (h - kh) // sh + 1
    ow = (w - kw) // sw + 1
    out = np.zeros((c, oh, ow))
    for ci in range(c):
        for oy in range(oh):
            for ox in range(ow):
                out[ci, oy, ox] = reducer(
                    x[ci, oy * sh : oy * sh + kh, ox * sw : ox * sw + kw]
                )
    return out


def forward(net: dict, x: np.ndarray) -> np.ndarray:
    """Evaluate one input shaped like input_shape; returns the output array."""
    x = np.asarray(x, dtype=np.float64).reshape(tuple(net["input_shape"]))
    for i, module in enumerate(net["modules"]):
        kind = module["kind"]
        if kind == "fully_connected":
            x = np.asarray(module["weight"]) @ x + np.asarray(module["bias"])
        elif kind == "activation":
            x = ACTIVATIONS[module["name"]](x)
        elif kind == "conv2d":
            x = _conv2d(
                x,
                np.asarray(module["weight"], dtype=np.float64),
                module.get("bias"),
                tuple(module.get("stride", [1, 1])),
                tuple(module.get("padding", [0, 0])),
            )
        elif kind == "max_pool":
            x = _pool(x, tuple(module["kernel"]), tuple(module["stride"]), np.max)
        elif kind == "avg_pool":
            x = _pool(x, tuple(module["kernel"]), tuple(module["stride"]), np.mean)
        elif kind == "flatten":
            x = x.reshape(-1)
        elif kind == "unflatten":
            x = x.reshape(tuple(module["shape"]))
        else:
            raise NeutralFormatError(f"modules[{i}]: unknown kind {kind!r}")
    return x
