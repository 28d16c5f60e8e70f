"""Checkpoint-to-neutral conversion.

Two checkpoint forms are supported: a pickled ``torch.nn.Module`` (the
layer sequence is introspected directly) and a bare state dict, for which
an architecture hint must spell out the module sequence because tensor
names alone do not determine activations, pools or ordering.

The emitted JSON mirrors the documented network.json schema field by field
and is serialized with the same shortest-round-trip float formatting and
key order as the main package, so exporting twice (or re-saving on the
other side) is byte-identical.
"""
from __future__ import annotations

import json
import os
import tempfile

import numpy as np
import torch
from torch import nn


class ExportError(ValueError):
    pass


class UnsupportedLayers(ExportError):
    def __init__(self, layers: list[str]):
        self.layers = layers
        super().__init__(
            "unsupported layers in checkpoint: " + ", ".join(layers)
        )


_ACTIVATION_CLASSES = {
    nn.ReLU: "relu",
    nn.Tanh: "tanh",
    nn.Sigmoid: "sigmoid",
}

_HINT_ACTIVATIONS = ("relu", "tanh", "sigmoid", "sine", "square")


def load_checkpoint(path: str):
    """Return an nn.Module or a state dict from a .pt/.pth file."""
    if not os.path.exists(path):
        raise ExportError(f"{path}: file not found")
    try:
        obj = torch.load(path, map_location="cpu", weights_only=True)
    except Exception:
        # full pickled modules need the permissive loader
        obj = torch.load(path, map_location="cpu", weights_only=False)
    return obj


def _pair(value) -> list[int]:
    if isinstance(value, int):
        return [value, value]
    return [int(value[0]), int(value[1])]


def _module_entries(model: nn.Module) -> list[dict]:
    entries = []
    unsupported = []
    children = list(model.children()) if isinstance(model, nn.Sequential) else [model]
    if not isinstance(model, nn.Sequential):
        raise ExportError(
            f"checkpoint holds a {type(model).__name__}; only nn.Sequential "
            "module checkpoints can be introspected (use a state dict plus "
            "--arch otherwise)"
        )
    for child in children:
        if isinstance(child, nn.Linear):
            entries.append(
                {
                    "kind": "fully_connected",
                    "weight": child.weight.detach().double().numpy(),
                    "bias": (
                        child.bias.detach().double().numpy()
                        if child.bias is not None
                        else np.zeros(child.out_features)
                    ),
                }
            )
        elif isinstance(child, nn.Conv2d):
            if child.dilation != (1, 1) or child.groups != 1:
                unsupported.append(f"{type(child).__name__} (dilation/groups)")
                continue
            entries.append(
                {
                    "kind": "conv2d",
                    "weight": child.weight.detach().double().numpy(),
                    "bias": (
                        child.bias.detach().double().numpy()
                        if child.bias is not None
                        else None
                    ),
                    "stride": _pair(child.stride),
                    "padding": _pair(child.padding),
                }
            )
        elif type(child) in _ACTIVATION_CLASSES:
            entries.append({"kind": "activation", "name": _ACTIVATION_CLASSES[type(child)]})
        elif isinstance(child, nn.MaxPool2d):
            entries.append(
                {
                    "kind": "max_pool",
                    "kernel": _pair(child.kernel_size),
                    "stride": _pair(child.stride if child.stride is not None else child.kernel_size),
                }
            )
        elif isinstance(child, nn.AvgPool2d):
            entries.append(
                {
                    "kind": "avg_pool",
                    "kernel": _pair(child.kernel_size),
                    "stride": _pair(child.stride if child.stride is not None else child.kernel_size),
                }
            )
        elif isinstance(child, nn.Flatten):
            entries.append({"kind": "flatten"})
        elif isinstance(child, nn.Unflatten):
            entries.append({"kind": "unflatten", "shape": [int(v) for v in child.unflattened_size]})
        else:
            unsupported.append(type(child).__name__)
    if unsupported:
        raise UnsupportedLayers(unsupported)
    return entries


def _parse_pair_token(text: str, what: str) -> list[int]:
    parts = text.split("x")
    if len(parts) != 2:
        raise ExportError(f"bad {what} {text!r}: expected HxW")
    return [int(parts[0]), int(parts[1])]


def _entries_from_hint(state: dict, hint: str) -> list[dict]:
    """Build module entries by pairing hint tokens with state-dict tensors
    in order. Tokens: fc, conv[:SHxSW[:PHxPW]], activation names, maxpool/
    avgpool:KHxKW[:SHxSW], flatten, unflatten:CxHxW."""
    tensors = [
        (name, t) for name, t in state.items() if isinstance(t, torch.Tensor)
    ]
    weights = [(n, t) for n, t in tensors if n.endswith("weight")]
    biases = {n[: -len("bias")]: t for n, t in tensors if n.endswith("bias")}
    cursor = 0
    entries = []
    for raw in hint.split(","):
        token = raw.strip()
        if not token:
            continue
        parts = token.split(":")
        head = parts[0]
        if head in ("fc", "conv"):
            if cursor >= len(weights):
                raise ExportError(
                    f"architecture hint token {token!r} has no matching weight tensor"
                )
            name, weight = weights[cursor]
            cursor += 1
            prefix = name[: -len("weight")]
            bias = biases.get(prefix)
            if head == "fc":
                if weight.dim() != 2:
                    raise ExportError(
                        f"{name} has {weight.dim()} dims; 'fc' expects a matrix"
                    )
                entries.append(
                    {
                        "kind": "fully_connected",
                        "weight": weight.detach().double().numpy(),
                        "bias": (
                            bias.detach().double().numpy()
                            if bias is not None
                            else np.zeros(weight.shape[0])
                        ),
                    }
                )
            else:
                if weight.dim() != 4:
                    raise ExportError(
                        f"{name} has {weight.dim()} dims; 'conv' expects a 4-D kernel bank"
                    )
                stride = _parse_pair_token(parts[1], "stride") if len(parts) > 1 else [1, 1]
                padding = _parse_pair_token(parts[2], "padding") if len(parts) > 2 else [0, 0]
                entries.append(
                    {
                        "kind": "conv2d",
                        "weight": weight.detach().double().numpy(),
                        "bias": bias.detach().double().numpy() if bias is not None else None,
                        "stride": stride,
                        "padding": padding,
                    }
                )
        elif head in _HINT_ACTIVATIONS:
            entries.append({"kind": "activation", "name": head})
        elif head in ("maxpool", "avgpool"):
            if len(parts) < 2:
                raise ExportError(f"{token!r} needs a kernel, e.g. maxpool:2x2")
            kernel = _parse_pair_token(parts[1], "kernel")
            stride = _parse_pair_token(parts[2], "stride") if len(parts) > 2 else kernel
            entries.append(
                {
                    "kind": "max_pool" if head == "maxpool" else "avg_pool",
                    "kernel": kernel,
                    "stride": stride,
                }
            )
        elif head == "flatten":
            entries.append({"kind": "flatten"})
        elif head == "unflatten":
            if len(parts) < 2 or len(parts[1].split("x")) != 3:
                raise ExportError(f"{token!r} needs a target, e.g. unflatten:1x28x28")
            entries.append(
                {"kind": "unflatten", "shape": [int(v) for v in parts[1].split("x")]}
            )
        else:
            raise ExportError(f"unknown architecture hint token {token!r}")
    if cursor != len(weights):
        raise ExportError(
            f"architecture hint consumed {cursor} weight tensors but the "
            f"checkpoint has {len(weights)}"
        )
    return entries


def _infer_input_shape(entries: list[dict]) -> list[int]:
    first = entries[0]
    if first["kind"] == "fully_connected":
        return [int(first["weight"].shape[1])]
    raise ExportError(
        "input shape cannot be inferred when the first module is "
        f"{first['kind']!r}; pass --input-shape (e.g. 1x28x28)"
    )


def build_network_dict(checkpoint, arch_hint: str | None, input_shape=None, name=None) -> dict:
    if isinstance(checkpoint, nn.Module):
        entries = _module_entries(checkpoint)
    elif isinstance(checkpoint, dict):
        if arch_hint is None:
            raise ExportError(
                "checkpoint is a bare state dict: the architecture is "
                "ambiguous, pass --arch with the module sequence"
            )
        entries = _entries_from_hint(checkpoint, arch_hint)
    else:
        raise ExportError(
            f"unsupported checkpoint payload of type {type(checkpoint).__name__}"
        )
    if not entries:
        raise ExportError("checkpoint produced no modules")
    shape = list(input_shape) if input_shape else _infer_input_shape(entries)

    modules = []
    for entry in entries:
        clean = dict(entry)
        for key in ("weight", "bias"):
            if key in clean and isinstance(clean[key], np.ndarray):
                clean[key] = clean[key].tolist()
        modules.append(clean)
    out = {
        "schema_version": 1,
        "input_shape": shape,
        "modules": modules,
    }
    metadata = {"source_framework": "pytorch"}
    if name:
        metadata["name"] = name
    out["metadata"] = metadata
    return out


def write_network(obj: dict, path: str):
    """Same serialization settings as the main package's writer, so the
    bytes agree across components."""
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


def export(checkpoint_path: str, out_path: str, arch_hint=None, input_shape=None, name=None) -> dict:
    obj = build_network_dict(
        load_checkpoint(checkpoint_path), arch_hint, input_shape, name
    )
    write_network(obj, out_path)
    return obj
