"""Round-trip verification: does the neutral file reproduce the checkpoint?

Two passes: a structural diff of weight tensors (locates corrupted or
mismatched modules by index) and a behavioral comparison of forward values
over seeded random inputs, both models run in float64 so the only
differences left are real ones.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from . import neutral
from .convert import ExportError, load_checkpoint


@dataclass
class VerifyReport:
    passed: bool
    max_abs_diff: float
    threshold: float
    samples: int
    structural_mismatches: list[str] = field(default_factory=list)
    worst_input: list | None = None

    def lines(self) -> list[str]:
        out = [
            f"samples: {self.samples}",
            f"max_abs_diff: {self.max_abs_diff}",
            f"threshold: {self.threshold}",
            f"passed: {self.passed}",
        ]
        for item in self.structural_mismatches:
            out.append(f"mismatch: {item}")
        if self.worst_input is not None and not self.passed:
            out.append(f"worst_input: {self.worst_input}")
        return out


class _Sine(nn.Module):
    def forward(self, x):
        return torch.sin(x)


class _Square(nn.Module):
    def forward(self, x):
        return x * x


def _torch_from_json(net: dict) -> nn.Sequential:
    """Rebuild a runnable torch model mirroring the neutral description."""
    layers: list[nn.Module] = []
    for module in net["modules"]:
        kind = module["kind"]
        if kind == "fully_connected":
            weight = torch.tensor(module["weight"], dtype=torch.float64)
            layer = nn.Linear(weight.shape[1], weight.shape[0], dtype=torch.float64)
            with torch.no_grad():
                layer.weight.copy_(weight)
                layer.bias.copy_(torch.tensor(module["bias"], dtype=torch.float64))
            layers.append(layer)
        elif kind == "activation":
            layers.append(
                {
                    "relu": nn.ReLU(),
                    "tanh": nn.Tanh(),
                    "sigmoid": nn.Sigmoid(),
                    "sine": _Sine(),
                    "square": _Square(),
                }[module["name"]]
            )
        elif kind == "conv2d":
            weight = torch.tensor(module["weight"], dtype=torch.float64)
            layer = nn.Conv2d(
                weight.shape[1],
                weight.shape[0],
                (weight.shape[2], weight.shape[3]),
                stride=tuple(module.get("stride", [1, 1])),
                padding=tuple(module.get("padding", [0, 0])),
                bias=module.get("bias") is not None,
                dtype=torch.float64,
            )
            with torch.no_grad():
                layer.weight.copy_(weight)
                if module.get("bias") is not None:
                    layer.bias.copy_(torch.tensor(module["bias"], dtype=torch.float64))
            layers.append(layer)
        elif kind == "max_pool":
            layers.append(
                nn.MaxPool2d(tuple(module["kernel"]), stride=tuple(module["stride"]))
            )
        elif kind == "avg_pool":
            layers.append(
                nn.AvgPool2d(tuple(module["kernel"]), stride=tuple(module["stride"]))
            )
        elif kind == "flatten":
            layers.append(nn.Flatten(start_dim=0))
        elif kind == "unflatten":
            layers.append(nn.Unflatten(0, tuple(module["shape"])))
        else:
            raise ExportError(f"cannot rebuild module kind {kind!r}")
    return nn.Sequential(*layers)


def _checkpoint_weight_tensors(checkpoint) -> list[tuple[str, torch.Tensor]]:
    if isinstance(checkpoint, nn.Module):
        return [
            (name, param.detach())
            for name, param in checkpoint.state_dict().items()
            if name.endswith(("weight", "bias"))
        ]
    return [
        (name, t)
        for name, t in checkpoint.items()
        if isinstance(t, torch.Tensor) and name.endswith(("weight", "bias"))
    ]


def _structural_diff(checkpoint, net: dict) -> list[str]:
    """Pair checkpoint tensors with json parameters in order and report any
    value differences, naming the neutral module index."""
    ckpt_params = _checkpoint_weight_tensors(checkpoint)
    json_params = []
    for idx, module in enumerate(net["modules"]):
        for key in ("weight", "bias"):
            if module.get(key) is not None and key in module:
                json_params.append((idx, key, np.asarray(module[key], dtype=np.float64)))
    mismatches = []
    if len(ckpt_params) != len(json_params):
        mismatches.append(
            f"parameter count differs: checkpoint has {len(ckpt_params)}, "
            f"file has {len(json_params)}"
        )
        return mismatches
    for (name, tensor), (idx, key, arr) in zip(ckpt_params, json_params):
        src = tensor.double().numpy()
        if src.shape != arr.shape:
            mismatches.append(
                f"modules[{idx}].{key} shape {arr.shape} != checkpoint {name} {tuple(src.shape)}"
            )
            continue
        delta = float(np.max(np.abs(src - arr))) if src.size else 0.0
        if delta > 0.0:
            mismatches.append(
                f"modules[{idx}].{key} differs from checkpoint {name} (max |delta| = {delta:g})"
            )
    return mismatches


def verify(checkpoint_path: str, network_json_path: str, samples: int, seed: int, threshold: float = 1e-6) -> VerifyReport:
    if samples < 1:
        raise ExportError(f"sample count must be >= 1, got {samples}")
    checkpoint = load_checkpoint(checkpoint_path)
    net = neutral.load(network_json_path)
    structural = _structural_diff(checkpoint, net)

    if isinstance(checkpoint, nn.Module):
        source = checkpoint.double().eval()
    else:
        source = _torch_from_json(net).eval()
        # put the checkpoint's own tensors back so the source side really is
        # the checkpoint, not the file
        state = source.state_dict()
        ckpt_tensors = [
            t for _, t in _checkpoint_weight_tensors(checkpoint)
        ]
        if len(ckpt_tensors) == len(state):
            for key, tensor in zip(state, ckpt_tensors):
                state[key] = tensor.double().reshape(state[key].shape)
            source.load_state_dict(state)

    rng = np.random.default_rng(seed)
    shape = tuple(net["input_shape"])
    worst = 0.0
    worst_input = None
    for _ in range(samples):
        x = rng.standard_normal(shape)
        with torch.no_grad():
            if isinstance(checkpoint, nn.Module):
                src_val = source(torch.tensor(x, dtype=torch.float64).reshape(1, *shape))
            else:
                src_val = source(torch.tensor(x, dtype=torch.float64))
        src = src_val.detach().numpy().reshape(-1)
        neu = np.asarray(neutral.forward(net, x)).reshape(-1)
        diff = float(np.max(np.abs(src - neu)))
        if diff > worst:
            worst = diff
            worst_input = x.reshape(-1).tolist()
    passed = worst <= threshold and not structural
    return VerifyReport(
        passed=passed,
        max_abs_diff=worst,
        threshold=threshold,
        samples=samples,
        structural_mismatches=structural,
        worst_input=worst_input if not passed else None,
    )
