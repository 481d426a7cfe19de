"""Learnable function families that stand in for unknown ODE parameters.

Three families: a vector of learnable constants (optionally reparameterized
to stay positive), a bias-free linear map for scalar observables, and a
small feed-forward network with tanh hidden units and a logistic output so
its prediction always lies in (0, 1).

``apply(theta, inputs)`` is a pure function of whatever scalar type it is
given; pass tape nodes to record the evaluation, floats to run it eagerly.
"""

from __future__ import annotations

import json
import math

import numpy as np

from .errors import StructuralError
from .tape import inv_softplus, sigmoid, softplus, tanh

_TRANSFORMS = ("identity", "softplus")


def _apply_transform(name, x):
    if name == "identity":
        return x
    return softplus(x)


class ConstApprox:
    """Learnable constants, one per unknown parameter.

    Each component can be stored raw or through a softplus
    reparameterization that keeps the effective value positive (used for
    time constants that sit in a denominator).
    """

    family = "const"

    def __init__(self, values, transforms=None, names=None):
        values = np.asarray(values, dtype=float)
        if transforms is None:
            transforms = ("identity",) * values.size
        transforms = tuple(transforms)
        if len(transforms) != values.size:
            raise StructuralError("one transform per component required")
        for t in transforms:
            if t not in _TRANSFORMS:
                raise StructuralError(f"unknown transform {t!r}")
        self.params = values
        self.transforms = transforms
        self.names = list(names) if names is not None else None

    @classmethod
    def from_effective(cls, effective, transforms=None, names=None):
        """Build from effective (post-transform) values."""
        effective = np.asarray(effective, dtype=float)
        if transforms is None:
            transforms = ("identity",) * effective.size
        raw = [inv_softplus(v) if t == "softplus" else float(v)
               for v, t in zip(effective, transforms)]
        return cls(raw, transforms, names)

    @property
    def n_params(self):
        return self.params.size

    def structure_key(self):
        return ("const", self.transforms)

    def apply(self, theta, inputs):
        return [_apply_transform(t, th) for t, th in zip(self.transforms, theta)]

    def effective(self) -> np.ndarray:
        return np.array([float(v) for v in self.apply(self.params, ())])


class LinearApprox:
    """Bias-free linear map of a scalar observable: output = a * x."""

    family = "linear"

    def __init__(self, a: float):
        self.params = np.array([float(a)])

    @property
    def a(self) -> float:
        return float(self.params[0])

    @property
    def n_params(self):
        return 1

    def structure_key(self):
        return ("linear",)

    def apply(self, theta, inputs):
        if len(inputs) != 1:
            raise StructuralError(f"linear map takes one input, got {len(inputs)}")
        return [theta[0] * inputs[0]]


class MlpApprox:
    """Feed-forward network; tanh hidden layers, logistic output in (0, 1)."""

    family = "mlp"

    def __init__(self, layer_sizes, params=None):
        layer_sizes = tuple(int(s) for s in layer_sizes)
        if len(layer_sizes) < 2 or layer_sizes[-1] != 1:
            raise StructuralError("layer sizes must end with a single output")
        self.layer_sizes = layer_sizes
        n = sum((layer_sizes[k] + 1) * layer_sizes[k + 1]
                for k in range(len(layer_sizes) - 1))
        if params is None:
            params = np.zeros(n)
        params = np.asarray(params, dtype=float)
        if params.size != n:
            raise StructuralError(f"expected {n} parameters, got {params.size}")
        self.params = params

    @property
    def n_params(self):
        return self.params.size

    def structure_key(self):
        return ("mlp", self.layer_sizes)

    def weight_shapes(self):
        sizes = self.layer_sizes
        return [(sizes[k + 1], sizes[k]) for k in range(len(sizes) - 1)]

    def apply(self, theta, inputs):
        if len(inputs) != self.layer_sizes[0]:
            raise StructuralError(
                f"network takes {self.layer_sizes[0]} inputs, got {len(inputs)}")
        acts = list(inputs)
        pos = 0
        n_layers = len(self.layer_sizes) - 1
        for layer in range(n_layers):
            n_in = self.layer_sizes[layer]
            n_out = self.layer_sizes[layer + 1]
            nxt = []
            for j in range(n_out):
                z = theta[pos + n_in * n_out + j]  # bias
                for i in range(n_in):
                    z = z + theta[pos + j * n_in + i] * acts[i]
                nxt.append(tanh(z) if layer < n_layers - 1 else sigmoid(z))
            acts = nxt
            pos += n_in * n_out + n_out
        return acts


def approx_eval(approx, inputs) -> np.ndarray:
    """Evaluate an approximator at its stored parameters, on plain floats."""
    out = approx.apply(approx.params, tuple(float(v) for v in inputs))
    return np.array([float(v) for v in out])


def approx_init(family: str, seed, *, ranges=None, transforms=None,
                layer_sizes=None, names=None):
    """Draw a fresh approximator instance, deterministic in ``seed``.

    Constants are sampled uniformly from their per-component ranges (in
    effective units), the linear coefficient from [2, 6] by default, and
    network weights uniformly from +-sqrt(6 / (fan_in + fan_out)) with zero
    biases.
    """
    rng = np.random.default_rng(seed)
    if family == "const":
        if not ranges:
            raise StructuralError("const family needs sampling ranges")
        effective = [rng.uniform(lo, hi) for lo, hi in ranges]
        return ConstApprox.from_effective(effective, transforms, names)
    if family == "linear":
        lo, hi = ranges if ranges is not None else (2.0, 6.0)
        return LinearApprox(rng.uniform(lo, hi))
    if family == "mlp":
        if layer_sizes is None:
            raise StructuralError("mlp family needs layer sizes")
        net = MlpApprox(layer_sizes)
        flat = []
        for (n_out, n_in) in net.weight_shapes():
            r = math.sqrt(6.0 / (n_in + n_out))
            flat.append(rng.uniform(-r, r, size=n_in * n_out))
            flat.append(np.zeros(n_out))
        net.params = np.concatenate(flat)
        return net
    raise StructuralError(f"unknown approximator family {family!r}")


def approx_to_json(approx) -> dict:
    doc = {"family": approx.family, "params": [float(v) for v in approx.params]}
    if approx.family == "const":
        doc["transforms"] = list(approx.transforms)
        if approx.names:
            doc["names"] = list(approx.names)
    elif approx.family == "mlp":
        doc["layer_sizes"] = list(approx.layer_sizes)
    return doc


def approx_from_json(doc: dict):
    family = doc["family"]
    if family == "const":
        return ConstApprox(doc["params"], tuple(doc.get("transforms", ())) or None,
                           doc.get("names"))
    if family == "linear":
        return LinearApprox(doc["params"][0])
    if family == "mlp":
        return MlpApprox(doc["layer_sizes"], doc["params"])
    raise StructuralError(f"unknown approximator family {family!r}")


def approx_dumps(approx) -> str:
    return json.dumps(approx_to_json(approx), sort_keys=True)
