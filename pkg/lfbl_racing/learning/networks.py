"""Small fully connected networks on numpy, with manual backprop and Adam.

Parameters live in a single flat vector so that gradient-free trainers can
perturb them directly and files can store them as one array.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator

from lfbl_racing._exceptions import PolicyFileError

Activation = Literal["tanh", "leaky_relu"]
Array = NDArray[np.float64]


def _activate(z: Array, kind: Activation, slope: float) -> Array:
    if kind == "tanh":
        return np.tanh(z)
    return np.where(z > 0, z, slope * z)


def _activate_grad(z: Array, a: Array, kind: Activation, slope: float) -> Array:
    if kind == "tanh":
        return 1.0 - a * a
    return np.where(z > 0, 1.0, slope)


@dataclass
class Mlp:
    """Hidden layers use ``activation``; the output layer is linear times ``output_gain``."""

    layer_sizes: tuple[int, ...]
    activation: Activation = "tanh"
    output_gain: float = 1.0
    negative_slope: float = 0.01
    params: Array = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        self.layer_sizes = tuple(int(n) for n in self.layer_sizes)
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise ValueError(f"Invalid layer sizes {self.layer_sizes}")
        if self.params is None:
            self.params = np.zeros(self.param_count)
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.params.shape != (self.param_count,):
            raise ValueError(
                f"Expected {self.param_count} parameters, got shape {self.params.shape}"
            )

    @property
    def param_count(self) -> int:
        sizes = self.layer_sizes
        return sum(n_in * n_out + n_out for n_in, n_out in zip(sizes[:-1], sizes[1:]))

    @property
    def n_outputs(self) -> int:
        return self.layer_sizes[-1]

    def layers(self, params: Array | None = None) -> list[tuple[Array, Array]]:
        """``(W, b)`` views into the flat vector; ``W`` is ``(n_in, n_out)``."""
        flat = self.params if params is None else params
        out, offset = [], 0
        for n_in, n_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            w = flat[offset : offset + n_in * n_out].reshape(n_in, n_out)
            offset += n_in * n_out
            b = flat[offset : offset + n_out]
            offset += n_out
            out.append((w, b))
        return out

    def with_params(self, params: Array) -> Mlp:
        return Mlp(
            layer_sizes=self.layer_sizes,
            activation=self.activation,
            output_gain=self.output_gain,
            negative_slope=self.negative_slope,
            params=np.array(params, dtype=np.float64),
        )

    def initialized(self, rng: np.random.Generator) -> Mlp:
        """Copy with scaled Gaussian weights and zero biases."""
        gain = 1.0 if self.activation == "tanh" else math.sqrt(2.0)
        chunks = []
        for n_in, n_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            chunks.append(rng.standard_normal(n_in * n_out) * gain / math.sqrt(n_in))
            chunks.append(np.zeros(n_out))
        return self.with_params(np.concatenate(chunks))

    def forward(self, x: Array) -> Array:
        a = np.asarray(x, dtype=np.float64)
        layers = self.layers()
        for w, b in layers[:-1]:
            a = _activate(a @ w + b, self.activation, self.negative_slope)
        w, b = layers[-1]
        return self.output_gain * (a @ w + b)

    def forward_with_cache(self, x: Array) -> tuple[Array, list[tuple[Array, Array]]]:
        """Batched forward pass keeping ``(pre-activation, activation)`` per layer."""
        a = np.atleast_2d(np.asarray(x, dtype=np.float64))
        cache = [(a, a)]
        layers = self.layers()
        for w, b in layers[:-1]:
            z = a @ w + b
            a = _activate(z, self.activation, self.negative_slope)
            cache.append((z, a))
        w, b = layers[-1]
        return self.output_gain * (a @ w + b), cache

    def backward(self, cache: list[tuple[Array, Array]], grad_out: Array) -> Array:
        """Flat gradient of ``sum(grad_out * output)`` with respect to the parameters."""
        layers = self.layers()
        grads: list[Array] = []
        delta = self.output_gain * np.atleast_2d(grad_out)
        for idx in range(len(layers) - 1, -1, -1):
            w, _ = layers[idx]
            a_prev = cache[idx][1]
            grads.append(delta.sum(axis=0))
            grads.append((a_prev.T @ delta).ravel())
            if idx > 0:
                z_prev, a_prev_act = cache[idx]
                delta = (delta @ w.T) * _activate_grad(
                    z_prev, a_prev_act, self.activation, self.negative_slope
                )
        grads.reverse()
        return np.concatenate(grads)


@dataclass
class Adam:
    """Adam on a flat parameter vector (descends ``grad``)."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: Array | None = None
    v: Array | None = None

    def step(self, params: Array, grad: Array) -> Array:
        if self.m is None or self.v is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class NetworkFile(BaseModel):
    """On-disk network: architecture header plus the flat parameter array."""

    model_config = ConfigDict(extra="forbid")

    kind: Literal["policy", "prenet"]
    layer_sizes: list[int]
    activation: Activation
    output_gain: float = 1.0
    negative_slope: float = 0.01
    input_shift: float = 0.0
    input_scale: float = 1.0
    params: list[float]

    @field_validator("params")
    @classmethod
    def _finite(cls, value: list[float]) -> list[float]:
        if not all(math.isfinite(v) for v in value):
            raise ValueError("parameters must be finite")
        return value

    def to_mlp(self) -> Mlp:
        try:
            return Mlp(
                layer_sizes=tuple(self.layer_sizes),
                activation=self.activation,
                output_gain=self.output_gain,
                negative_slope=self.negative_slope,
                params=np.array(self.params, dtype=np.float64),
            )
        except ValueError as exc:
            raise PolicyFileError(f"Network header does not match parameters: {exc}") from exc

    @classmethod
    def from_mlp(cls, net: Mlp, kind: Literal["policy", "prenet"], **extra: float) -> NetworkFile:
        return cls(
            kind=kind,
            layer_sizes=list(net.layer_sizes),
            activation=net.activation,
            output_gain=net.output_gain,
            negative_slope=net.negative_slope,
            params=[float(p) for p in net.params],
            **extra,
        )


def write_network_file(path: Path, payload: NetworkFile) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    # repr round-trips float64 exactly
    path.write_text(payload.model_dump_json(indent=2) + "\n", encoding="utf-8")
    return path


def read_network_file(path: Path, kind: Literal["policy", "prenet"]) -> NetworkFile:
    """Load and validate a network file.

    Raises:
        PolicyFileError: If the file is missing, unreadable, or of the wrong kind.
    """
    path = Path(path)
    if not path.exists():
        raise PolicyFileError(f"Network file not found: {path}")
    try:
        payload = NetworkFile.model_validate(json.loads(path.read_text(encoding="utf-8")))
    except (json.JSONDecodeError, ValidationError, UnicodeDecodeError) as exc:
        raise PolicyFileError(f"Corrupt network file {path}: {exc}") from exc
    if payload.kind != kind:
        raise PolicyFileError(f"{path} holds a {payload.kind} network, expected {kind}")
    return payload
