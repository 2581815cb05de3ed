from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from lfbl_racing._exceptions import PolicyFileError
from lfbl_racing.learning.networks import (
    Adam,
    Mlp,
    NetworkFile,
    read_network_file,
    write_network_file,
)


def _check_gradient(net: Mlp, x: np.ndarray, rng: np.random.Generator) -> None:
    weights = rng.standard_normal((x.shape[0], net.n_outputs))

    def loss(params: np.ndarray) -> float:
        return float(np.sum(weights * net.with_params(params).forward(x)))

    _, cache = net.forward_with_cache(x)
    grad = net.backward(cache, weights)
    h = 1e-6
    for _ in range(20):
        direction = rng.standard_normal(net.param_count)
        direction /= np.linalg.norm(direction)
        numeric = (loss(net.params + h * direction) - loss(net.params - h * direction)) / (2 * h)
        analytic = float(grad @ direction)
        assert abs(numeric - analytic) <= 1e-5 * max(1.0, abs(analytic))


def test_tanh_network_gradient_matches_finite_differences() -> None:
    rng = np.random.default_rng(0)
    net = Mlp(layer_sizes=(5, 8, 8, 6), activation="tanh", output_gain=0.1).initialized(rng)

    _check_gradient(net, rng.standard_normal((7, 5)), rng)


def test_leaky_relu_network_gradient_matches_finite_differences() -> None:
    rng = np.random.default_rng(1)
    net = Mlp(layer_sizes=(1, 20, 2), activation="leaky_relu").initialized(rng)
    # nonzero biases keep the pre-activations away from the kink
    net = net.with_params(net.params + 0.05 * rng.standard_normal(net.param_count))

    _check_gradient(net, rng.standard_normal((9, 1)), rng)


def test_zero_network_outputs_exact_zeros() -> None:
    net = Mlp(layer_sizes=(5, 4, 6))

    out = net.forward(np.array([1.0, -2.0, 3.0, 0.5, 0.1]))

    assert out.shape == (6,)
    assert np.all(out == 0.0)


def test_parameter_layout() -> None:
    net = Mlp(layer_sizes=(3, 4, 2))

    assert net.param_count == 3 * 4 + 4 + 4 * 2 + 2
    shapes = [(w.shape, b.shape) for w, b in net.layers()]
    assert shapes == [((3, 4), (4,)), ((4, 2), (2,))]
    with pytest.raises(ValueError):
        Mlp(layer_sizes=(3, 2), params=np.zeros(3))


def test_adam_minimizes_a_quadratic() -> None:
    target = np.array([1.0, -2.0, 0.5])
    params = np.zeros(3)
    adam = Adam(lr=0.05)

    for _ in range(2000):
        params = adam.step(params, 2.0 * (params - target))

    np.testing.assert_allclose(params, target, atol=0.05)


def test_network_file_round_trip_is_exact(tmp_path: Path) -> None:
    net = Mlp(layer_sizes=(5, 4, 6), output_gain=0.1).initialized(np.random.default_rng(2))
    path = tmp_path / "nets" / "policy.json"

    write_network_file(path, NetworkFile.from_mlp(net, "policy"))
    loaded = read_network_file(path, "policy").to_mlp()

    assert loaded.layer_sizes == net.layer_sizes
    assert loaded.output_gain == 0.1
    np.testing.assert_array_equal(loaded.params, net.params)


def test_network_file_errors(tmp_path: Path) -> None:
    net = Mlp(layer_sizes=(1, 3, 2))
    path = write_network_file(tmp_path / "prenet.json", NetworkFile.from_mlp(net, "prenet"))

    with pytest.raises(PolicyFileError, match="expected policy"):
        read_network_file(path, "policy")
    with pytest.raises(PolicyFileError, match="not found"):
        read_network_file(tmp_path / "missing.json", "prenet")

    corrupt = tmp_path / "corrupt.json"
    corrupt.write_text("{not json", encoding="utf-8")
    with pytest.raises(PolicyFileError, match="Corrupt"):
        read_network_file(corrupt, "prenet")

    payload = json.loads(path.read_text(encoding="utf-8"))
    payload["params"] = payload["params"][:-1]
    short = tmp_path / "short.json"
    short.write_text(json.dumps(payload), encoding="utf-8")
    with pytest.raises(PolicyFileError, match="does not match"):
        read_network_file(short, "prenet").to_mlp()
