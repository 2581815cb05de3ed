"""Correction policy: a state-to-(beta_theta, alpha_theta) network."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from lfbl_racing._exceptions import PolicyFileError
from lfbl_racing.control.vehicle import VehicleState
from lfbl_racing.learning.networks import Mlp, NetworkFile, read_network_file, write_network_file

STATE_DIM = 5
OUTPUT_DIM = 6
DEFAULT_HIDDEN = (32, 32)
DEFAULT_OUTPUT_GAIN = 0.1


@dataclass(frozen=True)
class CorrectionPolicy:
    net: Mlp

    @classmethod
    def zeros(
        cls,
        hidden_sizes: tuple[int, ...] = DEFAULT_HIDDEN,
        output_gain: float = DEFAULT_OUTPUT_GAIN,
    ) -> CorrectionPolicy:
        sizes = (STATE_DIM, *hidden_sizes, OUTPUT_DIM)
        return cls(net=Mlp(layer_sizes=sizes, activation="tanh", output_gain=output_gain))

    @property
    def params(self) -> NDArray[np.float64]:
        return self.net.params

    @property
    def param_count(self) -> int:
        return self.net.param_count

    def with_params(self, params: NDArray[np.float64]) -> CorrectionPolicy:
        return CorrectionPolicy(net=self.net.with_params(params))

    def corrections(self, s: VehicleState) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        return policy_corrections(self, s)

    def save(self, path: Path) -> Path:
        return write_network_file(Path(path), NetworkFile.from_mlp(self.net, "policy"))

    @classmethod
    def load(cls, path: Path) -> CorrectionPolicy:
        net = read_network_file(Path(path), "policy").to_mlp()
        if net.layer_sizes[0] != STATE_DIM or net.layer_sizes[-1] != OUTPUT_DIM:
            raise PolicyFileError(
                f"Policy must map {STATE_DIM} inputs to {OUTPUT_DIM} outputs, "
                f"got {net.layer_sizes}"
            )
        return cls(net=net)


def policy_corrections(
    policy: CorrectionPolicy, s: VehicleState
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Forward pass split into ``beta_theta`` (2,) and row-major ``alpha_theta`` (2, 2)."""
    out = policy.net.forward(s.to_array())
    return out[:2], out[2:].reshape(2, 2)
