"""Inverse actuator network: commanded acceleration to (gas, brake).

Data comes from the synthetic lagged actuator driving the bicycle in a straight
line. Each sample holds a random pedal command, lets the actuator settle, then
measures the mean ``dV/dt`` over a short window.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
from numpy.typing import NDArray

from lfbl_racing._exceptions import NonFiniteLossError, PolicyFileError
from lfbl_racing.control.vehicle import (
    ActuatorParams,
    ActuatorState,
    ControlInput,
    VehicleParams,
    VehicleState,
    actuator_step,
    step_rk4,
)
from lfbl_racing.learning.networks import (
    Adam,
    Mlp,
    NetworkFile,
    read_network_file,
    write_network_file,
)

logger = logging.getLogger(__name__)

Sampling = Literal["exclusive", "independent"]

DEFAULT_SAMPLES = 5000
DEFAULT_HOLD_STEPS = 10
DEFAULT_SETTLE_STEPS = 25
DEFAULT_LR = 0.05
DEFAULT_EPOCHS = 200
DEFAULT_BATCH = 32
DEFAULT_HIDDEN = 200
DEFAULT_SLOPE = 0.01
DEFAULT_LR_DECAY = 0.95


@dataclass(frozen=True)
class ActuationSample:
    acceleration: float
    gas: float
    brake: float


def _draw_action(rng: np.random.Generator, sampling: Sampling) -> tuple[float, float]:
    if sampling == "exclusive":
        pedal = float(rng.uniform(-1.0, 1.0))
        return max(pedal, 0.0), max(-pedal, 0.0)
    if sampling == "independent":
        gas, brake = rng.uniform(0.0, 1.0, size=2)
        return float(gas), float(brake)
    raise ValueError(f"Unknown sampling mode {sampling!r}")


def collect_data(
    actuator: ActuatorParams,
    n: int = DEFAULT_SAMPLES,
    hold_steps: int = DEFAULT_HOLD_STEPS,
    dt: float = 0.02,
    seed: int = 0,
    *,
    settle_steps: int = DEFAULT_SETTLE_STEPS,
    sampling: Sampling = "independent",
    vehicle: VehicleParams | None = None,
) -> list[ActuationSample]:
    """Sample ``n`` (acceleration, gas, brake) observations from the actuator.

    The actuator's lag state carries over from one sample to the next; the
    vehicle restarts from rest for each measurement window. Steering is zero.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if hold_steps < 2:
        raise ValueError("hold_steps must be >= 2")
    if settle_steps < 0:
        raise ValueError("settle_steps must be >= 0")
    vehicle = vehicle or VehicleParams()
    rng = np.random.default_rng(seed)
    act = ActuatorState()
    samples: list[ActuationSample] = []

    for _ in range(n):
        gas, brake = _draw_action(rng, sampling)
        for _ in range(settle_steps):
            act = actuator_step(act, gas, brake, dt, actuator)
        s = VehicleState(x=0.0, y=0.0, psi=0.0, speed=0.0, beta=0.0)
        deltas = []
        for _ in range(hold_steps):
            act = actuator_step(act, gas, brake, dt, actuator)
            s_next = step_rk4(s, ControlInput(a=act.accel, b=0.0), vehicle, dt)
            deltas.append((s_next.speed - s.speed) / dt)
            s = s_next
        samples.append(ActuationSample(acceleration=float(np.mean(deltas)), gas=gas, brake=brake))

    logger.debug("Collected %d actuation samples (%s sampling)", n, sampling)
    return samples


@dataclass(frozen=True)
class PreNet:
    """Network plus the affine normalization of its scalar input."""

    net: Mlp
    input_shift: float = 0.0
    input_scale: float = 1.0

    @classmethod
    def untrained(
        cls, hidden_size: int = DEFAULT_HIDDEN, negative_slope: float = DEFAULT_SLOPE
    ) -> PreNet:
        return cls(
            net=Mlp(
                layer_sizes=(1, hidden_size, 2),
                activation="leaky_relu",
                negative_slope=negative_slope,
            )
        )

    def normalize(self, accel: NDArray[np.float64]) -> NDArray[np.float64]:
        shifted = np.asarray(accel, dtype=np.float64) - self.input_shift
        return (shifted / self.input_scale).reshape(-1, 1)

    def predict(self, accel: NDArray[np.float64] | float) -> NDArray[np.float64]:
        """Raw (unclamped) ``(gas, brake)`` rows for each acceleration."""
        return self.net.forward(self.normalize(np.atleast_1d(accel)))

    def accel_to_action(self, accel: float) -> tuple[float, float]:
        return accel_to_action(self, accel)

    def save(self, path: Path) -> Path:
        payload = NetworkFile.from_mlp(
            self.net, "prenet", input_shift=self.input_shift, input_scale=self.input_scale
        )
        return write_network_file(Path(path), payload)

    @classmethod
    def load(cls, path: Path) -> PreNet:
        payload = read_network_file(Path(path), "prenet")
        net = payload.to_mlp()
        if net.layer_sizes[0] != 1 or net.layer_sizes[-1] != 2:
            raise PolicyFileError(f"Prenet must map 1 input to 2 outputs, got {net.layer_sizes}")
        if not payload.input_scale > 0:
            raise PolicyFileError("Prenet input_scale must be > 0")
        return cls(net=net, input_shift=payload.input_shift, input_scale=payload.input_scale)


def accel_to_action(net: PreNet, accel: float) -> tuple[float, float]:
    """Predicted pedals for ``accel``, each clamped to [0, 1]."""
    gas, brake = np.clip(net.predict(float(accel))[0], 0.0, 1.0)
    return float(gas), float(brake)


@dataclass(frozen=True)
class PrenetTraining:
    net: PreNet
    losses: list[float]

    @property
    def final_mse(self) -> float:
        return self.losses[-1] if self.losses else math.nan


def _arrays(data: list[ActuationSample]) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    accel = np.array([d.acceleration for d in data], dtype=np.float64)
    targets = np.array([[d.gas, d.brake] for d in data], dtype=np.float64)
    return accel, targets


def train_prenet(
    data: list[ActuationSample],
    epochs: int = DEFAULT_EPOCHS,
    lr: float = DEFAULT_LR,
    *,
    batch_size: int = DEFAULT_BATCH,
    hidden_size: int = DEFAULT_HIDDEN,
    negative_slope: float = DEFAULT_SLOPE,
    lr_decay: float = DEFAULT_LR_DECAY,
    seed: int = 0,
) -> PrenetTraining:
    """Fit the inverse actuator map by mini-batch Adam on the MSE.

    The learning rate is multiplied by ``lr_decay`` after every epoch. The
    returned curve holds the full-dataset MSE after each epoch.

    Raises:
        NonFiniteLossError: If a batch loss is not finite; the last finite
            network and the curve so far are attached.
    """
    if not data:
        raise ValueError("data must not be empty")
    if epochs < 1 or batch_size < 1:
        raise ValueError("epochs and batch_size must be >= 1")
    rng = np.random.default_rng(seed)
    accel, targets = _arrays(data)
    scale = float(accel.std())
    prenet = PreNet(
        net=PreNet.untrained(hidden_size, negative_slope).net.initialized(rng),
        input_shift=float(accel.mean()),
        input_scale=scale if scale > 1e-12 else 1.0,
    )
    inputs = prenet.normalize(accel)
    adam = Adam(lr=lr)
    params = prenet.net.params.copy()
    losses: list[float] = []

    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(data))
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            net = prenet.net.with_params(params)
            out, cache = net.forward_with_cache(inputs[idx])
            err = out - targets[idx]
            batch_loss = float(np.mean(err * err))
            if not math.isfinite(batch_loss):
                raise NonFiniteLossError(
                    f"Non-finite prenet loss in epoch {epoch}", checkpoint=prenet, curve=losses
                )
            grad = net.backward(cache, 2.0 * err / err.size)
            params = adam.step(params, grad)

        candidate = PreNet(
            net=prenet.net.with_params(params),
            input_shift=prenet.input_shift,
            input_scale=prenet.input_scale,
        )
        residual = candidate.net.forward(inputs) - targets
        mse = float(np.mean(residual * residual))
        if not math.isfinite(mse):
            raise NonFiniteLossError(
                f"Non-finite prenet loss after epoch {epoch}", checkpoint=prenet, curve=losses
            )
        prenet = candidate
        losses.append(mse)
        adam.lr *= lr_decay
        logger.debug("Prenet epoch %d: mse %.4e", epoch, mse)

    logger.info("Prenet trained for %d epochs: final mse %.4e", epochs, losses[-1])
    return PrenetTraining(net=prenet, losses=losses)


def steady_state_accel(gas: float, brake: float, params: ActuatorParams) -> float:
    """Acceleration the lagged actuator settles to under a held command."""
    return min(max(params.target(gas, brake), -params.a_brake_max), params.a_gas_max)


def round_trip_error(
    net: PreNet, params: ActuatorParams, commands: NDArray[np.float64]
) -> tuple[float, NDArray[np.float64]]:
    """Mean absolute error between commands and the steady-state realized acceleration."""
    realized = np.array(
        [steady_state_accel(*accel_to_action(net, float(c)), params) for c in commands]
    )
    return float(np.mean(np.abs(realized - commands))), realized
