"""Kinematic bicycle plant, RK4 integration and the synthetic gas/brake actuator.

States are ``(x, y, psi, speed, beta)``; inputs are ``(a, b)`` with
``speed' = a`` and ``beta' = b``. The same code serves as the simulated plant
and as the nominal model; they only differ in their :class:`VehicleParams`.
"""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from lfbl_racing._exceptions import (
    ActionOutOfRangeError,
    NonFiniteStateError,
    SlipOutOfRangeError,
    SteeringOutOfRangeError,
)

HALF_PI = 0.5 * math.pi


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    psi: float
    speed: float
    beta: float

    def to_array(self) -> NDArray[np.float64]:
        return np.array([self.x, self.y, self.psi, self.speed, self.beta], dtype=np.float64)

    @classmethod
    def from_array(cls, values: NDArray[np.float64] | list[float]) -> VehicleState:
        x, y, psi, speed, beta = (float(v) for v in values)
        return cls(x=x, y=y, psi=psi, speed=speed, beta=beta)

    @property
    def course(self) -> float:
        """Direction of travel ``psi + beta``."""
        return self.psi + self.beta

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in (self.x, self.y, self.psi, self.speed, self.beta))


@dataclass(frozen=True)
class ControlInput:
    """Longitudinal acceleration ``a`` and slip-angle rate ``b``."""

    a: float
    b: float

    def to_array(self) -> NDArray[np.float64]:
        return np.array([self.a, self.b], dtype=np.float64)

    @classmethod
    def from_array(cls, values: NDArray[np.float64] | list[float]) -> ControlInput:
        a, b = (float(v) for v in values)
        return cls(a=a, b=b)

    def clipped(self, a_max: float, b_max: float) -> ControlInput:
        return ControlInput(a=min(max(self.a, -a_max), a_max), b=min(max(self.b, -b_max), b_max))


@dataclass(frozen=True)
class VehicleParams:
    l_r: float = 0.5
    l_f: float = 0.5

    def __post_init__(self) -> None:
        if not (self.l_r > 0 and self.l_f > 0):
            raise ValueError("l_r and l_f must be > 0")


@dataclass(frozen=True)
class ActuatorParams:
    a_gas_max: float = 4.0
    a_brake_max: float = 8.0
    tau_act: float = 0.1

    def __post_init__(self) -> None:
        if not (self.a_gas_max > 0 and self.a_brake_max > 0 and self.tau_act > 0):
            raise ValueError("actuator gains and tau_act must be > 0")

    def target(self, gas: float, brake: float) -> float:
        return self.a_gas_max * gas - self.a_brake_max * brake


@dataclass(frozen=True)
class ActuatorState:
    """Last commanded pedals, the realized acceleration and its lag target."""

    gas: float = 0.0
    brake: float = 0.0
    accel: float = 0.0
    target_accel: float = 0.0


def _deriv(state: NDArray[np.float64], a: float, b: float, l_r: float) -> NDArray[np.float64]:
    _, _, psi, speed, beta = state
    course = psi + beta
    return np.array(
        [
            speed * math.cos(course),
            speed * math.sin(course),
            speed / l_r * math.sin(beta),
            a,
            b,
        ]
    )


def bicycle_deriv(s: VehicleState, u: ControlInput, p: VehicleParams) -> NDArray[np.float64]:
    """Time derivative ``(V cos(psi+beta), V sin(psi+beta), V/l_r sin beta, a, b)``."""
    return _deriv(s.to_array(), u.a, u.b, p.l_r)


def integrate_rk4(
    state: NDArray[np.float64], u: NDArray[np.float64], l_r: float, dt: float
) -> NDArray[np.float64]:
    """One classical RK4 step on raw arrays with ``u`` held over the step.

    ``dt`` may be negative, which integrates backwards in time.
    """
    a, b = float(u[0]), float(u[1])
    k1 = _deriv(state, a, b, l_r)
    k2 = _deriv(state + 0.5 * dt * k1, a, b, l_r)
    k3 = _deriv(state + 0.5 * dt * k2, a, b, l_r)
    k4 = _deriv(state + dt * k3, a, b, l_r)
    return state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def step_rk4(s: VehicleState, u: ControlInput, p: VehicleParams, dt: float) -> VehicleState:
    """Advance the bicycle by ``dt`` with a zero-order-hold input.

    Raises:
        NonFiniteStateError: If the new state has a non-finite component.
        SlipOutOfRangeError: If the new slip angle leaves (-pi/2, pi/2).
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    return _checked(integrate_rk4(s.to_array(), u.to_array(), p.l_r, dt))


def step_rk4_feedback(
    s: VehicleState,
    law: Callable[[VehicleState], ControlInput],
    p: VehicleParams,
    dt: float,
    *,
    first: ControlInput | None = None,
) -> VehicleState:
    """Advance the bicycle by ``dt`` with the input recomputed at every RK4 stage.

    ``law`` maps a stage state to the input applied there. ``first`` is the
    input at ``s`` when the caller already has it.

    Raises:
        NonFiniteStateError: If the new state has a non-finite component.
        SlipOutOfRangeError: If the new slip angle leaves (-pi/2, pi/2).
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")

    def deriv(state: NDArray[np.float64], u: ControlInput | None = None) -> NDArray[np.float64]:
        u = u if u is not None else law(VehicleState.from_array(state))
        return _deriv(state, u.a, u.b, p.l_r)

    state = s.to_array()
    k1 = deriv(state, first)
    k2 = deriv(state + 0.5 * dt * k1)
    k3 = deriv(state + 0.5 * dt * k2)
    k4 = deriv(state + dt * k3)
    return _checked(state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))


def _checked(nxt: NDArray[np.float64]) -> VehicleState:
    if not np.all(np.isfinite(nxt)):
        raise NonFiniteStateError(f"Non-finite state after RK4 step: {nxt.tolist()}")
    if abs(nxt[4]) >= HALF_PI:
        raise SlipOutOfRangeError(f"Slip angle {nxt[4]:.4f} rad left (-pi/2, pi/2)")
    return VehicleState.from_array(nxt)


def beta_from_steering(delta_f: float, p: VehicleParams) -> float:
    """Slip angle set by the front steering angle ``delta_f``."""
    if not abs(delta_f) < HALF_PI:
        raise SteeringOutOfRangeError(f"Steering angle {delta_f} outside (-pi/2, pi/2)")
    return math.atan(p.l_r / (p.l_f + p.l_r) * math.tan(delta_f))


def steering_from_beta(beta: float, p: VehicleParams) -> float:
    """Inverse of :func:`beta_from_steering`."""
    if not abs(beta) < HALF_PI:
        raise SlipOutOfRangeError(f"Slip angle {beta} outside (-pi/2, pi/2)")
    return math.atan((p.l_f + p.l_r) / p.l_r * math.tan(beta))


def actuator_step(
    act: ActuatorState,
    gas: float,
    brake: float,
    dt: float,
    params: ActuatorParams | None = None,
) -> ActuatorState:
    """Advance the first-order acceleration lag under a held pedal command.

    The realized acceleration moves toward ``a_gas_max*gas - a_brake_max*brake``
    by ``dt/tau_act`` of the gap each step and is clipped to the actuator range.

    Raises:
        ActionOutOfRangeError: If ``gas`` or ``brake`` is outside [0, 1].
    """
    params = params or ActuatorParams()
    for name, value in (("gas", gas), ("brake", brake)):
        if not 0.0 <= value <= 1.0:
            raise ActionOutOfRangeError(f"{name}={value} outside [0, 1]")
    if dt <= 0:
        raise ValueError("dt must be > 0")

    target = params.target(gas, brake)
    accel = act.accel + (dt / params.tau_act) * (target - act.accel)
    accel = min(max(accel, -params.a_brake_max), params.a_gas_max)
    return ActuatorState(gas=gas, brake=brake, accel=accel, target_accel=target)
