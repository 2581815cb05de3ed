"""Feedback-linearizing controller for the bicycle model.

Outputs are the positions ``(x, y)``. Each has relative degree two, so
``(x'', y'') = A(s) u + b(s)`` with the decoupling matrix ``A`` and the drift
``b``. The nominal law picks ``u`` so that ``(x'', y'')`` equals a virtual input
``v``; the corrected law adds learned offsets to ``-A^-1 b`` and ``A^-1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Protocol

import numpy as np
from numpy.typing import NDArray

from lfbl_racing._exceptions import SpeedTooLowError
from lfbl_racing.control.vehicle import ControlInput, VehicleParams, VehicleState

DriftForm = Literal["exact", "as_printed"]
DRIFT_FORMS: tuple[DriftForm, ...] = ("exact", "as_printed")
DEFAULT_EPS_V = 1e-3


@dataclass(frozen=True)
class LinearState:
    """Normal-form state ``(x, x', y, y')``."""

    x: float
    xdot: float
    y: float
    ydot: float

    def to_array(self) -> NDArray[np.float64]:
        return np.array([self.x, self.xdot, self.y, self.ydot], dtype=np.float64)

    @classmethod
    def from_array(cls, values: NDArray[np.float64] | list[float]) -> LinearState:
        x, xdot, y, ydot = (float(v) for v in values)
        return cls(x=x, xdot=xdot, y=y, ydot=ydot)


@dataclass(frozen=True)
class VirtualInput:
    """Commanded ``(x'', y'')``."""

    v1: float
    v2: float

    def to_array(self) -> NDArray[np.float64]:
        return np.array([self.v1, self.v2], dtype=np.float64)

    @classmethod
    def from_array(cls, values: NDArray[np.float64] | list[float]) -> VirtualInput:
        v1, v2 = (float(v) for v in values)
        return cls(v1=v1, v2=v2)


@dataclass(frozen=True)
class Decoupling:
    a: NDArray[np.float64]
    b: NDArray[np.float64]

    @property
    def det(self) -> float:
        a = self.a
        return float(a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0])

    def inverse(self) -> NDArray[np.float64]:
        a, det = self.a, self.det
        return np.array([[a[1, 1], -a[0, 1]], [-a[1, 0], a[0, 0]]]) / det


class CorrectionSource(Protocol):
    """Anything that yields ``(beta_theta, alpha_theta)`` for a state."""

    def corrections(self, s: VehicleState) -> tuple[NDArray[np.float64], NDArray[np.float64]]: ...


def extract_linear_state(s: VehicleState) -> LinearState:
    course = s.course
    return LinearState(
        x=s.x,
        xdot=s.speed * math.cos(course),
        y=s.y,
        ydot=s.speed * math.sin(course),
    )


def decoupling_terms(s: VehicleState, p: VehicleParams, form: DriftForm = "exact") -> Decoupling:
    """Decoupling matrix and drift of the position outputs.

    ``exact`` differentiates ``V cos(psi+beta)`` through ``psi' = V/l_r sin beta``;
    ``as_printed`` keeps the shorter ``(-(V/l_r) sin(psi+beta), (V/l_r) sin(psi+beta))``.
    """
    course = s.course
    cos_c, sin_c = math.cos(course), math.sin(course)
    speed = s.speed
    a = np.array([[cos_c, -speed * sin_c], [sin_c, speed * cos_c]])

    if form == "exact":
        scale = speed * speed / p.l_r * math.sin(s.beta)
        b = np.array([-scale * sin_c, scale * cos_c])
    elif form == "as_printed":
        scale = speed / p.l_r * sin_c
        b = np.array([-scale, scale])
    else:
        raise ValueError(f"Unknown drift form {form!r}; expected one of {DRIFT_FORMS}")
    return Decoupling(a=a, b=b)


def _model_terms(
    s: VehicleState, p: VehicleParams, form: DriftForm, eps_v: float
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """``(beta_m, alpha_m) = (-A^-1 b, A^-1)``."""
    if not abs(s.speed) >= eps_v:
        raise SpeedTooLowError(
            f"Speed {s.speed:.3e} m/s below floor {eps_v:.1e}; decoupling matrix is singular"
        )
    dec = decoupling_terms(s, p, form)
    alpha_m = dec.inverse()
    return -(alpha_m @ dec.b), alpha_m


def nominal_control(
    s: VehicleState,
    v: VirtualInput,
    p: VehicleParams,
    eps_v: float = DEFAULT_EPS_V,
    *,
    form: DriftForm = "exact",
) -> ControlInput:
    """``u = A^-1 (v - b)`` from the model parameters.

    Raises:
        SpeedTooLowError: If ``|V| < eps_v``.
    """
    beta_m, alpha_m = _model_terms(s, p, form, eps_v)
    return ControlInput.from_array(beta_m + alpha_m @ v.to_array())


def corrected_control(
    s: VehicleState,
    v: VirtualInput,
    policy: CorrectionSource,
    p: VehicleParams,
    eps_v: float = DEFAULT_EPS_V,
    *,
    form: DriftForm = "exact",
) -> ControlInput:
    """``u = (beta_m + beta_theta) + (alpha_m + alpha_theta) v``.

    A policy that outputs exact zeros reproduces :func:`nominal_control` bit for bit.
    """
    beta_m, alpha_m = _model_terms(s, p, form, eps_v)
    beta_theta, alpha_theta = policy.corrections(s)
    return ControlInput.from_array((beta_m + beta_theta) + (alpha_m + alpha_theta) @ v.to_array())
