"""Closed-loop rollouts of the corrected linearizing controller on the plant."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Protocol

import numpy as np
from numpy.typing import NDArray

from lfbl_racing._exceptions import (
    EpisodeDivergedError,
    LfblError,
    NonFiniteStateError,
    SlipOutOfRangeError,
    SpeedTooLowError,
)
from lfbl_racing.control.linearize import (
    DEFAULT_EPS_V,
    CorrectionSource,
    DriftForm,
    LinearState,
    VirtualInput,
    corrected_control,
    extract_linear_state,
)
from lfbl_racing.control.planner import (
    LinearModel,
    PlannerWeights,
    PlanResult,
    plan_with,
    shift_waypoints,
    track,
)
from lfbl_racing.control.vehicle import (
    ActuatorParams,
    ActuatorState,
    ControlInput,
    VehicleParams,
    VehicleState,
    actuator_step,
    step_rk4,
    step_rk4_feedback,
)

logger = logging.getLogger(__name__)

DEFAULT_BLOWUP_BOUND = 1e3
DEFAULT_START = VehicleState(x=0.0, y=0.0, psi=0.5 * math.pi, speed=0.5, beta=0.0)


def pointwise_loss(
    xi_k: LinearState, xi_next: LinearState, v_k: VirtualInput, m: LinearModel
) -> float:
    """``||xi_next - Abar xi_k - Bbar v_k||^2``."""
    gap = xi_next.to_array() - m.step(xi_k.to_array(), v_k.to_array())
    return float(gap @ gap)


@dataclass(frozen=True)
class EpisodeStep:
    k: int
    state: VehicleState
    xi: LinearState
    ref: LinearState
    v: VirtualInput
    u: ControlInput
    noise: tuple[float, float]
    reward: float
    loss: float


@dataclass(frozen=True)
class EpisodeRecord:
    steps: list[EpisodeStep]
    final_state: VehicleState
    episode_return: float
    diverged: bool = False

    @property
    def n_states(self) -> int:
        return len(self.steps) + 1

    @property
    def losses(self) -> NDArray[np.float64]:
        return np.array([s.loss for s in self.steps])

    @property
    def mean_loss(self) -> float:
        return float(self.losses.mean()) if self.steps else 0.0

    @property
    def total_loss(self) -> float:
        return float(self.losses.sum())

    def positions(self) -> NDArray[np.float64]:
        pts = [(s.state.x, s.state.y) for s in self.steps]
        pts.append((self.final_state.x, self.final_state.y))
        return np.array(pts)


@dataclass(frozen=True)
class StartPerturbation:
    """Half-widths of the uniform start-state perturbation."""

    position: float = 0.0
    heading: float = 0.0
    speed: float = 0.0

    def sample(self, start: VehicleState, rng: np.random.Generator) -> VehicleState:
        dx, dy, dpsi, dv = rng.uniform(-1.0, 1.0, size=4)
        return replace(
            start,
            x=start.x + self.position * dx,
            y=start.y + self.position * dy,
            psi=start.psi + self.heading * dpsi,
            speed=start.speed + self.speed * dv,
        )


@dataclass(frozen=True)
class Replanner:
    """Receding-horizon hook: re-plan to ``xf`` from the measured state every ``every`` steps."""

    every: int
    xf: LinearState
    weights: PlannerWeights
    qp_options: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.every < 1:
            raise ValueError("replan interval must be >= 1")

    def due(self, k: int, n_states: int) -> bool:
        return k > 0 and k % self.every == 0 and n_states - k >= 2

    def replan(self, xi: LinearState, k: int, n_states: int, dt: float) -> PlanResult:
        remaining = n_states - k
        ahead = shift_waypoints(self.weights.waypoints, k, remaining)
        weights = replace(self.weights, waypoints=ahead)
        return plan_with(xi, self.xf, remaining, weights, dt=dt, qp_options=self.qp_options)


class InverseActuator(Protocol):
    def accel_to_action(self, accel: float) -> tuple[float, float]: ...


@dataclass(frozen=True)
class ActuationChain:
    """Routes commanded acceleration through an inverse model and the lagged actuator."""

    inverse: InverseActuator
    params: ActuatorParams

    def realize(self, act: ActuatorState, accel: float, dt: float) -> ActuatorState:
        gas, brake = self.inverse.accel_to_action(accel)
        return actuator_step(act, gas, brake, dt, self.params)


@dataclass(frozen=True)
class EpisodeOptions:
    drift_form: DriftForm = "exact"
    eps_v: float = DEFAULT_EPS_V
    a_max: float = 10.0
    b_max: float = 10.0
    blowup_bound: float = DEFAULT_BLOWUP_BOUND
    replanner: Replanner | None = None
    actuation: ActuationChain | None = None


@dataclass
class HeldVirtualInput:
    """The corrected control law for one step, with ``v`` and the noise held.

    The plant integrator calls it at every RK4 stage, so under a matched model
    the normal form sees exactly ``v`` for the whole step.
    """

    v: VirtualInput
    noise: tuple[float, float]
    policy: CorrectionSource
    model: VehicleParams
    options: EpisodeOptions
    last: ControlInput | None = None

    def __call__(self, s: VehicleState) -> ControlInput:
        opts = self.options
        try:
            u = corrected_control(
                s, self.v, self.policy, self.model, opts.eps_v, form=opts.drift_form
            )
        except SpeedTooLowError:
            # a stage below the speed floor keeps the previous stage's input
            if self.last is None:
                raise
            return self.last
        u = ControlInput(a=u.a + self.noise[0], b=u.b + self.noise[1])
        u = u.clipped(opts.a_max, opts.b_max)
        self.last = u
        return u


def run_episode(
    plant: VehicleParams,
    model: VehicleParams,
    policy: CorrectionSource,
    plan: PlanResult,
    gain: NDArray[np.float64],
    sigma_w: float,
    seed: int | list[int] | None,
    *,
    start: VehicleState = DEFAULT_START,
    perturbation: StartPerturbation | None = None,
    options: EpisodeOptions | None = None,
) -> EpisodeRecord:
    """Track ``plan`` with the corrected controller and exploration noise.

    Each step the tracker turns the plan into ``v_k``, which is held for the
    step. The model-based law plus the policy's corrections turn ``v_k`` into an
    input, Gaussian noise drawn once per step is added, and the plant is advanced
    one RK4 step with the law re-evaluated at every stage. ``u_k`` is the input
    at the start of the step. Through an actuation chain the realized input is
    held over the step instead. The reward is the negative distance of the
    linear state from the plan.

    Raises:
        EpisodeDivergedError: If the linear state exceeds the blow-up bound or the
            plant leaves its valid range. The partial record is attached.
    """
    options = options or EpisodeOptions()
    if sigma_w < 0:
        raise ValueError("sigma_w must be >= 0")
    rng = np.random.default_rng(seed)
    n_states = plan.n_steps
    dt = plan.dt
    model_lin = LinearModel.for_dt(dt)

    refs = list(plan.states)
    ref_inputs = list(plan.inputs)
    s = perturbation.sample(start, rng) if perturbation is not None else start
    act = ActuatorState()
    steps: list[EpisodeStep] = []
    total = 0.0

    def diverged(reason: str) -> EpisodeDivergedError:
        record = EpisodeRecord(steps=steps, final_state=s, episode_return=-math.inf, diverged=True)
        logger.debug("Episode diverged at step %d: %s", len(steps), reason)
        message = f"Episode diverged at step {len(steps)}: {reason}"
        return EpisodeDivergedError(message, record=record)

    xi = extract_linear_state(s)
    for k in range(n_states - 1):
        if options.replanner is not None and options.replanner.due(k, n_states):
            try:
                fresh = options.replanner.replan(xi, k, n_states, dt)
            except LfblError as exc:
                logger.debug("Replanning at step %d failed (%s); keeping previous plan", k, exc)
            else:
                refs[k:] = fresh.states
                ref_inputs[k:] = fresh.inputs

        ref = refs[k]
        v = track(xi, ref, ref_inputs[k], gain)
        noise = sigma_w * rng.standard_normal(2)
        law = HeldVirtualInput(
            v=v,
            noise=(float(noise[0]), float(noise[1])),
            policy=policy,
            model=model,
            options=options,
        )
        try:
            u = law(s)
        except SpeedTooLowError as exc:
            raise diverged(str(exc)) from exc
        if not (math.isfinite(u.a) and math.isfinite(u.b)):
            raise diverged("non-finite control input")

        try:
            if options.actuation is not None:
                act = options.actuation.realize(act, u.a, dt)
                u = ControlInput(a=act.accel, b=u.b)
                s_next = step_rk4(s, u, plant, dt)
            else:
                s_next = step_rk4_feedback(s, law, plant, dt, first=u)
        except (NonFiniteStateError, SlipOutOfRangeError) as exc:
            raise diverged(str(exc)) from exc
        xi_next = extract_linear_state(s_next)

        reward = -float(np.linalg.norm(xi.to_array() - ref.to_array()))
        loss = pointwise_loss(xi, xi_next, v, model_lin)
        total += reward
        steps.append(
            EpisodeStep(
                k=k,
                state=s,
                xi=xi,
                ref=ref,
                v=v,
                u=u,
                noise=law.noise,
                reward=reward,
                loss=loss,
            )
        )
        s, xi = s_next, xi_next
        if float(np.linalg.norm(xi.to_array())) > options.blowup_bound:
            raise diverged(f"|xi| exceeded {options.blowup_bound:g}")

    return EpisodeRecord(steps=steps, final_state=s, episode_return=total)


@dataclass(frozen=True)
class Scenario:
    """A fixed plant/model pair, reference plan and tracker gain to roll out on."""

    plant: VehicleParams
    model: VehicleParams
    plan: PlanResult
    gain: NDArray[np.float64]
    start: VehicleState = DEFAULT_START
    perturbation: StartPerturbation | None = None
    options: EpisodeOptions = field(default_factory=EpisodeOptions)

    @property
    def deterministic_start(self) -> bool:
        return self.perturbation is None

    def run(
        self, policy: CorrectionSource, sigma_w: float, seed: int | list[int] | None
    ) -> EpisodeRecord:
        return run_episode(
            self.plant,
            self.model,
            policy,
            self.plan,
            self.gain,
            sigma_w,
            seed,
            start=self.start,
            perturbation=self.perturbation,
            options=self.options,
        )

    def episode_return(
        self, policy: CorrectionSource, sigma_w: float, seed: int | list[int] | None
    ) -> tuple[float, float]:
        """``(return, mean pointwise loss)``; a diverged rollout scores ``-inf``."""
        try:
            record = self.run(policy, sigma_w, seed)
        except EpisodeDivergedError:
            return -math.inf, math.inf
        return record.episode_return, record.mean_loss
