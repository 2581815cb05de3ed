from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest

from lfbl_racing._exceptions import EpisodeDivergedError
from lfbl_racing.control.linearize import LinearState, VirtualInput
from lfbl_racing.control.planner import LinearModel, PlannerWeights, plan, tracker_gain
from lfbl_racing.control.vehicle import ActuatorParams, VehicleParams
from lfbl_racing.learning.episode import (
    DEFAULT_START,
    ActuationChain,
    EpisodeOptions,
    Replanner,
    Scenario,
    StartPerturbation,
    pointwise_loss,
    run_episode,
)
from lfbl_racing.learning.policy import CorrectionPolicy

DT = 0.02
X0 = LinearState(x=0.0, xdot=0.0, y=0.0, ydot=0.5)
XF = LinearState(x=5.0, xdot=0.0, y=5.0, ydot=0.0)


class _IdealInverse:
    """Exact static inverse of the actuator gains."""

    def __init__(self, params: ActuatorParams) -> None:
        self.params = params

    def accel_to_action(self, accel: float) -> tuple[float, float]:
        gas = min(max(accel / self.params.a_gas_max, 0.0), 1.0)
        brake = min(max(-accel / self.params.a_brake_max, 0.0), 1.0)
        return gas, brake


@pytest.fixture(scope="module")
def reference_plan():
    return plan(X0, XF, 249, np.zeros((4, 4)), np.eye(2), np.zeros((4, 4)), 10.0, dt=DT)


@pytest.fixture(scope="module")
def gain():
    return tracker_gain(np.eye(4), np.eye(2))


def _scenario(reference_plan, gain, *, plant_l_r: float, **kwargs) -> Scenario:
    return Scenario(
        plant=VehicleParams(l_r=plant_l_r),
        model=VehicleParams(l_r=0.5),
        plan=reference_plan,
        gain=gain,
        **kwargs,
    )


def test_pointwise_loss_is_zero_on_the_linear_model() -> None:
    model = LinearModel.for_dt(DT)
    xi = LinearState(x=1.0, xdot=0.5, y=-1.0, ydot=0.2)
    v = VirtualInput(v1=0.3, v2=-0.4)
    nxt = LinearState.from_array(model.step(xi.to_array(), v.to_array()))

    assert pointwise_loss(xi, nxt, v, model) == 0.0
    off = LinearState(x=nxt.x + 0.1, xdot=nxt.xdot, y=nxt.y, ydot=nxt.ydot)
    assert pointwise_loss(xi, off, v, model) == pytest.approx(0.01)


def test_matched_model_follows_the_linear_model(reference_plan, gain) -> None:
    policy = CorrectionPolicy.zeros()
    matched = _scenario(reference_plan, gain, plant_l_r=0.5).run(policy, 0.0, 0)
    mismatched_return, mismatched_loss = _scenario(
        reference_plan, gain, plant_l_r=1.0
    ).episode_return(policy, 0.0, 0)

    assert matched.n_states == 249
    assert not matched.diverged
    assert matched.mean_loss <= 1e-8
    assert abs(matched.episode_return) <= 1.0
    assert mismatched_return < matched.episode_return
    assert mismatched_loss >= 1e3 * matched.mean_loss


def test_matched_model_reaches_the_target(reference_plan, gain) -> None:
    record = _scenario(reference_plan, gain, plant_l_r=0.5).run(CorrectionPolicy.zeros(), 0.0, 0)

    end = record.final_state
    assert math.hypot(end.x - XF.x, end.y - XF.y) <= 0.01


def test_loss_shrinks_as_the_model_approaches_the_plant(reference_plan, gain) -> None:
    losses = []
    for model_l_r in (0.5, 0.7, 0.9, 1.0):
        scenario = Scenario(
            plant=VehicleParams(l_r=1.0),
            model=VehicleParams(l_r=model_l_r),
            plan=reference_plan,
            gain=gain,
        )
        losses.append(scenario.run(CorrectionPolicy.zeros(), 0.0, 0).total_loss)

    assert all(a > b for a, b in zip(losses, losses[1:], strict=False))
    assert losses[-1] <= 1e-8 * len(reference_plan.inputs)


def test_first_step_starts_on_the_plan(reference_plan, gain) -> None:
    record = _scenario(reference_plan, gain, plant_l_r=0.5).run(CorrectionPolicy.zeros(), 0.0, 0)

    first = record.steps[0]
    assert first.state == DEFAULT_START
    assert first.reward == pytest.approx(0.0, abs=1e-15)
    assert first.noise == (0.0, 0.0)


def test_noisy_rollouts_are_reproducible_per_seed(reference_plan, gain) -> None:
    scenario = _scenario(reference_plan, gain, plant_l_r=0.5)
    policy = CorrectionPolicy.zeros()

    first = scenario.run(policy, 0.05, [3, 1])
    again = scenario.run(policy, 0.05, [3, 1])
    other = scenario.run(policy, 0.05, [3, 2])

    assert first.episode_return == again.episode_return
    assert [s.noise for s in first.steps] == [s.noise for s in again.steps]
    assert first.steps[0].noise != other.steps[0].noise


def test_blowup_bound_ends_the_episode_with_a_partial_record(reference_plan, gain) -> None:
    scenario = _scenario(
        reference_plan, gain, plant_l_r=0.5, options=EpisodeOptions(blowup_bound=1.0)
    )

    with pytest.raises(EpisodeDivergedError) as info:
        scenario.run(CorrectionPolicy.zeros(), 0.0, 0)

    record = info.value.record
    assert record.diverged
    assert record.episode_return == -math.inf
    assert 0 < len(record.steps) < 248
    assert scenario.episode_return(CorrectionPolicy.zeros(), 0.0, 0) == (-math.inf, math.inf)


def test_speed_floor_counts_as_divergence(reference_plan, gain) -> None:
    scenario = _scenario(
        reference_plan, gain, plant_l_r=0.5, options=EpisodeOptions(eps_v=1.0)
    )

    with pytest.raises(EpisodeDivergedError, match="below floor") as info:
        scenario.run(CorrectionPolicy.zeros(), 0.0, 0)
    assert info.value.record.steps == []


def test_negative_exploration_noise_is_rejected(reference_plan, gain) -> None:
    with pytest.raises(ValueError, match="sigma_w"):
        run_episode(
            VehicleParams(), VehicleParams(), CorrectionPolicy.zeros(), reference_plan, gain, -1.0, 0
        )


def test_start_perturbation_is_seeded(reference_plan, gain) -> None:
    perturbation = StartPerturbation(position=0.05, heading=0.05, speed=0.1)
    scenario = _scenario(reference_plan, gain, plant_l_r=0.5, perturbation=perturbation)

    assert not scenario.deterministic_start
    first = scenario.run(CorrectionPolicy.zeros(), 0.0, 1).steps[0].state
    again = scenario.run(CorrectionPolicy.zeros(), 0.0, 1).steps[0].state
    assert first == again
    assert first != DEFAULT_START
    assert abs(first.x - DEFAULT_START.x) <= 0.05
    assert abs(first.speed - DEFAULT_START.speed) <= 0.1


def test_actuation_chain_limits_realized_acceleration(reference_plan, gain) -> None:
    params = ActuatorParams()
    options = EpisodeOptions(actuation=ActuationChain(inverse=_IdealInverse(params), params=params))
    scenario = _scenario(reference_plan, gain, plant_l_r=0.5, options=options)

    try:
        record = scenario.run(CorrectionPolicy.zeros(), 0.0, 0)
    except EpisodeDivergedError as exc:
        record = exc.record

    assert record.steps
    accels = np.array([s.u.a for s in record.steps])
    assert np.all(accels <= params.a_gas_max)
    assert np.all(accels >= -params.a_brake_max)
    # the lag starts from rest, so the first realized command is a fraction of the target
    assert abs(accels[0]) < 1.0


def test_replanning_keeps_the_matched_rollout_on_track(reference_plan, gain) -> None:
    weights = PlannerWeights(q=np.zeros((4, 4)), r=np.eye(2), qf=np.zeros((4, 4)), v_bnds=10.0)
    replanner = Replanner(every=50, xf=XF, weights=weights)
    scenario = _scenario(
        reference_plan, gain, plant_l_r=0.5, options=EpisodeOptions(replanner=replanner)
    )

    record = scenario.run(CorrectionPolicy.zeros(), 0.0, 0)

    assert record.n_states == 249
    assert math.isfinite(record.episode_return)
    with pytest.raises(ValueError):
        replace(replanner, every=0)
