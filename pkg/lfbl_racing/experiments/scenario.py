"""Turn loaded settings into the objects the control and learning code consume."""

from __future__ import annotations

import logging

import numpy as np
from numpy.typing import NDArray

from lfbl_racing.api.settings import Settings, VehicleSettings
from lfbl_racing.control.linearize import LinearState, extract_linear_state
from lfbl_racing.control.planner import (
    PlannerWeights,
    PlanResult,
    Waypoint,
    plan_with,
    tracker_gain,
)
from lfbl_racing.control.vehicle import ActuatorParams, VehicleParams, VehicleState
from lfbl_racing.learning.episode import (
    ActuationChain,
    EpisodeOptions,
    Replanner,
    Scenario,
    StartPerturbation,
)
from lfbl_racing.learning.policy import CorrectionPolicy
from lfbl_racing.learning.prenet import PreNet
from lfbl_racing.learning.trainer import TrainerConfig

logger = logging.getLogger(__name__)


def vehicle_params(section: VehicleSettings) -> VehicleParams:
    return VehicleParams(l_r=section.l_r, l_f=section.l_f)


def actuator_params(settings: Settings) -> ActuatorParams:
    act = settings.actuator
    return ActuatorParams(a_gas_max=act.a_gas_max, a_brake_max=act.a_brake_max, tau_act=act.tau_act)


def initial_state(settings: Settings) -> VehicleState:
    init = settings.scenario.initial_state
    return VehicleState(x=init.x, y=init.y, psi=init.psi, speed=init.speed, beta=init.beta)


def boundary_states(settings: Settings) -> tuple[LinearState, LinearState]:
    """Plan endpoints; a missing ``x0`` means "where the vehicle starts"."""
    scenario = settings.scenario
    x0 = (
        LinearState.from_array(scenario.x0)
        if scenario.x0 is not None
        else extract_linear_state(initial_state(settings))
    )
    return x0, LinearState.from_array(scenario.xf)


def planner_weights(settings: Settings) -> PlannerWeights:
    planner = settings.planner
    return PlannerWeights(
        q=np.diag(planner.q_diag),
        r=np.diag(planner.r_diag),
        qf=np.diag(planner.qf_diag),
        v_bnds=planner.v_bnds,
        waypoints=tuple(Waypoint(step=w.step, x=w.x, y=w.y) for w in planner.waypoints),
    )


def qp_options(settings: Settings) -> dict[str, float]:
    num = settings.numerics
    return {"tol": num.qp_tol, "max_iter": num.qp_max_iter, "pivot_tol": num.pivot_tol}


def build_plan(settings: Settings) -> PlanResult:
    x0, xf = boundary_states(settings)
    return plan_with(
        x0,
        xf,
        settings.scenario.n_steps,
        planner_weights(settings),
        dt=settings.scenario.dt,
        qp_options=qp_options(settings),
    )


def build_gain(settings: Settings) -> NDArray[np.float64]:
    tracker = settings.tracker
    return tracker_gain(
        np.diag(tracker.q_diag),
        np.diag(tracker.r_diag),
        tol=settings.numerics.care_tol,
        max_iter=settings.numerics.care_max_iter,
    )


def episode_options(settings: Settings, *, prenet: PreNet | None = None) -> EpisodeOptions:
    ctrl = settings.controller
    replanner = None
    if settings.planner.replan_every is not None:
        _, xf = boundary_states(settings)
        replanner = Replanner(
            every=settings.planner.replan_every,
            xf=xf,
            weights=planner_weights(settings),
            qp_options=qp_options(settings),
        )
    actuation = None
    if prenet is not None:
        actuation = ActuationChain(inverse=prenet, params=actuator_params(settings))
    return EpisodeOptions(
        drift_form=ctrl.drift_form,
        eps_v=ctrl.eps_v,
        a_max=ctrl.a_max,
        b_max=ctrl.b_max,
        blowup_bound=ctrl.blowup_bound,
        replanner=replanner,
        actuation=actuation,
    )


def build_scenario(
    settings: Settings,
    *,
    plan: PlanResult | None = None,
    prenet: PreNet | None = None,
) -> Scenario:
    plan = plan if plan is not None else build_plan(settings)
    scenario = settings.scenario
    perturbation = None
    if scenario.randomize_start:
        p = scenario.start_perturbation
        perturbation = StartPerturbation(position=p.position, heading=p.heading, speed=p.speed)
    logger.debug(
        "Scenario: plant l_r=%.3g, model l_r=%.3g, %d states, drift %s",
        settings.plant.l_r,
        settings.model.l_r,
        plan.n_steps,
        settings.controller.drift_form,
    )
    return Scenario(
        plant=vehicle_params(settings.plant),
        model=vehicle_params(settings.model),
        plan=plan,
        gain=build_gain(settings),
        start=initial_state(settings),
        perturbation=perturbation,
        options=episode_options(settings, prenet=prenet),
    )


def trainer_config(settings: Settings) -> TrainerConfig:
    t = settings.trainer
    return TrainerConfig(
        population_size=t.population_size,
        noise_std=t.noise_std,
        step_size=t.step_size,
        epochs=t.epochs,
        episodes_per_eval=t.episodes_per_eval,
        exploration_std=t.exploration_std,
        seed=t.seed,
        workers=t.workers,
        log_every=t.log_every,
    )


def zero_policy(settings: Settings) -> CorrectionPolicy:
    return CorrectionPolicy.zeros(
        hidden_sizes=tuple(settings.policy.hidden_sizes),
        output_gain=settings.policy.output_gain,
    )
