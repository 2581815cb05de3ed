"""Experiment commands behind the CLI subcommands.

Each ``cmd_*`` takes loaded settings, writes its artifacts into
``settings.paths.output_dir`` and returns a :class:`RunReport` that is also
written next to them as ``<command>_report.json``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from time import perf_counter

import matplotlib as mpl
import numpy as np
import pandas as pd
from matplotlib.figure import Figure

from lfbl_racing._exceptions import CommandError, EpisodeDivergedError
from lfbl_racing.api.settings import Settings
from lfbl_racing.control.planner import LinearModel, PlanResult
from lfbl_racing.experiments import artifacts
from lfbl_racing.experiments.artifacts import RunReport, ScenarioEcho
from lfbl_racing.experiments.scenario import (
    actuator_params,
    boundary_states,
    build_plan,
    build_scenario,
    trainer_config,
    vehicle_params,
    zero_policy,
)
from lfbl_racing.learning.episode import EpisodeRecord, Scenario
from lfbl_racing.learning.policy import CorrectionPolicy
from lfbl_racing.learning.prenet import (
    PreNet,
    collect_data,
    round_trip_error,
    train_prenet,
)
from lfbl_racing.learning.trainer import run_training

logger = logging.getLogger(__name__)

# accelerations used for the prenet round-trip check (m/s^2)
ROUND_TRIP_RANGE = (-6.0, 3.5)


@dataclass(frozen=True)
class EpisodeOutcome:
    """A rollout that may have diverged; ``record`` is partial in that case."""

    record: EpisodeRecord
    diverged: bool

    @property
    def episode_return(self) -> float | None:
        return None if self.diverged else self.record.episode_return

    @property
    def mean_loss(self) -> float | None:
        return artifacts.finite_or_none(self.record.mean_loss) if self.record.steps else None


def _rollout(
    scenario: Scenario, policy: CorrectionPolicy, label: str, seed: int
) -> EpisodeOutcome:
    """One noise-free episode; divergence is logged and returned, not raised."""
    try:
        record = scenario.run(policy, 0.0, seed)
    except EpisodeDivergedError as exc:
        logger.warning("%s episode diverged: %s", label.capitalize(), exc)
        return EpisodeOutcome(record=exc.record, diverged=True)
    logger.info("%s return %.6g", label.capitalize(), record.episode_return)
    return EpisodeOutcome(record=record, diverged=False)


def _echo(settings: Settings) -> ScenarioEcho:
    x0, xf = boundary_states(settings)
    scenario = settings.scenario
    return ScenarioEcho(
        x0=x0.to_array().tolist(),
        xf=xf.to_array().tolist(),
        horizon_s=scenario.horizon_s,
        dt=scenario.dt,
        n_steps=scenario.n_steps,
        plant_l_r=settings.plant.l_r,
        model_l_r=settings.model.l_r,
        drift_form=settings.controller.drift_form,
        seed=settings.trainer.seed,
    )


def _output_dir(settings: Settings) -> Path:
    out = settings.paths.output_dir
    out.mkdir(parents=True, exist_ok=True)
    return out


def _finish(report: RunReport, settings: Settings, started: float) -> RunReport:
    report.wall_clock_s = perf_counter() - started
    path = artifacts.write_report(report, _output_dir(settings) / f"{report.command}_report.json")
    logger.info("Wrote report %s", path)
    return report


def _write_trajectory(
    report: RunReport, key: str, outcome: EpisodeOutcome, path: Path, dt: float
) -> None:
    artifacts.write_csv(artifacts.trajectory_frame(outcome.record, dt), path)
    report.artifacts[key] = str(path)
    if outcome.diverged:
        report.diverged.append(key)


def plan_residuals(plan: PlanResult, settings: Settings) -> dict[str, float]:
    """Dynamics defect and endpoint errors of a plan (all should be ~0)."""
    model = LinearModel.for_dt(plan.dt)
    states = plan.state_array()
    inputs = plan.input_array()
    defect = 0.0
    if len(inputs):
        predicted = states[:-1] @ model.abar.T + inputs @ model.bbar.T
        defect = float(np.max(np.abs(states[1:] - predicted)))
    x0, xf = boundary_states(settings)
    v_max = float(np.max(np.abs(inputs))) if len(inputs) else 0.0
    return {
        "dynamics_residual": defect,
        "start_error": float(np.max(np.abs(states[0] - x0.to_array()))),
        "terminal_error": float(np.max(np.abs(states[-1] - xf.to_array()))),
        "max_abs_input": v_max,
        "input_bound": settings.planner.v_bnds,
    }


def cmd_plan(settings: Settings) -> RunReport:
    """Solve the reference plan and write ``plan.csv``.

    Raises:
        InfeasibleError: If the terminal state is out of reach under the input bound.
    """
    started = perf_counter()
    plan = build_plan(settings)
    path = artifacts.write_csv(
        artifacts.plan_frame(plan), _output_dir(settings) / artifacts.PLAN_CSV
    )
    residuals = plan_residuals(plan, settings)
    logger.info(
        "Plan objective %.6g; dynamics residual %.2e; terminal error %.2e",
        plan.objective,
        residuals["dynamics_residual"],
        residuals["terminal_error"],
    )
    report = RunReport(
        command="plan",
        scenario=_echo(settings),
        plan_objective=plan.objective,
        artifacts={"plan": str(path)},
        details=residuals,
    )
    return _finish(report, settings, started)


def cmd_baseline(settings: Settings) -> RunReport:
    """Roll out the nominal controller (zero policy, no exploration noise)."""
    started = perf_counter()
    seed = settings.trainer.seed
    scenario = build_scenario(settings)
    out = _output_dir(settings)
    outcome = _rollout(scenario, zero_policy(settings), "baseline", seed)
    report = RunReport(
        command="baseline",
        scenario=_echo(settings),
        plan_objective=scenario.plan.objective,
        baseline_return=outcome.episode_return,
        baseline_mean_loss=outcome.mean_loss,
    )
    _write_trajectory(report, "baseline", outcome, out / artifacts.BASELINE_CSV, scenario.plan.dt)
    return _finish(report, settings, started)


def cmd_train(settings: Settings) -> RunReport:
    """Train a correction policy and compare it with the nominal controller."""
    started = perf_counter()
    seed = settings.trainer.seed
    scenario = build_scenario(settings)
    out = _output_dir(settings)
    dt = scenario.plan.dt
    initial = zero_policy(settings)

    baseline = _rollout(scenario, initial, "baseline", seed)
    result = run_training(trainer_config(settings), scenario, initial=initial)
    policy_path = result.policy.save(out / artifacts.POLICY_JSON)
    learned = _rollout(scenario, result.policy, "learned", seed)

    curve_path = artifacts.write_csv(
        artifacts.curve_frame(result.curve), out / artifacts.CURVE_CSV
    )
    comparison_path = artifacts.write_csv(
        artifacts.comparison_frame(scenario.plan, baseline.record, learned.record),
        out / artifacts.COMPARISON_CSV,
    )
    plan_path = artifacts.write_csv(
        artifacts.plan_frame(scenario.plan), out / artifacts.PLAN_CSV
    )
    report = RunReport(
        command="train",
        scenario=_echo(settings),
        plan_objective=scenario.plan.objective,
        baseline_return=baseline.episode_return,
        learned_return=learned.episode_return,
        improvement_factor=artifacts.improvement_factor(
            baseline.episode_return, learned.episode_return
        ),
        baseline_mean_loss=baseline.mean_loss,
        learned_mean_loss=learned.mean_loss,
        artifacts={
            "plan": str(plan_path),
            "policy": str(policy_path),
            "learning_curve": str(curve_path),
            "comparison": str(comparison_path),
        },
        details={
            "best_epoch": result.best_epoch,
            "initial_eval_return": artifacts.finite_or_none(result.initial_return),
            "best_eval_return": artifacts.finite_or_none(result.best_return),
            "aborted_epochs": sum(p.aborted for p in result.curve),
        },
    )
    _write_trajectory(report, "baseline", baseline, out / artifacts.BASELINE_CSV, dt)
    _write_trajectory(report, "learned", learned, out / artifacts.LEARNED_CSV, dt)
    if report.improvement_factor is not None:
        logger.info("Improvement factor %.3g", report.improvement_factor)
    return _finish(report, settings, started)


def cmd_eval(
    settings: Settings,
    policy_path: Path | None = None,
    *,
    use_prenet: bool = False,
    prenet_path: Path | None = None,
) -> RunReport:
    """Evaluate a saved policy, optionally through the prenet and lagged actuator.

    Raises:
        PolicyFileError: If the policy or prenet file is missing or corrupt.
    """
    started = perf_counter()
    seed = settings.trainer.seed
    out = _output_dir(settings)
    policy_path = Path(policy_path) if policy_path is not None else out / artifacts.POLICY_JSON
    policy = CorrectionPolicy.load(policy_path)
    plan = build_plan(settings)
    dt = plan.dt

    scenario = build_scenario(settings, plan=plan)
    baseline = _rollout(scenario, zero_policy(settings), "baseline", seed)
    direct = _rollout(scenario, policy, "policy", seed)
    report = RunReport(
        command="eval",
        scenario=_echo(settings),
        plan_objective=plan.objective,
        baseline_return=baseline.episode_return,
        learned_return=direct.episode_return,
        improvement_factor=artifacts.improvement_factor(
            baseline.episode_return, direct.episode_return
        ),
        baseline_mean_loss=baseline.mean_loss,
        learned_mean_loss=direct.mean_loss,
        artifacts={"policy": str(policy_path)},
    )
    _write_trajectory(report, "learned", direct, out / artifacts.EVAL_CSV, dt)
    if baseline.diverged:
        report.diverged.append("baseline")

    if use_prenet:
        prenet_path = Path(prenet_path) if prenet_path is not None else out / artifacts.PRENET_JSON
        prenet = PreNet.load(prenet_path)
        routed = _rollout(
            build_scenario(settings, plan=plan, prenet=prenet), policy, "prenet", seed
        )
        report.prenet_return = routed.episode_return
        report.artifacts["prenet"] = str(prenet_path)
        if routed.episode_return is not None and direct.episode_return not in (None, 0.0):
            report.prenet_degradation = abs(routed.episode_return) / abs(direct.episode_return)
        _write_trajectory(report, "prenet", routed, out / artifacts.EVAL_PRENET_CSV, dt)
    return _finish(report, settings, started)


def cmd_prenet(settings: Settings) -> RunReport:
    """Collect actuator data, fit the inverse network and check the round trip."""
    started = perf_counter()
    cfg = settings.prenet
    out = _output_dir(settings)
    params = actuator_params(settings)

    data = collect_data(
        params,
        n=cfg.n_samples,
        hold_steps=cfg.hold_steps,
        dt=cfg.dt,
        seed=cfg.seed,
        settle_steps=cfg.settle_steps,
        sampling=cfg.sampling,
        vehicle=vehicle_params(settings.plant),
    )
    training = train_prenet(
        data,
        epochs=cfg.epochs,
        lr=cfg.lr,
        batch_size=cfg.batch_size,
        hidden_size=cfg.hidden_size,
        negative_slope=cfg.negative_slope,
        lr_decay=cfg.lr_decay,
        seed=cfg.seed,
    )
    commands = np.linspace(*ROUND_TRIP_RANGE, cfg.eval_points)
    mae, _ = round_trip_error(training.net, params, commands)
    full_scale = params.a_gas_max + params.a_brake_max
    logger.info(
        "Prenet round-trip MAE %.4g m/s^2 (%.2f%% of full scale)", mae, 100.0 * mae / full_scale
    )

    dataset_path = artifacts.write_csv(
        artifacts.dataset_frame(data), out / artifacts.PRENET_DATASET_CSV
    )
    loss_path = artifacts.write_csv(
        artifacts.loss_frame(training.losses), out / artifacts.PRENET_LOSS_CSV
    )
    weights_path = training.net.save(out / artifacts.PRENET_JSON)
    report = RunReport(
        command="prenet",
        scenario=_echo(settings),
        prenet_mse=artifacts.finite_or_none(training.final_mse),
        prenet_round_trip_mae=mae,
        artifacts={
            "dataset": str(dataset_path),
            "loss_curve": str(loss_path),
            "prenet": str(weights_path),
        },
        details={
            "round_trip_fraction_of_full_scale": mae / full_scale,
            "n_samples": len(data),
        },
    )
    return _finish(report, settings, started)


def _save_svg(fig: Figure, path: Path) -> Path:
    # fixed ids and no timestamp so reruns write the same file
    with mpl.rc_context({"svg.hashsalt": "lfbl-racing"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    return path


def _path_figure(frame: pd.DataFrame) -> Figure:
    fig = Figure(figsize=(6, 6))
    ax = fig.add_subplot()
    series = (
        ("plan", "planned", {"color": "black", "linestyle": "--"}),
        ("baseline", "nominal controller", {"color": "tab:red"}),
        ("learned", "learned controller", {"color": "tab:blue"}),
    )
    for prefix, label, style in series:
        xs, ys = frame.get(f"{prefix}_x"), frame.get(f"{prefix}_y")
        if xs is None or ys is None or xs.isna().all():
            continue
        ax.plot(xs, ys, label=label, **style)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_aspect("equal", adjustable="datalim")
    ax.legend(loc="best")
    return fig


def _curve_figure(frame: pd.DataFrame) -> Figure:
    fig = Figure(figsize=(7, 4))
    ax = fig.add_subplot()
    ax.plot(frame["epoch"], frame["mean_return"], label="mean return")
    ax.plot(frame["epoch"], frame["best_return"], label="best return")
    ax.set_xlabel("epoch")
    ax.set_ylabel("episode return")
    ax.legend(loc="best")
    return fig


def _comparison_from_parts(out: Path) -> pd.DataFrame:
    plan = artifacts.read_csv(out / artifacts.PLAN_CSV)
    frame = pd.DataFrame({"k": plan["k"], "plan_x": plan["x"], "plan_y": plan["y"]})
    for prefix, name in (("baseline", artifacts.BASELINE_CSV), ("learned", artifacts.EVAL_CSV)):
        path = out / name
        if path.exists():
            traj = artifacts.read_csv(path)[["k", "x", "y"]]
            traj = traj.rename(columns={"x": f"{prefix}_x", "y": f"{prefix}_y"})
            frame = frame.merge(traj, on="k", how="left")
    return frame


def cmd_plot(settings: Settings) -> RunReport:
    """Draw SVG path and learning-curve plots from artifacts already in ``output_dir``.

    Raises:
        CommandError: If there is neither a comparison nor a plan CSV to plot.
    """
    started = perf_counter()
    out = _output_dir(settings)
    report = RunReport(command="plot", scenario=_echo(settings))

    if (out / artifacts.COMPARISON_CSV).exists():
        frame = artifacts.read_csv(out / artifacts.COMPARISON_CSV)
    elif (out / artifacts.PLAN_CSV).exists():
        frame = _comparison_from_parts(out)
    else:
        raise CommandError(f"Nothing to plot in {out}; run plan, baseline or train first")
    report.artifacts["paths"] = str(_save_svg(_path_figure(frame), out / artifacts.PLOT_SVG))

    curve_path = out / artifacts.CURVE_CSV
    if curve_path.exists():
        curve = artifacts.read_csv(curve_path)
        report.artifacts["learning_curve"] = str(
            _save_svg(_curve_figure(curve), out / artifacts.CURVE_SVG)
        )
    logger.info("Wrote %d plot(s) to %s", len(report.artifacts), out)
    return _finish(report, settings, started)


def summary_rows(report: RunReport) -> list[tuple[str, str]]:
    """Label/value rows of the headline numbers for console display."""
    rows = [
        ("plan objective", report.plan_objective),
        ("baseline return", report.baseline_return),
        ("learned return", report.learned_return),
        ("improvement factor", report.improvement_factor),
        ("prenet return", report.prenet_return),
        ("prenet degradation", report.prenet_degradation),
        ("prenet mse", report.prenet_mse),
        ("prenet round-trip mae", report.prenet_round_trip_mae),
    ]
    shown = [(label, f"{value:.6g}") for label, value in rows if value is not None]
    shown.extend((f"{name} return", "diverged") for name in report.diverged)
    shown.append(("wall clock [s]", f"{report.wall_clock_s:.2f}"))
    return shown
