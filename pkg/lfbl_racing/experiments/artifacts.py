"""CSV and JSON artifacts written by the experiment commands.

CSV floats use ``%.17g`` so a rerun with the same seed gives identical bytes.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from lfbl_racing.control.linearize import extract_linear_state
from lfbl_racing.control.planner import PlanResult
from lfbl_racing.learning.episode import EpisodeRecord
from lfbl_racing.learning.prenet import ActuationSample
from lfbl_racing.learning.trainer import CurvePoint

FLOAT_FORMAT = "%.17g"

PLAN_COLUMNS = ["k", "t", "x", "xdot", "y", "ydot", "v1", "v2"]
TRAJECTORY_COLUMNS = [
    "k", "t", "x", "y", "psi", "V", "beta",
    "xi_x", "xi_xdot", "xi_y", "xi_ydot",
    "ref_x", "ref_xdot", "ref_y", "ref_ydot",
    "v1", "v2", "a", "b", "w1", "w2", "reward", "loss",
]  # fmt: skip
COMPARISON_COLUMNS = [
    "k", "t", "plan_x", "plan_y", "baseline_x", "baseline_y", "learned_x", "learned_y",
]  # fmt: skip
CURVE_COLUMNS = ["epoch", "mean_return", "best_return", "mean_pointwise_loss", "step_size", "aborted"]
DATASET_COLUMNS = ["acceleration", "gas", "brake"]
LOSS_COLUMNS = ["epoch", "loss"]

PLAN_CSV = "plan.csv"
BASELINE_CSV = "baseline_trajectory.csv"
LEARNED_CSV = "learned_trajectory.csv"
EVAL_CSV = "eval_trajectory.csv"
EVAL_PRENET_CSV = "eval_prenet_trajectory.csv"
COMPARISON_CSV = "comparison.csv"
CURVE_CSV = "learning_curve.csv"
POLICY_JSON = "policy.json"
PRENET_DATASET_CSV = "prenet_dataset.csv"
PRENET_LOSS_CSV = "prenet_loss.csv"
PRENET_JSON = "prenet.json"
PLOT_SVG = "paths.svg"
CURVE_SVG = "learning_curve.svg"


def write_csv(frame: pd.DataFrame, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def plan_frame(plan: PlanResult) -> pd.DataFrame:
    states = plan.state_array()
    inputs = np.vstack([plan.input_array(), np.full((1, 2), np.nan)])
    k = np.arange(plan.n_steps)
    return pd.DataFrame(
        {
            "k": k,
            "t": k * plan.dt,
            "x": states[:, 0],
            "xdot": states[:, 1],
            "y": states[:, 2],
            "ydot": states[:, 3],
            "v1": inputs[:, 0],
            "v2": inputs[:, 1],
        },
        columns=PLAN_COLUMNS,
    )


def trajectory_frame(record: EpisodeRecord, dt: float) -> pd.DataFrame:
    """One row per visited state; the final row has no input, reward or loss."""
    rows: list[list[float]] = []
    for step in record.steps:
        s = step.state
        rows.append(
            [
                step.k, step.k * dt, s.x, s.y, s.psi, s.speed, s.beta,
                *step.xi.to_array(), *step.ref.to_array(),
                *step.v.to_array(), step.u.a, step.u.b, *step.noise,
                step.reward, step.loss,
            ]
        )  # fmt: skip
    k = len(record.steps)
    f = record.final_state
    last_xi = extract_linear_state(f).to_array()
    rows.append(
        [k, k * dt, f.x, f.y, f.psi, f.speed, f.beta, *last_xi, *([math.nan] * 12)]
    )
    frame = pd.DataFrame(rows, columns=TRAJECTORY_COLUMNS)
    frame["k"] = frame["k"].astype(int)
    return frame


def comparison_frame(
    plan: PlanResult, baseline: EpisodeRecord | None, learned: EpisodeRecord | None
) -> pd.DataFrame:
    """Planned, baseline and learned positions side by side (missing steps are empty)."""
    n = plan.n_steps
    states = plan.state_array()

    def padded(record: EpisodeRecord | None) -> np.ndarray:
        out = np.full((n, 2), np.nan)
        if record is not None:
            pts = record.positions()[:n]
            out[: len(pts)] = pts
        return out

    base, learn = padded(baseline), padded(learned)
    k = np.arange(n)
    return pd.DataFrame(
        {
            "k": k,
            "t": k * plan.dt,
            "plan_x": states[:, 0],
            "plan_y": states[:, 2],
            "baseline_x": base[:, 0],
            "baseline_y": base[:, 1],
            "learned_x": learn[:, 0],
            "learned_y": learn[:, 1],
        },
        columns=COMPARISON_COLUMNS,
    )


def curve_frame(curve: list[CurvePoint]) -> pd.DataFrame:
    return pd.DataFrame(
        [
            [p.epoch, p.mean_return, p.best_return, p.mean_pointwise_loss, p.step_size, p.aborted]
            for p in curve
        ],
        columns=CURVE_COLUMNS,
    )


def dataset_frame(samples: list[ActuationSample]) -> pd.DataFrame:
    return pd.DataFrame(
        [[s.acceleration, s.gas, s.brake] for s in samples], columns=DATASET_COLUMNS
    )


def loss_frame(losses: list[float]) -> pd.DataFrame:
    return pd.DataFrame(
        {"epoch": np.arange(1, len(losses) + 1), "loss": losses}, columns=LOSS_COLUMNS
    )


def read_csv(path: Path) -> pd.DataFrame:
    return pd.read_csv(Path(path))


def finite_or_none(value: float | None) -> float | None:
    if value is None or not math.isfinite(value):
        return None
    return float(value)


class ScenarioEcho(BaseModel):
    model_config = ConfigDict(extra="forbid")

    x0: list[float]
    xf: list[float]
    horizon_s: float
    dt: float
    n_steps: int
    plant_l_r: float
    model_l_r: float
    drift_form: str
    seed: int


class RunReport(BaseModel):
    """Summary of one command run; returns are ``None`` when the rollout diverged."""

    model_config = ConfigDict(extra="forbid")

    command: str
    scenario: ScenarioEcho
    baseline_return: float | None = None
    learned_return: float | None = None
    improvement_factor: float | None = None
    prenet_return: float | None = None
    prenet_degradation: float | None = None
    plan_objective: float | None = None
    baseline_mean_loss: float | None = None
    learned_mean_loss: float | None = None
    prenet_mse: float | None = None
    prenet_round_trip_mae: float | None = None
    diverged: list[str] = Field(default_factory=list)
    artifacts: dict[str, str] = Field(default_factory=dict)
    details: dict[str, Any] = Field(default_factory=dict)
    wall_clock_s: float = 0.0


def improvement_factor(baseline: float | None, learned: float | None) -> float | None:
    """``|baseline| / |learned|``: how many times smaller the learned tracking error is."""
    if baseline is None or learned is None:
        return None
    if learned == 0.0:
        return None
    return abs(baseline) / abs(learned)


def write_report(report: RunReport, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
    return path


def read_report(path: Path) -> RunReport:
    return RunReport.model_validate_json(Path(path).read_text(encoding="utf-8"))
