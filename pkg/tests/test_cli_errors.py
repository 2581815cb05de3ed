from __future__ import annotations

import math
from pathlib import Path

from pydantic import ValidationError

from lfbl_racing._exceptions import EpisodeDivergedError, InfeasibleError, SingularMatrixError
from lfbl_racing.api.cli_errors import describe_validation_error, format_run_error
from lfbl_racing.api.settings import Settings
from lfbl_racing.control.vehicle import VehicleState
from lfbl_racing.learning.episode import EpisodeRecord


def test_validation_error_lists_fields_and_missing_key_placeholders() -> None:
    payload = {
        "paths": {"work_dir": "/tmp/work"},
        "trainer": {"population_size": 3},
        "config_path": Path("/tmp/config.yaml"),
    }

    try:
        Settings.model_validate(payload)
    except ValidationError as exc:
        message = describe_validation_error(exc, file_name="/tmp/config.yaml")
    else:
        raise AssertionError("Expected ValidationError")

    assert "Invalid configuration in /tmp/config.yaml" in message
    assert "• paths.output_dir: Field required" in message
    assert "• trainer.population_size:" in message
    assert "Example config.yaml snippet:" in message
    assert "paths:" in message
    assert "  output_dir: <required>" in message
    assert "lfbl-racing init" in message


def test_format_run_error_hints_for_infeasible_plans() -> None:
    message = format_run_error(InfeasibleError("terminal gap 0.5 exceeds tolerance"))

    assert message.startswith("terminal gap 0.5 exceeds tolerance")
    assert "planner.v_bnds" in message
    assert "scenario.horizon_s" in message


def test_format_run_error_reports_divergence_step_count() -> None:
    state = VehicleState(x=0.0, y=0.0, psi=0.0, speed=1.0, beta=0.0)
    record = EpisodeRecord(steps=[], final_state=state, episode_return=-math.inf, diverged=True)

    message = format_run_error(EpisodeDivergedError("|xi| exceeded bound", record=record))

    assert "after 0 step(s)" in message


def test_format_run_error_passes_other_errors_through() -> None:
    assert format_run_error(SingularMatrixError("pivot 0")) == "pivot 0"
