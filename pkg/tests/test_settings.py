from __future__ import annotations

import math
from pathlib import Path
from textwrap import dedent

import pytest
from pydantic import ValidationError

from lfbl_racing.api.settings import SettingsError, load_settings, write_settings

EXAMPLE_CONFIG = Path(__file__).resolve().parents[1] / "config.example.yaml"


def _write_config(path: Path, content: str) -> None:
    path.write_text(dedent(content).strip() + "\n")


def test_load_settings_resolves_paths_relative_to_config(tmp_path: Path) -> None:
    config_path = tmp_path / "config.yaml"
    _write_config(
        config_path,
        """
        paths:
          work_dir: ./data
        """,
    )

    settings = load_settings(config_path)

    assert settings.paths.work_dir == (tmp_path / "data").resolve()
    assert settings.paths.output_dir == (tmp_path / "data/output").resolve()
    assert settings.config_path == config_path.resolve()


def test_load_settings_defaults_match_reference_scenario(tmp_path: Path) -> None:
    config_path = tmp_path / "config.yaml"
    _write_config(config_path, "paths: {}")

    settings = load_settings(config_path)

    assert settings.paths.work_dir == (tmp_path / "runs").resolve()
    assert settings.scenario.n_steps == 249
    assert settings.scenario.x0 == [0.0, 0.0, 0.0, 0.0]
    assert settings.scenario.xf == [5.0, 0.0, 5.0, 0.0]
    assert settings.scenario.initial_state.psi == pytest.approx(math.pi / 2)
    assert settings.model.l_r == 0.5
    assert settings.plant.l_r == 1.0
    assert settings.tracker.q_diag == [0.1, 0.1, 0.1, 0.1]
    assert settings.controller.drift_form == "as_printed"
    assert settings.prenet.sampling == "independent"
    assert settings.trainer.epochs == 200
    assert settings.prenet.n_samples == 5000
    assert settings.prenet.hidden_size == 200
    assert settings.prenet.lr == 0.05


def test_output_dir_override(tmp_path: Path) -> None:
    config_path = tmp_path / "config.yaml"
    _write_config(
        config_path,
        """
        paths:
          work_dir: ./data
          overrides:
            output_dir: ./elsewhere/out
        """,
    )

    settings = load_settings(config_path)

    assert settings.paths.output_dir == (tmp_path / "elsewhere/out").resolve()


def test_load_settings_rejects_unknown_config_key(tmp_path: Path) -> None:
    config_path = tmp_path / "config.yaml"
    _write_config(
        config_path,
        """
        paths:
          work_dir: ./data

        trainer:
          epochs: 10
          extra_key: nope
        """,
    )

    with pytest.raises(SettingsError) as exc_info:
        load_settings(config_path)

    assert exc_info.value.validation_error is not None
    assert isinstance(exc_info.value.validation_error, ValidationError)


def test_load_settings_rejects_legacy_path_keys(tmp_path: Path) -> None:
    config_path = tmp_path / "config.yaml"
    _write_config(
        config_path,
        """
        paths:
          work_dir: ./data
          output_dir: ./out
        """,
    )

    with pytest.raises(SettingsError, match="paths.output_dir not supported"):
        load_settings(config_path)


def test_load_settings_missing_file(tmp_path: Path) -> None:
    with pytest.raises(SettingsError, match="not found"):
        load_settings(tmp_path / "missing.yaml")


def test_load_settings_rejects_invalid_yaml(tmp_path: Path) -> None:
    config_path = tmp_path / "config.yaml"
    config_path.write_text("paths: [unclosed\n")

    with pytest.raises(SettingsError, match="Invalid YAML"):
        load_settings(config_path)


@pytest.mark.parametrize(
    "section",
    [
        "scenario:\n  horizon_s: 5.01\n",
        "scenario:\n  xf: [1.0, 2.0]\n",
        "scenario:\n  initial_state:\n    speed: 0.0\n",
        "plant:\n  l_r: 0.0\n",
        "trainer:\n  population_size: 5\n",
        "planner:\n  r_diag: [1.0, 0.0]\n",
        "planner:\n  waypoints: [{step: 248, x: 1.0, y: 1.0}]\n",
        "controller:\n  drift_form: printed\n",
        "prenet:\n  hold_steps: 1\n",
        "prenet:\n  lr_decay: 0.0\n",
    ],
)
def test_load_settings_rejects_invalid_values(tmp_path: Path, section: str) -> None:
    config_path = tmp_path / "config.yaml"
    config_path.write_text("paths:\n  work_dir: ./data\n" + section)

    with pytest.raises(SettingsError) as exc_info:
        load_settings(config_path)

    assert str(exc_info.value) == "Invalid configuration"
    assert exc_info.value.validation_error is not None


def test_randomized_start_speed_must_stay_positive(tmp_path: Path) -> None:
    config_path = tmp_path / "config.yaml"
    _write_config(
        config_path,
        """
        scenario:
          randomize_start: true
          start_perturbation:
            speed: 0.5
        """,
    )

    with pytest.raises(SettingsError):
        load_settings(config_path)


def test_write_settings_round_trips(tmp_path: Path) -> None:
    config_path = tmp_path / "config.yaml"
    _write_config(
        config_path,
        """
        paths:
          work_dir: ./data
        plant:
          l_r: 0.75
        planner:
          waypoints:
            - {step: 100, x: 2.0, y: 3.0}
        trainer:
          seed: 9
        """,
    )
    settings = load_settings(config_path)

    copy_path = write_settings(settings, tmp_path / "copy" / "config.yaml")
    reloaded = load_settings(copy_path)

    exclude = {"config_path"}
    assert reloaded.model_dump(exclude=exclude) == settings.model_dump(exclude=exclude)


def test_example_config_loads_to_the_defaults(tmp_path: Path) -> None:
    minimal = tmp_path / "config.yaml"
    _write_config(minimal, "paths: {}")

    example = load_settings(EXAMPLE_CONFIG)
    defaults = load_settings(minimal)

    exclude = {"config_path", "paths"}
    assert example.model_dump(exclude=exclude) == defaults.model_dump(exclude=exclude)
