from __future__ import annotations

from pathlib import Path

import pytest

from lfbl_racing import cli
from lfbl_racing._exceptions import InfeasibleError
from lfbl_racing.experiments.artifacts import RunReport, ScenarioEcho

ECHO = ScenarioEcho(
    x0=[0.0, 0.0, 0.0, 0.5],
    xf=[5.0, 0.0, 5.0, 0.0],
    horizon_s=5.0,
    dt=0.02,
    n_steps=249,
    plant_l_r=1.0,
    model_l_r=0.5,
    drift_form="exact",
    seed=0,
)


@pytest.fixture(autouse=True)
def _quiet_logging(monkeypatch) -> None:
    monkeypatch.setattr(cli, "_configure_logging", lambda _verbose: None)


def test_eval_cli_passes_overrides_to_run_from_config(monkeypatch) -> None:
    captured: dict[str, object] = {}

    def fake_run_from_config(config_path, **kwargs):
        captured["config_path"] = config_path
        captured.update(kwargs)
        return RunReport(command="eval", scenario=ECHO, baseline_return=-1.5)

    monkeypatch.setattr(cli, "run_from_config", fake_run_from_config)

    exit_code = cli.main(
        [
            "eval",
            "--config",
            "config.yaml",
            "--use-prenet",
            "--policy",
            "p.json",
            "--seed",
            "3",
            "--drift",
            "as_printed",
        ]
    )

    assert exit_code == 0
    assert captured["config_path"] == Path("config.yaml").resolve()
    assert captured["command"] == "eval"
    assert captured["use_prenet"] is True
    assert captured["policy_path"] == "p.json"
    assert captured["seed"] == 3
    assert captured["drift_form"] == "as_printed"
    assert captured["prenet_path"] is None


def test_train_cli_defaults_leave_overrides_unset(monkeypatch) -> None:
    captured: dict[str, object] = {}

    def fake_run_from_config(config_path, **kwargs):
        captured.update(kwargs)
        return RunReport(command="train", scenario=ECHO)

    monkeypatch.setattr(cli, "run_from_config", fake_run_from_config)

    assert cli.main(["train"]) == 0
    assert captured["seed"] is None
    assert captured["output_dir"] is None
    assert captured["drift_form"] is None
    assert captured["use_prenet"] is False


def test_diverged_rollouts_exit_with_one(monkeypatch, capsys) -> None:
    def fake_run_from_config(config_path, **kwargs):
        return RunReport(command="train", scenario=ECHO, diverged=["baseline"])

    monkeypatch.setattr(cli, "run_from_config", fake_run_from_config)

    assert cli.main(["train"]) == 1
    out = capsys.readouterr().out
    assert "Diverged rollouts" in out
    assert "Completed successfully" not in out


def test_init_writes_config(tmp_path: Path) -> None:
    config_path = tmp_path / "config.yaml"

    assert cli.main(["init", "--config", str(config_path)]) == 0
    assert config_path.exists()
    assert "work_dir: ./runs" in config_path.read_text(encoding="utf-8")

    # a second init refuses to overwrite
    assert cli.main(["init", "--config", str(config_path)]) == 2
    assert cli.main(["init", "--config", str(config_path), "--overwrite"]) == 0


def test_missing_config_is_a_configuration_error(tmp_path: Path) -> None:
    exit_code = cli.main(["plan", "--config", str(tmp_path / "missing.yaml")])

    assert exit_code == 2


def test_library_errors_exit_with_one(monkeypatch) -> None:
    def fake_run_from_config(config_path, **kwargs):
        raise InfeasibleError("terminal state out of reach")

    monkeypatch.setattr(cli, "run_from_config", fake_run_from_config)

    assert cli.main(["plan"]) == 1


def test_inspect_cli_uses_out_directory(monkeypatch, tmp_path: Path) -> None:
    captured: dict[str, object] = {}

    def fake_inspect_run(**kwargs):
        captured.update(kwargs)
        return {}

    monkeypatch.setattr(cli, "inspect_run", fake_inspect_run)

    assert cli.main(["inspect", "--out", str(tmp_path)]) == 0
    assert captured == {"config_path": None, "output_dir": str(tmp_path)}
