from __future__ import annotations

import logging
import math
from pathlib import Path
from typing import Any, Literal

import yaml
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator

logger = logging.getLogger(__name__)

DriftFormSetting = Literal["exact", "as_printed"]
SamplingSetting = Literal["exclusive", "independent"]

# T/dt must be this close to an integer step count
STEP_COUNT_TOL = 1e-6


class StrictBaseModel(BaseModel):
    """Base model for strict settings parsing."""

    model_config = ConfigDict(extra="forbid")


def _positive(value: float) -> float:
    if not value > 0:
        raise ValueError("must be > 0")
    return value


def _non_negative(value: float) -> float:
    if not value >= 0:
        raise ValueError("must be >= 0")
    return value


class PathSettings(StrictBaseModel):
    """Directories for run artifacts."""

    work_dir: Path
    output_dir: Path


class VehicleSettings(StrictBaseModel):
    """Axle distances of the bicycle."""

    l_r: float = 0.5
    l_f: float = 0.5

    @field_validator("l_r", "l_f")
    @classmethod
    def _validate_positive(cls, value: float) -> float:
        return _positive(value)


class ActuatorSettings(StrictBaseModel):
    """Synthetic gas/brake actuator."""

    a_gas_max: float = 4.0
    a_brake_max: float = 8.0
    tau_act: float = 0.1

    @field_validator("a_gas_max", "a_brake_max", "tau_act")
    @classmethod
    def _validate_positive(cls, value: float) -> float:
        return _positive(value)


class InitialStateSettings(StrictBaseModel):
    """Vehicle state at the start of every episode."""

    x: float = 0.0
    y: float = 0.0
    psi: float = 0.5 * math.pi
    speed: float = 0.5
    beta: float = 0.0

    @field_validator("speed")
    @classmethod
    def _validate_speed(cls, value: float) -> float:
        return _positive(value)

    @field_validator("beta")
    @classmethod
    def _validate_beta(cls, value: float) -> float:
        if not abs(value) < 0.5 * math.pi:
            raise ValueError("must lie in (-pi/2, pi/2)")
        return value


class StartPerturbationSettings(StrictBaseModel):
    """Half-widths of the uniform start perturbation used when randomize_start is on."""

    position: float = 0.0
    heading: float = 0.0
    speed: float = 0.0

    @field_validator("position", "heading", "speed")
    @classmethod
    def _validate_non_negative(cls, value: float) -> float:
        return _non_negative(value)


class ScenarioSettings(StrictBaseModel):
    """Boundary states, horizon and start distribution."""

    x0: list[float] | None = [0.0, 0.0, 0.0, 0.0]
    xf: list[float] = [5.0, 0.0, 5.0, 0.0]
    horizon_s: float = 5.0
    dt: float = 0.02
    initial_state: InitialStateSettings = InitialStateSettings()
    randomize_start: bool = False
    start_perturbation: StartPerturbationSettings = StartPerturbationSettings()

    @field_validator("x0", "xf")
    @classmethod
    def _validate_linear_state(cls, value: list[float] | None) -> list[float] | None:
        if value is not None and len(value) != 4:
            raise ValueError("must have 4 entries (x, xdot, y, ydot)")
        return value

    @field_validator("horizon_s", "dt")
    @classmethod
    def _validate_positive(cls, value: float) -> float:
        return _positive(value)

    @model_validator(mode="after")
    def _validate_step_count(self) -> ScenarioSettings:
        ratio = self.horizon_s / self.dt
        if abs(ratio - round(ratio)) > STEP_COUNT_TOL:
            raise ValueError(f"horizon_s / dt = {ratio:.9g} is not an integer step count")
        if round(ratio) - 1 < 2:
            raise ValueError("horizon_s / dt must give at least 3 steps")
        if self.randomize_start and self.start_perturbation.speed >= self.initial_state.speed:
            raise ValueError("start_perturbation.speed must be below initial_state.speed")
        return self

    @property
    def n_steps(self) -> int:
        """States per episode: ``round(T / dt) - 1``."""
        return round(self.horizon_s / self.dt) - 1


class WaypointSettings(StrictBaseModel):
    step: int
    x: float
    y: float


def _check_diag(value: list[float], size: int, *, strict: bool) -> list[float]:
    if len(value) != size:
        raise ValueError(f"must have {size} entries")
    for entry in value:
        if strict and not entry > 0:
            raise ValueError("entries must be > 0")
        if not strict and not entry >= 0:
            raise ValueError("entries must be >= 0")
    return value


class PlannerSettings(StrictBaseModel):
    """Finite-horizon QP planner weights and bounds."""

    q_diag: list[float] = [0.0, 0.0, 0.0, 0.0]
    r_diag: list[float] = [1.0, 1.0]
    qf_diag: list[float] = [0.0, 0.0, 0.0, 0.0]
    v_bnds: float = 10.0
    waypoints: list[WaypointSettings] = []
    replan_every: int | None = None

    @field_validator("q_diag", "qf_diag")
    @classmethod
    def _validate_state_weight(cls, value: list[float]) -> list[float]:
        return _check_diag(value, 4, strict=False)

    @field_validator("r_diag")
    @classmethod
    def _validate_input_weight(cls, value: list[float]) -> list[float]:
        return _check_diag(value, 2, strict=True)

    @field_validator("v_bnds")
    @classmethod
    def _validate_positive(cls, value: float) -> float:
        return _positive(value)

    @field_validator("replan_every")
    @classmethod
    def _validate_replan(cls, value: int | None) -> int | None:
        if value is not None and value < 1:
            raise ValueError("must be >= 1")
        return value


class TrackerSettings(StrictBaseModel):
    """Continuous LQR tracker weights."""

    q_diag: list[float] = [0.1, 0.1, 0.1, 0.1]
    r_diag: list[float] = [1.0, 1.0]

    @field_validator("q_diag")
    @classmethod
    def _validate_state_weight(cls, value: list[float]) -> list[float]:
        return _check_diag(value, 4, strict=False)

    @field_validator("r_diag")
    @classmethod
    def _validate_input_weight(cls, value: list[float]) -> list[float]:
        return _check_diag(value, 2, strict=True)


class ControllerSettings(StrictBaseModel):
    """Linearizing controller and episode limits."""

    drift_form: DriftFormSetting = "as_printed"
    eps_v: float = 1e-3
    a_max: float = 10.0
    b_max: float = 10.0
    blowup_bound: float = 1e3

    @field_validator("eps_v", "a_max", "b_max", "blowup_bound")
    @classmethod
    def _validate_positive(cls, value: float) -> float:
        return _positive(value)


class PolicySettings(StrictBaseModel):
    hidden_sizes: list[int] = [32, 32]
    output_gain: float = 0.1

    @field_validator("hidden_sizes")
    @classmethod
    def _validate_hidden(cls, value: list[int]) -> list[int]:
        if not value or min(value) < 1:
            raise ValueError("must be a non-empty list of positive sizes")
        return value

    @field_validator("output_gain")
    @classmethod
    def _validate_positive(cls, value: float) -> float:
        return _positive(value)


class TrainerSettings(StrictBaseModel):
    """Evolution-strategies trainer."""

    population_size: int = 32
    noise_std: float = 0.02
    step_size: float = 0.01
    epochs: int = 200
    episodes_per_eval: int = 5
    exploration_std: float = 0.01
    seed: int = 0
    workers: int = 1
    log_every: int = 10

    @field_validator("population_size")
    @classmethod
    def _validate_population(cls, value: int) -> int:
        if value < 2 or value % 2:
            raise ValueError("must be an even number >= 2")
        return value

    @field_validator("noise_std", "step_size")
    @classmethod
    def _validate_positive(cls, value: float) -> float:
        return _positive(value)

    @field_validator("epochs", "episodes_per_eval", "workers", "log_every")
    @classmethod
    def _validate_count(cls, value: int) -> int:
        if value < 1:
            raise ValueError("must be >= 1")
        return value

    @field_validator("exploration_std", "seed")
    @classmethod
    def _validate_non_negative(cls, value: float) -> float:
        return _non_negative(value)


class PrenetSettings(StrictBaseModel):
    """Inverse actuator network: data collection and training."""

    n_samples: int = 5000
    hold_steps: int = 10
    settle_steps: int = 25
    dt: float = 0.02
    epochs: int = 200
    lr: float = 0.05
    lr_decay: float = 0.95
    batch_size: int = 32
    hidden_size: int = 200
    negative_slope: float = 0.01
    sampling: SamplingSetting = "independent"
    seed: int = 0
    eval_points: int = 200

    @field_validator("n_samples", "epochs", "batch_size", "hidden_size", "eval_points")
    @classmethod
    def _validate_count(cls, value: int) -> int:
        if value < 1:
            raise ValueError("must be >= 1")
        return value

    @field_validator("hold_steps")
    @classmethod
    def _validate_hold(cls, value: int) -> int:
        if value < 2:
            raise ValueError("must be >= 2")
        return value

    @field_validator("settle_steps", "seed")
    @classmethod
    def _validate_non_negative(cls, value: int) -> int:
        return _non_negative(value)

    @field_validator("dt", "lr")
    @classmethod
    def _validate_positive(cls, value: float) -> float:
        return _positive(value)

    @field_validator("lr_decay")
    @classmethod
    def _validate_decay(cls, value: float) -> float:
        if not 0 < value <= 1:
            raise ValueError("must be in (0, 1]")
        return value

    @field_validator("negative_slope")
    @classmethod
    def _validate_slope(cls, value: float) -> float:
        if not 0 <= value < 1:
            raise ValueError("must be in [0, 1)")
        return value


class NumericsSettings(StrictBaseModel):
    """Solver tolerances and iteration caps."""

    pivot_tol: float = 1e-12
    care_tol: float = 1e-10
    care_max_iter: int = 60
    qp_tol: float = 1e-8
    qp_max_iter: int = 50_000

    @field_validator("pivot_tol", "care_tol", "qp_tol")
    @classmethod
    def _validate_positive(cls, value: float) -> float:
        return _positive(value)

    @field_validator("care_max_iter", "qp_max_iter")
    @classmethod
    def _validate_count(cls, value: int) -> int:
        if value < 1:
            raise ValueError("must be >= 1")
        return value


class Settings(StrictBaseModel):
    """Complete experiment settings."""

    paths: PathSettings
    plant: VehicleSettings = VehicleSettings(l_r=1.0)
    model: VehicleSettings = VehicleSettings()
    actuator: ActuatorSettings = ActuatorSettings()
    scenario: ScenarioSettings = ScenarioSettings()
    planner: PlannerSettings = PlannerSettings()
    tracker: TrackerSettings = TrackerSettings()
    controller: ControllerSettings = ControllerSettings()
    policy: PolicySettings = PolicySettings()
    trainer: TrainerSettings = TrainerSettings()
    prenet: PrenetSettings = PrenetSettings()
    numerics: NumericsSettings = NumericsSettings()
    config_path: Path

    @model_validator(mode="after")
    def _validate_waypoints(self) -> Settings:
        n = self.scenario.n_steps
        for wp in self.planner.waypoints:
            if not 0 < wp.step < n - 1:
                raise ValueError(f"planner waypoint step {wp.step} must lie in (0, {n - 1})")
        return self


class SettingsError(Exception):
    """Error loading or validating settings."""

    def __init__(
        self,
        message: str,
        *,
        validation_error: ValidationError | None = None,
        config_path: Path | None = None,
    ) -> None:
        super().__init__(message)
        self.validation_error = validation_error
        self.config_path = config_path


def _resolve_path(base_dir: Path, path_str: str) -> Path:
    """Resolve a path relative to the config file directory."""
    path = Path(path_str)
    if path.is_absolute():
        return path
    return (base_dir / path).resolve()


def resolve_paths(config: dict[str, Any], config_dir: Path) -> dict[str, Path]:
    """Resolve runtime paths from config using work_dir defaults and optional overrides."""
    paths_config = config.get("paths", {})
    if paths_config is None:
        paths_config = {}
    if not isinstance(paths_config, dict):
        raise SettingsError("paths must be a mapping in config.yaml")

    unknown = sorted(set(paths_config) - {"work_dir", "overrides"})
    if unknown:
        illegal_display = ", ".join(f"paths.{key}" for key in unknown)
        raise SettingsError(f"{illegal_display} not supported. Use paths.overrides instead.")

    work_dir = _resolve_path(config_dir, str(paths_config.get("work_dir", "./runs")))

    raw_overrides = paths_config.get("overrides") or {}
    if not isinstance(raw_overrides, dict):
        raise SettingsError("paths.overrides must be a mapping in config.yaml")
    unknown = sorted(set(raw_overrides) - {"output_dir"})
    if unknown:
        raise SettingsError(f"Unknown paths.overrides keys: {', '.join(unknown)}")

    output_raw = raw_overrides.get("output_dir")
    output_dir = work_dir / "output"
    if output_raw is not None:
        output_dir = _resolve_path(config_dir, str(output_raw))
    return {"work_dir": work_dir, "output_dir": output_dir}


def _load_yaml(config_path: Path) -> dict[str, Any]:
    """Load YAML configuration file."""
    if not config_path.exists():
        raise SettingsError(f"Config file not found: {config_path}")

    with open(config_path) as f:
        try:
            config = yaml.safe_load(f)
        except yaml.YAMLError as exc:
            raise SettingsError(f"Invalid YAML in {config_path}: {exc}") from exc

    if not isinstance(config, dict):
        raise SettingsError(f"Invalid config file format: {config_path}")

    return config


def load_settings(config_path: str | Path) -> Settings:
    """Load settings from a YAML config file.

    Args:
        config_path: Path to the YAML configuration file.

    Returns:
        Complete Settings object with resolved paths.

    Raises:
        SettingsError: If config file is missing or invalid.
    """
    config_path = Path(config_path).resolve()
    config = _load_yaml(config_path)
    resolved_paths = resolve_paths(config=config, config_dir=config_path.parent)

    settings_payload = {
        **config,
        "paths": resolved_paths,
        "config_path": config_path,
    }

    try:
        return Settings.model_validate(settings_payload)
    except ValidationError as exc:
        raise SettingsError(
            "Invalid configuration",
            validation_error=exc,
            config_path=config_path,
        ) from exc


def dump_settings(settings: Settings) -> dict[str, Any]:
    """Settings in the config-file shape; loading the YAML of this dict gives them back."""
    payload = settings.model_dump(mode="json", exclude={"config_path", "paths"})
    payload["paths"] = {
        "work_dir": str(settings.paths.work_dir),
        "overrides": {"output_dir": str(settings.paths.output_dir)},
    }
    return {"paths": payload.pop("paths"), **payload}


def write_settings(settings: Settings, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(dump_settings(settings), sort_keys=False), encoding="utf-8")
    return path
