from __future__ import annotations

import copy
import logging
import math
from pathlib import Path
from typing import Any

import yaml

from lfbl_racing.api.settings import DriftFormSetting, Settings, SettingsError, load_settings
from lfbl_racing.experiments.artifacts import RunReport
from lfbl_racing.pipeline import CommandName, RunOptions, supported_commands
from lfbl_racing.pipeline import run as run_command

logger = logging.getLogger(__name__)

DEFAULT_CONFIG: dict[str, Any] = {
    "paths": {"work_dir": "./runs", "overrides": {}},
    "plant": {"l_r": 1.0, "l_f": 0.5},
    "model": {"l_r": 0.5, "l_f": 0.5},
    "actuator": {"a_gas_max": 4.0, "a_brake_max": 8.0, "tau_act": 0.1},
    "scenario": {
        "x0": [0.0, 0.0, 0.0, 0.0],
        "xf": [5.0, 0.0, 5.0, 0.0],
        "horizon_s": 5.0,
        "dt": 0.02,
        "initial_state": {"x": 0.0, "y": 0.0, "psi": 0.5 * math.pi, "speed": 0.5, "beta": 0.0},
        "randomize_start": False,
        "start_perturbation": {"position": 0.0, "heading": 0.0, "speed": 0.0},
    },
    "planner": {
        "q_diag": [0.0, 0.0, 0.0, 0.0],
        "r_diag": [1.0, 1.0],
        "qf_diag": [0.0, 0.0, 0.0, 0.0],
        "v_bnds": 10.0,
        "waypoints": [],
        "replan_every": None,
    },
    "tracker": {"q_diag": [0.1, 0.1, 0.1, 0.1], "r_diag": [1.0, 1.0]},
    "controller": {
        "drift_form": "as_printed",
        "eps_v": 1e-3,
        "a_max": 10.0,
        "b_max": 10.0,
        "blowup_bound": 1e3,
    },
    "policy": {"hidden_sizes": [32, 32], "output_gain": 0.1},
    "trainer": {
        "population_size": 32,
        "noise_std": 0.02,
        "step_size": 0.01,
        "epochs": 200,
        "episodes_per_eval": 5,
        "exploration_std": 0.01,
        "seed": 0,
        "workers": 1,
        "log_every": 10,
    },
    "prenet": {
        "n_samples": 5000,
        "hold_steps": 10,
        "settle_steps": 25,
        "dt": 0.02,
        "epochs": 200,
        "lr": 0.05,
        "lr_decay": 0.95,
        "batch_size": 32,
        "hidden_size": 200,
        "negative_slope": 0.01,
        "sampling": "independent",
        "seed": 0,
        "eval_points": 200,
    },
    "numerics": {
        "pivot_tol": 1e-12,
        "care_tol": 1e-10,
        "care_max_iter": 60,
        "qp_tol": 1e-8,
        "qp_max_iter": 50_000,
    },
}


def _fmt(value: Any) -> str:
    """One YAML scalar or flow sequence, as yaml.safe_load reads it back."""
    text = yaml.safe_dump(value, default_flow_style=True, width=10_000).strip()
    return text.removesuffix("...").strip()


def render_annotated_config(config: dict[str, Any]) -> str:
    """Render config YAML with comments marking published values and our own choices."""
    paths = config["paths"]
    plant, model, act = config["plant"], config["model"], config["actuator"]
    sc, pl, tr = config["scenario"], config["planner"], config["tracker"]
    ctrl, pol, trn = config["controller"], config["policy"], config["trainer"]
    pre, num = config["prenet"], config["numerics"]
    init, pert = sc["initial_state"], sc["start_perturbation"]

    overrides = paths.get("overrides") or {}
    output_line = (
        f"  overrides:\n    output_dir: {_fmt(str(overrides['output_dir']))}\n"
        if overrides.get("output_dir")
        else "  # overrides:\n  #   output_dir: ./somewhere/output\n"
    )

    return (
        "# LFBL racing experiment configuration\n"
        "# All paths are relative to this config file's directory unless absolute\n"
        "# [reference] marks values from the published experiment, [choice] our own\n\n"
        "paths:\n"
        "  # Base working directory; artifacts go to <work_dir>/output\n"
        f"  work_dir: {_fmt(str(paths['work_dir']))}\n"
        f"{output_line}\n"
        "# Simulated vehicle. [choice] the true rear-axle distance is not stated\n"
        "plant:\n"
        f"  l_r: {_fmt(plant['l_r'])}\n"
        f"  l_f: {_fmt(plant['l_f'])}\n\n"
        "# Nominal model inside the linearizing controller. [reference] l_r = 0.5\n"
        "model:\n"
        f"  l_r: {_fmt(model['l_r'])}\n"
        f"  l_f: {_fmt(model['l_f'])}\n\n"
        "# Synthetic gas/brake actuator (first-order lag). [choice]\n"
        "actuator:\n"
        f"  a_gas_max: {_fmt(act['a_gas_max'])}\n"
        f"  a_brake_max: {_fmt(act['a_brake_max'])}\n"
        f"  tau_act: {_fmt(act['tau_act'])}\n\n"
        "scenario:\n"
        "  # [reference] plan from rest at (0, 0); null = the normal form of initial_state\n"
        f"  x0: {_fmt(sc['x0'])}\n"
        "  # [reference] drive from (0, 0) to (5, 5)\n"
        f"  xf: {_fmt(sc['xf'])}\n"
        "  # [reference] 5 s at 0.02 s gives 249 steps\n"
        f"  horizon_s: {_fmt(sc['horizon_s'])}\n"
        f"  dt: {_fmt(sc['dt'])}\n"
        "  # [choice] heading north at walking pace; speed must stay away from 0\n"
        "  initial_state:\n"
        f"    x: {_fmt(init['x'])}\n"
        f"    y: {_fmt(init['y'])}\n"
        f"    psi: {_fmt(init['psi'])}\n"
        f"    speed: {_fmt(init['speed'])}\n"
        f"    beta: {_fmt(init['beta'])}\n"
        "  # Uniform start perturbation half-widths, used when randomize_start is true\n"
        f"  randomize_start: {_fmt(sc['randomize_start'])}\n"
        "  start_perturbation:\n"
        f"    position: {_fmt(pert['position'])}\n"
        f"    heading: {_fmt(pert['heading'])}\n"
        f"    speed: {_fmt(pert['speed'])}\n\n"
        "# Trajectory planner weights. [choice] no published weights\n"
        "planner:\n"
        f"  q_diag: {_fmt(pl['q_diag'])}\n"
        f"  r_diag: {_fmt(pl['r_diag'])}\n"
        f"  qf_diag: {_fmt(pl['qf_diag'])}\n"
        "  # Bound on each virtual input component |v_i|\n"
        f"  v_bnds: {_fmt(pl['v_bnds'])}\n"
        "  # Interior position constraints, e.g. [{step: 120, x: 2.0, y: 3.0}]\n"
        f"  waypoints: {_fmt(pl['waypoints'])}\n"
        "  # Re-plan from the measured state every K steps; null disables\n"
        f"  replan_every: {_fmt(pl['replan_every'])}\n\n"
        "# Infinite-horizon LQR tracker around the plan. [choice] light weights leave\n"
        "# the l_r mismatch visible in the baseline return\n"
        "tracker:\n"
        f"  q_diag: {_fmt(tr['q_diag'])}\n"
        f"  r_diag: {_fmt(tr['r_diag'])}\n\n"
        "controller:\n"
        "  # exact: V^2/l_r sin(beta) drift; as_printed: (V/l_r) sin(psi + beta) in both entries\n"
        "  # [reference] the published baseline used as_printed; matched-model checks need exact\n"
        f"  drift_form: {_fmt(ctrl['drift_form'])}\n"
        "  # Speed floor below which the decoupling matrix counts as singular\n"
        f"  eps_v: {_fmt(ctrl['eps_v'])}\n"
        "  # Clip |a| and |b| before they reach the plant\n"
        f"  a_max: {_fmt(ctrl['a_max'])}\n"
        f"  b_max: {_fmt(ctrl['b_max'])}\n"
        "  # Episode ends as diverged once |xi| exceeds this\n"
        f"  blowup_bound: {_fmt(ctrl['blowup_bound'])}\n\n"
        "# Correction network: state -> (delta beta, delta alpha). [choice]\n"
        "policy:\n"
        f"  hidden_sizes: {_fmt(pol['hidden_sizes'])}\n"
        f"  output_gain: {_fmt(pol['output_gain'])}\n\n"
        "# Evolution-strategies trainer. [reference] 200 epochs; the rest [choice]\n"
        "trainer:\n"
        "  # Even: antithetic pairs\n"
        f"  population_size: {_fmt(trn['population_size'])}\n"
        f"  noise_std: {_fmt(trn['noise_std'])}\n"
        f"  step_size: {_fmt(trn['step_size'])}\n"
        f"  epochs: {_fmt(trn['epochs'])}\n"
        f"  episodes_per_eval: {_fmt(trn['episodes_per_eval'])}\n"
        "  # Gaussian noise on (a, b) during training rollouts\n"
        f"  exploration_std: {_fmt(trn['exploration_std'])}\n"
        f"  seed: {_fmt(trn['seed'])}\n"
        "  # Process pool size for scoring the population; 1 runs serially\n"
        f"  workers: {_fmt(trn['workers'])}\n"
        f"  log_every: {_fmt(trn['log_every'])}\n\n"
        "# Inverse actuator network. [reference] 5000 samples, hold 10 steps, 200 hidden\n"
        "# units with leaky ReLU, Adam at lr 0.05; the rest [choice]\n"
        "prenet:\n"
        f"  n_samples: {_fmt(pre['n_samples'])}\n"
        f"  hold_steps: {_fmt(pre['hold_steps'])}\n"
        "  # Steps the actuator settles under each command before measuring; 0 = none\n"
        f"  settle_steps: {_fmt(pre['settle_steps'])}\n"
        f"  dt: {_fmt(pre['dt'])}\n"
        f"  epochs: {_fmt(pre['epochs'])}\n"
        f"  lr: {_fmt(pre['lr'])}\n"
        "  # Learning rate multiplier applied after every epoch\n"
        f"  lr_decay: {_fmt(pre['lr_decay'])}\n"
        f"  batch_size: {_fmt(pre['batch_size'])}\n"
        f"  hidden_size: {_fmt(pre['hidden_size'])}\n"
        f"  negative_slope: {_fmt(pre['negative_slope'])}\n"
        "  # independent: gas and brake drawn apart; exclusive: one signed pedal per sample\n"
        f"  sampling: {_fmt(pre['sampling'])}\n"
        f"  seed: {_fmt(pre['seed'])}\n"
        "  # Accelerations in [-6, 3.5] m/s^2 used for the round-trip check\n"
        f"  eval_points: {_fmt(pre['eval_points'])}\n\n"
        "# Solver tolerances\n"
        "numerics:\n"
        f"  pivot_tol: {_fmt(num['pivot_tol'])}\n"
        f"  care_tol: {_fmt(num['care_tol'])}\n"
        f"  care_max_iter: {_fmt(num['care_max_iter'])}\n"
        f"  qp_tol: {_fmt(num['qp_tol'])}\n"
        f"  qp_max_iter: {_fmt(num['qp_max_iter'])}\n"
    )


def load_existing_defaults(config_path: Path) -> dict[str, Any]:
    """Load existing config as defaults, merged section by section with built-in defaults."""
    merged = copy.deepcopy(DEFAULT_CONFIG)
    if not config_path.exists():
        return merged

    with open(config_path) as f:
        loaded = yaml.safe_load(f) or {}
    if not isinstance(loaded, dict):
        raise SettingsError(f"Invalid config file format: {config_path}")

    for section, values in loaded.items():
        if isinstance(values, dict) and isinstance(merged.get(section), dict):
            merged[section] = _merge(merged[section], values)
        else:
            merged[section] = values
    return merged


def _merge(base: dict[str, Any], updates: dict[str, Any]) -> dict[str, Any]:
    out = dict(base)
    for key, value in updates.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def create_config(
    config_out: str | Path,
    *,
    overrides: dict[str, Any] | None = None,
    overwrite: bool = False,
) -> Path:
    """Write an annotated config file, keeping values from an existing one.

    ``overrides`` is a nested mapping in the config shape, e.g.
    ``{"plant": {"l_r": 0.5}}``.
    """
    config_out_path = Path(config_out).resolve()
    if config_out_path.exists() and not overwrite:
        raise SettingsError(f"{config_out_path} already exists; pass overwrite=True to replace it")

    config = load_existing_defaults(config_out_path)
    if overrides:
        config = _merge(config, overrides)

    config_out_path.parent.mkdir(parents=True, exist_ok=True)
    config_out_path.write_text(render_annotated_config(config), encoding="utf-8")
    logger.info("Wrote config to %s", config_out_path)
    return config_out_path


def apply_run_overrides(
    settings: Settings,
    *,
    seed: int | None = None,
    output_dir: str | Path | None = None,
    drift_form: DriftFormSetting | None = None,
) -> None:
    """Apply runtime overrides to loaded settings."""
    if seed is not None:
        if seed < 0:
            raise SettingsError("--seed must be >= 0")
        settings.trainer.seed = seed
        settings.prenet.seed = seed

    if output_dir:
        settings.paths.output_dir = Path(output_dir).resolve()

    if drift_form:
        if drift_form not in ("exact", "as_printed"):
            raise SettingsError("--drift must be one of: exact, as_printed")
        settings.controller.drift_form = drift_form


def run_from_config(
    config_path: str | Path,
    *,
    command: CommandName,
    seed: int | None = None,
    output_dir: str | Path | None = None,
    drift_form: DriftFormSetting | None = None,
    policy_path: str | Path | None = None,
    use_prenet: bool = False,
    prenet_path: str | Path | None = None,
) -> RunReport:
    """Load settings from config, apply overrides, and run one experiment command."""
    if command not in supported_commands():
        valid = ", ".join(sorted(supported_commands()))
        raise ValueError(f"Unknown command {command!r}. Valid commands: {valid}")
    if use_prenet and command != "eval":
        raise ValueError("--use-prenet can only be used with the eval command")

    settings = load_settings(Path(config_path).resolve())
    apply_run_overrides(settings, seed=seed, output_dir=output_dir, drift_form=drift_form)
    logger.info("Resolved output_dir: %s", settings.paths.output_dir)

    options = RunOptions(
        policy_path=Path(policy_path).resolve() if policy_path else None,
        use_prenet=use_prenet,
        prenet_path=Path(prenet_path).resolve() if prenet_path else None,
    )
    report = run_command(command, settings, options)

    logger.info(
        "✅ %s completed\n\nWhere you need to look:\n  • output_dir: %s\n%s",
        command,
        settings.paths.output_dir,
        "".join(f"  • {name}: {path}\n" for name, path in report.artifacts.items()),
    )
    return report
