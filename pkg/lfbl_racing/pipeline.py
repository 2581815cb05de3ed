from __future__ import annotations

import logging
from collections.abc import Callable
from dataclasses import dataclass
from pathlib import Path
from time import perf_counter
from typing import Literal

from lfbl_racing._exceptions import CommandError
from lfbl_racing.api.settings import Settings
from lfbl_racing.experiments.artifacts import RunReport
from lfbl_racing.experiments.commands import (
    cmd_baseline,
    cmd_eval,
    cmd_plan,
    cmd_plot,
    cmd_prenet,
    cmd_train,
)

CommandName = Literal["plan", "baseline", "train", "eval", "prenet", "plot"]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunOptions:
    """Per-invocation inputs that are not part of the config file."""

    policy_path: Path | None = None
    use_prenet: bool = False
    prenet_path: Path | None = None


@dataclass(frozen=True)
class Command:
    """Callable experiment command with a stable name."""

    name: str
    runner: Callable[[Settings, RunOptions], RunReport]


def make_simple_command(name: str, runner: Callable[[Settings], RunReport]) -> Command:
    """Wrap a command that only needs the settings."""

    def _wrapped(settings: Settings, _options: RunOptions) -> RunReport:
        return runner(settings)

    return Command(name=name, runner=_wrapped)


def _run_eval(settings: Settings, options: RunOptions) -> RunReport:
    return cmd_eval(
        settings,
        options.policy_path,
        use_prenet=options.use_prenet,
        prenet_path=options.prenet_path,
    )


_COMMANDS: dict[str, Command] = {
    command.name: command
    for command in (
        make_simple_command("plan", cmd_plan),
        make_simple_command("baseline", cmd_baseline),
        make_simple_command("train", cmd_train),
        Command(name="eval", runner=_run_eval),
        make_simple_command("prenet", cmd_prenet),
        make_simple_command("plot", cmd_plot),
    )
}


def supported_commands() -> set[str]:
    return set(_COMMANDS)


def run(
    command: CommandName,
    settings: Settings,
    options: RunOptions | None = None,
) -> RunReport:
    """Run one experiment command with the shared banner and timing."""
    try:
        runner = _COMMANDS[command].runner
    except KeyError as exc:
        valid = ", ".join(sorted(_COMMANDS))
        raise CommandError(f"Invalid command: {command}. Must be one of: {valid}") from exc

    options = options or RunOptions()
    logger.info("=" * 60)
    logger.info("LFBL experiment - command: %s", command)
    logger.info("=" * 60)
    logger.info("Config: %s", settings.config_path)
    logger.info("Output directory: %s", settings.paths.output_dir)
    logger.info(
        "Plant l_r=%g, model l_r=%g, drift form %s, seed %d",
        settings.plant.l_r,
        settings.model.l_r,
        settings.controller.drift_form,
        settings.trainer.seed,
    )
    logger.info("")

    t0 = perf_counter()
    report = runner(settings, options)
    logger.info("")
    logger.info("=" * 60)
    logger.info("Command '%s' completed in %.2f seconds", command, perf_counter() - t0)
    logger.info("=" * 60)
    return report
