from __future__ import annotations

import argparse
import logging
from pathlib import Path

from rich.console import Console
from rich.table import Table

from lfbl_racing._exceptions import LfblError
from lfbl_racing.api.api import create_config, run_from_config
from lfbl_racing.api.cli_errors import (
    format_run_error,
    format_settings_error,
    render_config_error_panel,
    render_run_error_panel,
)
from lfbl_racing.api.settings import SettingsError
from lfbl_racing.experiments.artifacts import RunReport
from lfbl_racing.experiments.commands import summary_rows
from lfbl_racing.experiments.inspect_results import inspect_run

logger = logging.getLogger(__name__)
console = Console()

_RUN_COMMANDS = {
    "plan": "Solve the reference trajectory for the scenario.",
    "baseline": "Track the plan with the nominal linearizing controller.",
    "train": "Learn a correction policy and compare it with the baseline.",
    "eval": "Evaluate a saved policy, optionally through the prenet actuator chain.",
    "prenet": "Collect actuator data and train the inverse actuator network.",
    "plot": "Write SVG path and learning-curve plots from existing artifacts.",
}


def _configure_logging(verbose: bool) -> None:
    """Configure root logging for CLI runs."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--config",
        default="config.yaml",
        help="Path to YAML config file (default: config.yaml).",
    )
    common.add_argument(
        "--verbose",
        action="store_true",
        help="Enable debug logging.",
    )
    return common


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lfbl-racing",
        description="Learned feedback linearization experiments for a kinematic bicycle.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    common = _common_parser()

    for name, help_text in _RUN_COMMANDS.items():
        sub = subparsers.add_parser(name, parents=[common], help=help_text, description=help_text)
        sub.add_argument("--seed", type=int, help="Override trainer.seed and prenet.seed.")
        sub.add_argument("--out", help="Override the output directory.")
        sub.add_argument(
            "--drift",
            choices=["exact", "as_printed"],
            default=None,
            help="Override controller.drift_form.",
        )
        if name == "eval":
            sub.add_argument(
                "--policy",
                help="Policy weights file (default: <output_dir>/policy.json).",
            )
            sub.add_argument(
                "--use-prenet",
                action="store_true",
                help="Route the acceleration command through the prenet and actuator.",
            )
            sub.add_argument(
                "--prenet",
                help="Prenet weights file (default: <output_dir>/prenet.json).",
            )

    init = subparsers.add_parser(
        "init", parents=[common], help="Write an annotated default config file."
    )
    init.add_argument(
        "--overwrite",
        action="store_true",
        help="Replace the config file if it already exists.",
    )

    inspect = subparsers.add_parser(
        "inspect", parents=[common], help="Summarize the artifacts of a run directory."
    )
    inspect.add_argument("--out", help="Output directory to inspect (default: from config).")
    return parser


def _print_report(report: RunReport) -> None:
    table = Table(title=f"{report.command} summary", show_header=False)
    table.add_column("metric", style="cyan")
    table.add_column("value", justify="right")
    for label, value in summary_rows(report):
        table.add_row(label, value)
    console.print(table)


def _run(args: argparse.Namespace) -> int:
    config_path = Path(args.config).resolve()
    if args.command == "init":
        path = create_config(config_path, overwrite=args.overwrite)
        console.print(f"[green]✓[/green] Wrote config: [bold]{path}[/bold]")
        return 0

    if args.command == "inspect":
        inspect_run(config_path=None if args.out else config_path, output_dir=args.out)
        return 0

    console.print(f"[green]✓[/green] Loaded config: [bold]{config_path}[/bold]")
    console.print(f"[cyan]Command:[/cyan] {args.command}")
    report = run_from_config(
        config_path,
        command=args.command,
        seed=args.seed,
        output_dir=args.out,
        drift_form=args.drift,
        policy_path=getattr(args, "policy", None),
        use_prenet=getattr(args, "use_prenet", False),
        prenet_path=getattr(args, "prenet", None),
    )
    _print_report(report)
    if report.diverged:
        console.print(f"[yellow]Diverged rollouts:[/yellow] {', '.join(report.diverged)}")
        return 1
    return 0


def main(argv: list[str] | None = None) -> int:
    """Entry point for `lfbl-racing`."""
    parser = _build_parser()
    args = parser.parse_args(argv)

    _configure_logging(args.verbose)

    try:
        console.rule("[bold cyan]LFBL racing[/bold cyan]")
        exit_code = _run(args)
        if exit_code == 0:
            console.print("[bold green]Completed successfully[/bold green]")
        return exit_code
    except (SettingsError, ValueError) as exc:
        if isinstance(exc, SettingsError):
            error_config_path = exc.config_path or Path(args.config).resolve()
            message = format_settings_error(exc, config_path=error_config_path)
        else:
            message = str(exc)
        console.print(render_config_error_panel(message))
        logger.error("Configuration error")
        if args.verbose:
            logger.error("Configuration details: %s", message)
        return 2
    except LfblError as exc:
        console.print(render_run_error_panel(format_run_error(exc)))
        logger.error("%s failed: %s", args.command, exc)
        return 1
    except Exception as exc:  # noqa: BLE001
        console.print(f"[bold red]{args.command} failed:[/bold red] {exc}")
        logger.exception("%s failed: %s", args.command, exc)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
