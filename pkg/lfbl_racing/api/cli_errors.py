from __future__ import annotations

from pathlib import Path

from pydantic import ValidationError
from rich.panel import Panel

from lfbl_racing._exceptions import EpisodeDivergedError, InfeasibleError, LfblError
from lfbl_racing.api.settings import SettingsError


def describe_validation_error(exc: ValidationError, *, file_name: str = "config.yaml") -> str:
    """One bullet per invalid field, then placeholders for the missing ones."""
    lines = [f"Invalid configuration in {file_name}:"]
    placeholders: list[str] = []
    for err in exc.errors(include_url=False):
        loc = [str(part) for part in err.get("loc", ())]
        lines.append(f"• {'.'.join(loc) or '<root>'}: {err.get('msg', 'Invalid value')}")
        # settings sections are one level deep
        if err.get("type") == "missing" and len(loc) == 2:
            placeholders += [f"{loc[0]}:", f"  {loc[1]}: <required>"]
    if placeholders:
        lines += ["", "Example config.yaml snippet:", *placeholders]
    lines += ["", "Run `lfbl-racing init` for a commented config with every default."]
    return "\n".join(lines)


def format_settings_error(exc: SettingsError, *, config_path: Path) -> str:
    """Format settings-related errors for user-facing CLI output."""
    if exc.validation_error is not None:
        return describe_validation_error(exc.validation_error, file_name=str(config_path))
    return str(exc)


def format_run_error(exc: LfblError) -> str:
    """One-paragraph explanation of a failed command with a hint where one applies."""
    message = str(exc)
    if isinstance(exc, InfeasibleError):
        return (
            f"{message}\n\nThe plan cannot reach scenario.xf under planner.v_bnds. "
            "Loosen the bound, lengthen scenario.horizon_s or move the target."
        )
    if isinstance(exc, EpisodeDivergedError):
        steps = len(exc.record.steps) if exc.record is not None else 0
        return f"{message}\n\nThe rollout left the valid region after {steps} step(s)."
    return message


def render_config_error_panel(message: str) -> Panel:
    """Render a Rich panel for configuration errors."""
    return Panel.fit(message, title="Configuration error", border_style="red")


def render_run_error_panel(message: str) -> Panel:
    """Render a Rich panel for command failures."""
    return Panel.fit(message, title="Run failed", border_style="red")
