from __future__ import annotations

import logging
from pathlib import Path
from typing import Any

import duckdb

from lfbl_racing.api.settings import load_settings
from lfbl_racing.experiments import artifacts

logger = logging.getLogger(__name__)

_TRAJECTORY_FILES = {
    "baseline": artifacts.BASELINE_CSV,
    "learned": artifacts.LEARNED_CSV,
    "eval": artifacts.EVAL_CSV,
    "eval_prenet": artifacts.EVAL_PRENET_CSV,
}


def _resolve_output_dir(
    *, config_path: str | Path | None, output_dir: str | Path | None
) -> Path:
    if output_dir is not None:
        resolved = Path(output_dir).resolve()
    elif config_path is not None:
        resolved = load_settings(config_path).paths.output_dir
    else:
        raise ValueError("Either config_path or output_dir is required")
    if not resolved.is_dir():
        raise FileNotFoundError(f"Output directory not found: {resolved}")
    return resolved


def _csv_sql(path: Path) -> str:
    return f"read_csv_auto('{path.as_posix()}', header=true)"


def get_learning_curve(
    con: duckdb.DuckDBPyConnection,
    *,
    config_path: str | Path | None = None,
    output_dir: str | Path | None = None,
) -> duckdb.DuckDBPyRelation:
    """Load the learning curve written by ``train``."""
    out = _resolve_output_dir(config_path=config_path, output_dir=output_dir)
    path = out / artifacts.CURVE_CSV
    if not path.exists():
        raise FileNotFoundError(f"No learning curve in {out}")
    return con.sql(f"SELECT * FROM {_csv_sql(path)} ORDER BY epoch")


def get_curve_statistics(
    con: duckdb.DuckDBPyConnection,
    *,
    config_path: str | Path | None = None,
    output_dir: str | Path | None = None,
) -> dict[str, float | int | None]:
    """Epoch counts and return extremes of the learning curve."""
    out = _resolve_output_dir(config_path=config_path, output_dir=output_dir)
    path = out / artifacts.CURVE_CSV
    if not path.exists():
        raise FileNotFoundError(f"No learning curve in {out}")

    stats = con.sql(f"""
        WITH curve AS (SELECT * FROM {_csv_sql(path)})
        SELECT
            COUNT(*) AS epochs,
            COUNT(*) FILTER (WHERE CAST(aborted AS BOOLEAN)) AS aborted_epochs,
            MAX(best_return) AS best_return,
            arg_max(epoch, mean_return) AS best_epoch,
            MIN(mean_return) AS worst_return,
            AVG(mean_pointwise_loss) AS mean_pointwise_loss
        FROM curve
    """).fetchone()

    if not stats:
        return {"epochs": 0, "aborted_epochs": 0}

    def _float(value: Any) -> float | None:
        return None if value is None else float(value)

    return {
        "epochs": int(stats[0] or 0),
        "aborted_epochs": int(stats[1] or 0),
        "best_return": _float(stats[2]),
        "best_epoch": None if stats[3] is None else int(stats[3]),
        "worst_return": _float(stats[4]),
        "mean_pointwise_loss": _float(stats[5]),
    }


def get_trajectory_statistics(
    con: duckdb.DuckDBPyConnection,
    *,
    config_path: str | Path | None = None,
    output_dir: str | Path | None = None,
) -> dict[str, dict[str, float | int | None]]:
    """Return, loss and final-position error of each trajectory CSV present."""
    out = _resolve_output_dir(config_path=config_path, output_dir=output_dir)
    plan_path = out / artifacts.PLAN_CSV
    final_ref: tuple[float, float] | None = None
    if plan_path.exists():
        row = con.sql(
            f"SELECT x, y FROM {_csv_sql(plan_path)} ORDER BY k DESC LIMIT 1"
        ).fetchone()
        final_ref = (float(row[0]), float(row[1])) if row else None

    summary: dict[str, dict[str, float | int | None]] = {}
    for label, name in _TRAJECTORY_FILES.items():
        path = out / name
        if not path.exists():
            continue
        row = con.sql(f"""
            SELECT
                COUNT(*) AS states,
                SUM(reward) AS episode_return,
                AVG(loss) AS mean_loss,
                MAX(loss) AS max_loss,
                arg_max(x, k) AS final_x,
                arg_max(y, k) AS final_y
            FROM {_csv_sql(path)}
        """).fetchone()
        stats: dict[str, float | int | None] = {
            "states": int(row[0] or 0),
            "episode_return": None if row[1] is None else float(row[1]),
            "mean_loss": None if row[2] is None else float(row[2]),
            "max_loss": None if row[3] is None else float(row[3]),
        }
        if final_ref is not None and row[4] is not None:
            dx, dy = float(row[4]) - final_ref[0], float(row[5]) - final_ref[1]
            stats["final_position_error"] = (dx * dx + dy * dy) ** 0.5
        summary[label] = stats
    return summary


def inspect_run(
    *,
    config_path: str | Path | None = "config.yaml",
    output_dir: str | Path | None = None,
    show: bool = True,
) -> dict[str, Any]:
    """Summarize every artifact in a run directory.

    Reports found in the directory are read back as well, so the summary also
    carries the headline returns of each command that has been run there.
    """
    out = _resolve_output_dir(config_path=config_path, output_dir=output_dir)
    with duckdb.connect() as con:
        curve = None
        if (out / artifacts.CURVE_CSV).exists():
            curve = get_curve_statistics(con, output_dir=out)
        trajectories = get_trajectory_statistics(con, output_dir=out)
        reports = {
            path.stem.removesuffix("_report"): artifacts.read_report(path)
            for path in sorted(out.glob("*_report.json"))
        }

        if show:
            logger.info("Output directory: %s", out)
            logger.info("Reports: %s", ", ".join(reports) or "none")
            if curve is not None:
                logger.info(
                    "Learning curve: %d epochs (%d aborted), best return %s at epoch %s",
                    curve["epochs"],
                    curve["aborted_epochs"],
                    curve["best_return"],
                    curve["best_epoch"],
                )
            for label, stats in trajectories.items():
                logger.info("Trajectory %s: %s", label, stats)
            if curve is not None:
                get_learning_curve(con, output_dir=out).limit(10).show(max_width=10_000)

    return {
        "output_dir": out,
        "curve": curve,
        "trajectories": trajectories,
        "reports": reports,
    }
