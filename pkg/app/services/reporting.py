"""Report files for a finished campaign.

Layout under the output directory::

    runs/run_<index>_<estimator>.csv   per-epoch time series
    summary.json                       versioned campaign summary
    summary.txt                        plain-text table of final errors
    figures/*.csv                      plot-ready series across runs
"""
import json
import logging
import os
from typing import Dict, List

import numpy as np
import pandas as pd

from app.exceptions import ReportIOError
from app.services.campaign import SERIES_COLUMNS, SUMMARY_ROWS, Campaign

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
_FLOAT_FORMAT = "%.9g"

#: Figure files and the series columns they aggregate across runs.
FIGURES = {
    "attitude_error": ["err_yaw_deg", "err_pitch_deg", "err_roll_deg"],
    "initial_attitude_error": ["init_err_yaw_deg", "init_err_pitch_deg", "init_err_roll_deg"],
    "accel_bias": ["ba_x", "ba_y", "ba_z"],
    "gyro_bias": ["bg_x", "bg_y", "bg_z"],
    "lever_arm_error": ["lever_err_x_mm", "lever_err_y_mm", "lever_err_z_mm"],
}


def _format_cell(mean: List, std: List) -> str:
    parts = []
    for m, s in zip(mean, std):
        if m is None:
            parts.append("n/a")
        elif s is None:
            parts.append(f"{m:.3g}")
        else:
            parts.append(f"{m:.3g}±{s:.2g}")
    return "[" + " ".join(parts) + "]"


def summary_table(summary: Dict[str, Dict]) -> str:
    """Plain-text table with one column per estimator and one row per quantity."""
    names = sorted(summary)
    labels = [label for label, *_ in SUMMARY_ROWS]
    width = max(len(label) for label in labels) + 2
    lines = ["Final estimate errors (mean±1σ across runs)", "",
             " " * width + "".join(f"{name:<36}" for name in names)]
    for label in labels:
        cells = [_format_cell(summary[name][label]["mean"], summary[name][label]["std"]) for name in names]
        lines.append(f"{label:<{width}}" + "".join(f"{cell:<36}" for cell in cells))
    lines.append("")
    lines.append("Axes: attitude yaw, pitch, roll; other rows body x, y, z.")
    return "\n".join(lines) + "\n"


def figure_frames(campaign: Campaign) -> Dict[str, pd.DataFrame]:
    """Mean and standard deviation across runs of each reported series, per estimator."""
    frames: Dict[str, pd.DataFrame] = {}
    series = []
    for report in campaign.reports:
        for name, track in report.tracks.items():
            frame = track.frame()
            frame.insert(0, "estimator", name)
            frame.insert(0, "run", report.run_index)
            series.append(frame)
    combined = pd.concat(series, ignore_index=True)

    for figure, columns in FIGURES.items():
        grouped = combined.groupby(["estimator", "t"], sort=True)[columns]
        mean = grouped.mean().add_suffix("_mean")
        std = grouped.std(ddof=1).add_suffix("_std")
        frames[figure] = pd.concat([mean, std], axis=1).reset_index()

    objective = combined[combined["estimator"] != "ekf"].sort_values(["estimator", "run", "t"])
    frames["objective"] = (objective.groupby(["estimator", "run"], sort=True)
                           [["objective", "objective_at_truth"]].last().reset_index())
    return frames


def _summary_document(campaign: Campaign) -> Dict:
    ratios = [report.earth_rate_ratio for report in campaign.reports]
    return {
        "schema_version": SCHEMA_VERSION,
        "runs": len(campaign.reports),
        "seeds": [report.seed for report in campaign.reports],
        "axes": {label: list(axes) for label, _, _, axes in SUMMARY_ROWS},
        "estimators": campaign.summary,
        "earth_rate_ratio_max": float(np.max(ratios)),
        "config": campaign.config.model_dump(mode="json"),
    }


def emit_report(campaign: Campaign, output_dir: str) -> List[str]:
    """Write every report file of ``campaign`` under ``output_dir``.

    Returns:
        Paths of the written files.

    Raises:
        ReportIOError: If the campaign holds no runs (nothing is written) or
            a file cannot be written.
    """
    if not campaign.reports or not campaign.summary:
        raise ReportIOError("campaign has no completed runs to report")

    written: List[str] = []
    try:
        runs_dir = os.path.join(output_dir, "runs")
        figures_dir = os.path.join(output_dir, "figures")
        os.makedirs(runs_dir, exist_ok=True)
        os.makedirs(figures_dir, exist_ok=True)

        for report in campaign.reports:
            for name, track in report.tracks.items():
                path = os.path.join(runs_dir, f"run_{report.run_index:03d}_{name}.csv")
                track.frame().to_csv(path, index=False, columns=SERIES_COLUMNS, float_format=_FLOAT_FORMAT)
                written.append(path)

        path = os.path.join(output_dir, "summary.json")
        with open(path, "w", encoding="utf-8") as f:
            json.dump(_summary_document(campaign), f, indent=2, ensure_ascii=False)
        written.append(path)

        path = os.path.join(output_dir, "summary.txt")
        with open(path, "w", encoding="utf-8") as f:
            f.write(summary_table(campaign.summary))
        written.append(path)

        for figure, frame in figure_frames(campaign).items():
            path = os.path.join(figures_dir, f"{figure}.csv")
            frame.to_csv(path, index=False, float_format=_FLOAT_FORMAT)
            written.append(path)
    except OSError as e:
        raise ReportIOError(f"could not write report to {output_dir}: {e}") from e

    logger.info("Wrote %d report files to %s", len(written), output_dir)
    return written
