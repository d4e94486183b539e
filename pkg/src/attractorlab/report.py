from __future__ import annotations

import csv
import logging
import math
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import matplotlib
import numpy as np
from matplotlib.figure import Figure

from .solver import Trajectory

log = logging.getLogger("attractorlab.report")

CSV_COLUMNS = (
    "t",
    "l2_sq",
    "h1_sq",
    "laplace_sq",
    "ht_norm_sq",
    "h1t_norm_sq",
    "delay_sup_sq",
    "a_of_lu",
    "bound_R0_sq",
)

SVG_HASH_SALT = "attractorlab"


def format_float(value: float) -> str:
    value = float(value)
    if math.isnan(value):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return format(value, ".17g")


def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return format_float(value)
    if isinstance(value, (list, tuple, np.ndarray)):
        return ",".join(format_value(item) for item in value)
    if value is None:
        return "none"
    return str(value)


def trajectory_columns(traj: Trajectory, bound_r0_sq: np.ndarray | None = None) -> dict[str, np.ndarray]:
    pointwise = traj.norm_series()
    windows = traj.window_norms()
    count = traj.times.shape[0]
    bound = np.full(count, np.nan) if bound_r0_sq is None else np.asarray(bound_r0_sq, dtype=float)[:count]
    return {
        "t": traj.times,
        "l2_sq": pointwise["l2_sq"],
        "h1_sq": pointwise["h1_sq"],
        "laplace_sq": pointwise["laplace_sq"],
        "ht_norm_sq": pointwise["ht_sq"],
        "h1t_norm_sq": pointwise["h1t_sq"],
        "delay_sup_sq": windows["ht_sq"],
        "a_of_lu": traj.a_values,
        "bound_R0_sq": bound,
    }


def write_trajectory_csv(path: str | Path, traj: Trajectory, bound_r0_sq: np.ndarray | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = trajectory_columns(traj, bound_r0_sq)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in zip(*(columns[name] for name in CSV_COLUMNS)):
            writer.writerow([format_float(value) for value in row])
    log.info("wrote %s rows to %s", traj.times.shape[0], path)
    return path


def write_report_file(
    path: str | Path,
    title: str,
    fields: Mapping[str, Any],
    verdicts: Mapping[str, bool],
    notes: Iterable[str] = (),
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines: list[str] = [f"# {title}", ""]
    for key, value in fields.items():
        lines.append(f"{key}: {format_value(value)}")
    lines.append("")
    lines.append("## Notes")
    notes = list(notes)
    if not notes:
        lines.append("- none")
    for note in notes:
        lines.append(f"- {note}")
    lines.append("")
    lines.append("## Verdicts")
    for name, passed in verdicts.items():
        lines.append(f"{name}: {'pass' if passed else 'fail'}")
    overall = all(verdicts.values())
    lines.append(f"overall: {'pass' if overall else 'fail'}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    log.info("wrote report %s (overall %s)", path, "pass" if overall else "fail")
    return path


def write_svg(
    path: str | Path,
    series: Mapping[str, np.ndarray],
    columns: Sequence[str],
    log_scale: bool = False,
    title: str | None = None,
    x: str = "t",
) -> Path:
    """Static line plot of the chosen columns against ``x``."""
    missing = [name for name in (x, *columns) if name not in series]
    if missing:
        raise KeyError(f"unknown column(s): {', '.join(missing)}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig = Figure(figsize=(7.0, 4.0))
    ax = fig.add_subplot()
    for name in columns:
        values = np.asarray(series[name], dtype=float)
        if log_scale:
            values = np.where(values > 0, values, np.nan)
        ax.plot(series[x], values, label=name, linewidth=1.2)
    if log_scale:
        ax.set_yscale("log")
    ax.set_xlabel(x)
    ax.grid(True, alpha=0.3)
    ax.legend(loc="best")
    if title:
        ax.set_title(title)
    with matplotlib.rc_context({"svg.hashsalt": SVG_HASH_SALT, "svg.fonttype": "none"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    log.info("wrote plot %s", path)
    return path
