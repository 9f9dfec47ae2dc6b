"""
Writes run reports to disk: one CSV of sample rows, a JSON summary and two-column
plot data files, one per curve.
"""

import csv
import json
import logging
import math
import re
from pathlib import Path

from app.models import RunReport, to_native

logger = logging.getLogger(__name__)

FORMATS = ("csv", "json", "dat")


def format_number(value) -> str:
    """17 significant digits, '.' decimal separator; ints and strings pass through."""
    value = to_native(value)
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return f"{value:.17g}"
    return str(value)


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name).strip("_") or "curve"


def write_csv(report: RunReport, path: Path) -> Path:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(report.columns)
        for row in report.rows:
            writer.writerow([format_number(v) for v in row])
    return path


def write_json(report: RunReport, path: Path) -> Path:
    with open(path, "w", newline="\n") as f:
        json.dump(report.model_dump(mode="json"), f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def write_curves(report: RunReport, directory: Path) -> list[Path]:
    paths = []
    for curve in report.curves:
        path = directory / f"{report.experiment}_{_slug(curve.name)}.dat"
        with open(path, "w", newline="\n") as f:
            f.write(f"# {curve.x_label} {curve.y_label}\n")
            for x, y in zip(curve.x, curve.y, strict=True):
                f.write(f"{format_number(float(x))} {format_number(float(y))}\n")
        paths.append(path)
    return paths


def emit(report: RunReport, output_dir: str | Path, formats=FORMATS) -> list[Path]:
    """
    Write the report files.

    Args:
        report: Finished run report
        output_dir: Directory, created if missing
        formats: Any of "csv", "json", "dat"

    Returns:
        Paths written, in csv/json/dat order

    Raises:
        OSError: the directory or a file cannot be written; the message names the path
    """
    unknown = set(formats) - set(FORMATS)
    if unknown:
        raise ValueError(f"unknown formats {sorted(unknown)}")
    directory = Path(output_dir)
    written: list[Path] = []
    target = directory
    try:
        directory.mkdir(parents=True, exist_ok=True)
        if "csv" in formats:
            target = directory / f"{report.experiment}.csv"
            written.append(write_csv(report, target))
        if "json" in formats:
            target = directory / f"{report.experiment}.json"
            written.append(write_json(report, target))
        if "dat" in formats:
            target = directory
            written.extend(write_curves(report, directory))
    except OSError as e:
        logger.error(f"Failed writing {target}: {e}")
        raise OSError(e.errno, f"cannot write report file {target}: {e.strerror}") from e
    logger.info(f"Wrote {len(written)} files to {directory}")
    return written


def load_report(path: str | Path) -> RunReport:
    """Re-read a JSON summary."""
    with open(path) as f:
        return RunReport.model_validate(json.load(f))
