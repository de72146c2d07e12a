"""
Report assembly: metric CSV merge, sample grids (binary PGM plus PNG), summary table and JSON.
"""
import csv
import json
import logging
import math
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from PIL import Image

from palp_lab.models.metrics import METRIC_COLUMNS, REQUIRED_METRIC_COLUMNS, MetricRow

logger = logging.getLogger(__name__)

SEPARATOR = 0.5
SUMMARY_COLUMNS = ("Run", "Mode", "Step", "Style", "Class", "Background", "Target", "Image-Alignment")


class ReportError(ValueError):
    pass


def write_metrics_csv(rows: Iterable[MetricRow], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=METRIC_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row.to_row())
    return path


def read_metrics_csv(path: str | Path) -> list[MetricRow]:
    path = Path(path)
    with path.open(newline="") as handle:
        reader = csv.DictReader(handle)
        missing = [column for column in REQUIRED_METRIC_COLUMNS if column not in (reader.fieldnames or ())]
        if missing:
            raise ReportError(f"{path} is missing metric columns: {', '.join(missing)}")
        rows = []
        for record in reader:
            values = {key: value for key, value in record.items() if key in METRIC_COLUMNS and value != ""}
            rows.append(MetricRow.model_validate(values))
    return rows


def merge_metrics(paths: Sequence[str | Path], out_path: str | Path) -> list[MetricRow]:
    """Concatenates trainer CSVs in the given order; no inputs gives a header-only file."""
    rows = [row for path in paths for row in read_metrics_csv(path)]
    write_metrics_csv(rows, out_path)
    return rows


def render_grid(images: np.ndarray, cols: int = 8) -> np.ndarray:
    """
    Tiles (n, h, w) images row-major with 1-pixel separators.

    Returns:
        Array of shape (rows*h + rows - 1, cols*w + cols - 1)
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 3 or images.shape[0] == 0:
        raise ValueError(f"Expected a non-empty (n, h, w) stack, got {images.shape}")
    n, h, w = images.shape
    cols = max(1, min(cols, n))
    rows = math.ceil(n / cols)
    grid = np.full((rows * h + rows - 1, cols * w + cols - 1), SEPARATOR)
    for i, image in enumerate(images):
        r, c = divmod(i, cols)
        grid[r * (h + 1):r * (h + 1) + h, c * (w + 1):c * (w + 1) + w] = image
    return grid


def _to_bytes(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_pgm(image: np.ndarray, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pixels = _to_bytes(image)
    header = f"P5\n{pixels.shape[1]} {pixels.shape[0]}\n255\n".encode("ascii")
    path.write_bytes(header + pixels.tobytes())
    return path


def write_png(image: np.ndarray, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(_to_bytes(image)).save(path)
    return path


def write_grid(images: np.ndarray, stem: str | Path, cols: int = 8, png: bool = True) -> list[Path]:
    grid = render_grid(images, cols)
    stem = Path(stem)
    paths = [write_pgm(grid, stem.with_suffix(".pgm"))]
    if png:
        paths.append(write_png(grid, stem.with_suffix(".png")))
    return paths


def summary_rows(rows: Sequence[MetricRow]) -> list[dict]:
    """
    One row per run at its last recorded step.

    Background stands in for the ambiance columns of a full text-to-image evaluation.
    """
    last: dict[str, MetricRow] = {}
    for row in rows:
        if row.run_id not in last or row.step >= last[row.run_id].step:
            last[row.run_id] = row
    return [
        {
            "Run": row.run_id,
            "Mode": row.mode,
            "Step": row.step,
            "Style": row.text_style,
            "Class": row.text_class,
            "Background": row.text_background,
            "Target": row.text_align,
            "Image-Alignment": row.subject_sim,
        }
        for row in last.values()
    ]


def _cell(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.3f}"
    return str(value)


def summary_table(rows: Sequence[MetricRow]) -> str:
    """Markdown table with the summary columns."""
    lines = [
        "| " + " | ".join(SUMMARY_COLUMNS) + " |",
        "|" + "|".join("---" for _ in SUMMARY_COLUMNS) + "|",
    ]
    for record in summary_rows(rows):
        lines.append("| " + " | ".join(_cell(record[column]) for column in SUMMARY_COLUMNS) + " |")
    return "\n".join(lines) + "\n"


def write_summary_json(rows: Sequence[MetricRow], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    summary = {record["Run"]: record for record in summary_rows(rows)}
    path.write_text(json.dumps(summary, indent=2, sort_keys=True))
    return path


def report(
        metric_paths: Sequence[str | Path],
        out_dir: str | Path,
        grids: Mapping[str, np.ndarray] | None = None,
        png: bool = True,
) -> list[Path]:
    """
    Merges run CSVs and writes metrics.csv, summary.md, summary.json and grids/<name>.pgm|png.

    Args:
        metric_paths: trainer CSV files
        out_dir: report directory
        grids: name -> (n, 16, 16) sample stack, 8 samples per grid row
        png: also re-encode grids as PNG

    Returns:
        Paths of every written artifact
    """
    out_dir = Path(out_dir)
    rows = merge_metrics(metric_paths, out_dir / "metrics.csv")
    summary_md = out_dir / "summary.md"
    summary_md.write_text(summary_table(rows))
    paths = [out_dir / "metrics.csv", summary_md, write_summary_json(rows, out_dir / "summary.json")]
    for name, images in (grids or {}).items():
        paths.extend(write_grid(images, out_dir / "grids" / name, png=png))
    logger.info("Report with %d metric rows written to %s", len(rows), out_dir)
    return paths
