"""On-disk formats: field CSVs, loss history, density images and run summaries."""

from __future__ import annotations

import csv
import io
import logging
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np

from flowtopo.grid import Grid

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"


def _fmt(value: Any) -> str:
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return FLOAT_FORMAT % float(value)


# ── Field CSV ────────────────────────────────────────────────


def write_field_csv(path: str | Path, field: np.ndarray, grid: Grid) -> Path:
    """Header ``nx,ny,dx,dy``, its values, then one row per x index with ny values."""
    field = np.asarray(field, dtype=np.float64)
    if field.shape != grid.shape:
        raise ValueError(f"Field shape {field.shape} does not match grid {grid.shape}")
    buffer = io.StringIO()
    buffer.write("nx,ny,dx,dy\n")
    buffer.write(f"{grid.nx},{grid.ny},{_fmt(grid.dx)},{_fmt(grid.dy)}\n")
    np.savetxt(buffer, field, fmt=FLOAT_FORMAT, delimiter=",")
    path = Path(path)
    path.write_text(buffer.getvalue(), encoding="utf-8")
    return path


def read_field_csv(path: str | Path) -> tuple[np.ndarray, dict[str, float]]:
    with open(path, encoding="utf-8") as f:
        names = f.readline().strip().split(",")
        values = f.readline().strip().split(",")
        meta = {name: float(value) for name, value in zip(names, values, strict=True)}
        field = np.loadtxt(f, delimiter=",", ndmin=2)
    expected = (int(meta["nx"]), int(meta["ny"]))
    if field.shape != expected:
        raise ValueError(f"{path}: expected {expected} values, found {field.shape}")
    return field, meta


# ── Loss history ─────────────────────────────────────────────


def write_history_csv(path: str | Path, rows: Iterable[Mapping[str, Any]]) -> Path:
    rows = list(rows)
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as f:
        if not rows:
            return path
        writer = csv.writer(f, lineterminator="\n")
        columns = list(rows[0])
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[name]) for name in columns])
    return path


def read_history_csv(path: str | Path) -> list[dict[str, float]]:
    with open(path, encoding="utf-8", newline="") as f:
        return [{name: float(value) for name, value in row.items()} for row in csv.DictReader(f)]


# ── Density image ────────────────────────────────────────────


def write_pgm(path: str | Path, rho: np.ndarray) -> Path:
    """Binary graymap, 0 = solid, 255 = fluid, first row at the top of the domain."""
    rho = np.asarray(rho, dtype=np.float64)
    pixels = np.rint(np.clip(rho, 0.0, 1.0) * 255.0).astype(np.uint8)
    image = np.ascontiguousarray(pixels[:, ::-1].T)
    height, width = image.shape
    path = Path(path)
    path.write_bytes(f"P5\n{width} {height}\n255\n".encode("ascii") + image.tobytes())
    return path


def read_pgm(path: str | Path) -> np.ndarray:
    """Inverse of ``write_pgm``: returns bytes indexed ``[i, j]`` like the density field."""
    raw = Path(path).read_bytes()
    magic, size, maxval, body = raw.split(b"\n", 3)
    width, height = (int(n) for n in size.split())
    if magic != b"P5" or int(maxval) != 255:
        raise ValueError(f"{path}: not an 8-bit binary graymap")
    image = np.frombuffer(body, dtype=np.uint8, count=width * height).reshape(height, width)
    return image.T[:, ::-1].copy()


# ── Summary files ────────────────────────────────────────────


def write_summary(path: str | Path, values: Mapping[str, Any]) -> Path:
    lines = []
    for key, value in values.items():
        if isinstance(value, float):
            value = FLOAT_FORMAT % value
        lines.append(f"{key}={value}")
    path = Path(path)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_summary(path: str | Path) -> dict[str, str]:
    result = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if "=" in line:
            key, value = line.split("=", 1)
            result[key] = value
    return result
