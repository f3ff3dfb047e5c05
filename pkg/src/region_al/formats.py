"""On-disk formats: binary float grids plus delimited region/metrics tables.

Grid files ("PFG1") carry a 20-byte little-endian header (magic, map width,
map height, map stride, value kind) followed by row-major float32 payload.
Region lists and metrics are comma-delimited text with a mandatory header
row, "." decimal separator, and newline line endings. All writers are
atomic (write to a temp file, then rename) and all formats round-trip
byte-exactly.
"""

from __future__ import annotations

import csv
import io
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grid import GridGeometry

__all__ = [
    "FormatError",
    "GRID_KINDS",
    "read_grid",
    "write_grid",
    "RegionRecord",
    "read_region_list",
    "write_region_list",
    "MetricsRecord",
    "read_metrics",
    "write_metrics",
    "atomic_write_bytes",
]

MAGIC = b"PFG1"
_HEADER = struct.Struct("<4sIIII")
GRID_KINDS = ("probability", "priority", "mask", "feature")
# cap on payload size so corrupt headers fail fast
_MAX_CELLS = 1 << 28

REGION_FIELDS = ("slide_id", "cycle", "method", "cx", "cy", "w", "h",
                 "score_or_percentile", "fallback")
METRICS_FIELDS = ("repetition", "cycle", "annotated_tissue_pct", "miou_tumor")


class FormatError(ValueError):
    """Malformed or inconsistent file content."""


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_grid(path, values: np.ndarray, geometry: GridGeometry,
               kind: str) -> None:
    """Serialize a grid; values must match the geometry's map shape."""
    if kind not in GRID_KINDS:
        raise FormatError(f"unknown grid kind {kind!r}, expected one of "
                          f"{GRID_KINDS}")
    values = np.asarray(values, dtype=np.float32)
    if values.shape != geometry.map_shape:
        raise FormatError(f"values shape {values.shape} does not match map "
                          f"shape {geometry.map_shape}")
    if not np.isfinite(values).all():
        raise FormatError("grid payload contains non-finite values")
    if kind == "mask" and not np.isin(values, (0.0, 1.0)).all():
        raise FormatError("mask grid values must be exactly 0.0 or 1.0")
    header = _HEADER.pack(MAGIC, geometry.map_width, geometry.map_height,
                          geometry.map_stride, GRID_KINDS.index(kind))
    payload = np.ascontiguousarray(values, dtype="<f4").tobytes()
    atomic_write_bytes(path, header + payload)


def read_grid(path) -> tuple[np.ndarray, GridGeometry, str]:
    """Load a grid file; returns (float32 values, geometry, kind).

    The reconstructed geometry assumes a fully tiled slide of
    map_width*stride x map_height*stride pixels.
    """
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size or data[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic, not a PFG1 grid file")
    _, width, height, stride, kind_code = _HEADER.unpack_from(data)
    if width < 1 or height < 1 or stride < 1 or width * height > _MAX_CELLS:
        raise FormatError(f"{path}: dimension overflow in header "
                          f"({width}x{height}, stride {stride})")
    if kind_code >= len(GRID_KINDS):
        raise FormatError(f"{path}: unknown grid kind code {kind_code}")
    kind = GRID_KINDS[kind_code]
    expected = _HEADER.size + width * height * 4
    if len(data) != expected:
        raise FormatError(f"{path}: truncated payload, expected {expected} "
                          f"bytes, got {len(data)}")
    values = np.frombuffer(data, dtype="<f4", offset=_HEADER.size)
    values = values.reshape(height, width).copy()
    if kind == "mask" and not np.isin(values, (0.0, 1.0)).all():
        raise FormatError(f"{path}: mask grid contains values other than 0/1")
    geometry = GridGeometry.from_map_size(width, height, stride)
    return values, geometry, kind


def _fmt_float(value: float | None) -> str:
    return "" if value is None else repr(float(value))


def _parse_float(text: str, what: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise FormatError(f"bad {what} value {text!r}") from None


@dataclass(frozen=True)
class RegionRecord:
    slide_id: str
    cycle: int
    method: str
    cx: float
    cy: float
    w: float
    h: float
    score_or_percentile: float | None = None
    fallback: bool = False


def write_region_list(path, records) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REGION_FIELDS)
    for r in records:
        writer.writerow([r.slide_id, r.cycle, r.method,
                         _fmt_float(r.cx), _fmt_float(r.cy),
                         _fmt_float(r.w), _fmt_float(r.h),
                         _fmt_float(r.score_or_percentile),
                         int(r.fallback)])
    atomic_write_bytes(path, buf.getvalue().encode("utf-8"))


def read_region_list(path) -> list[RegionRecord]:
    text = Path(path).read_text(encoding="utf-8")
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != REGION_FIELDS:
        raise FormatError(f"{path}: missing or wrong region-list header, "
                          f"expected {','.join(REGION_FIELDS)}")
    records = []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(REGION_FIELDS):
            raise FormatError(f"{path}: line {i}: expected "
                              f"{len(REGION_FIELDS)} fields, got {len(row)}")
        score = None if row[7] == "" else _parse_float(row[7], "score")
        records.append(RegionRecord(
            slide_id=row[0], cycle=int(row[1]), method=row[2],
            cx=_parse_float(row[3], "cx"), cy=_parse_float(row[4], "cy"),
            w=_parse_float(row[5], "w"), h=_parse_float(row[6], "h"),
            score_or_percentile=score, fallback=row[8] == "1"))
    return records


@dataclass(frozen=True)
class MetricsRecord:
    repetition: int
    cycle: int
    annotated_tissue_pct: float
    miou_tumor: float


def write_metrics(path, records) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRICS_FIELDS)
    for r in records:
        writer.writerow([r.repetition, r.cycle,
                         _fmt_float(r.annotated_tissue_pct),
                         _fmt_float(r.miou_tumor)])
    atomic_write_bytes(path, buf.getvalue().encode("utf-8"))


def read_metrics(path) -> list[MetricsRecord]:
    text = Path(path).read_text(encoding="utf-8")
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != METRICS_FIELDS:
        raise FormatError(f"{path}: missing or wrong metrics header, expected "
                          f"{','.join(METRICS_FIELDS)}")
    records = []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(METRICS_FIELDS):
            raise FormatError(f"{path}: line {i}: expected "
                              f"{len(METRICS_FIELDS)} fields, got {len(row)}")
        records.append(MetricsRecord(
            repetition=int(row[0]), cycle=int(row[1]),
            annotated_tissue_pct=_parse_float(row[2], "annotated_tissue_pct"),
            miou_tumor=_parse_float(row[3], "miou_tumor")))
    return records
