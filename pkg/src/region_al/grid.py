"""Grid primitives shared by the region selection methods.

All per-cell data lives in numpy arrays of shape ``(map_height, map_width)``,
indexed ``[y, x]``. Map cell ``(x, y)`` covers the half-open slide-pixel
square ``[x*stride, (x+1)*stride) x [y*stride, (y+1)*stride)``, so cell
coverage tiles the slide without overlap and coordinate round-trips are
unambiguous.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

__all__ = [
    "GridError",
    "GridGeometry",
    "MapRect",
    "Region",
    "ProbabilityGrid",
    "PriorityGrid",
    "IntegralTable",
    "informativeness",
    "build_integral",
    "median_filter_3x3",
    "percentile_threshold",
    "connected_component",
    "map_to_slide",
    "slide_to_map",
    "tissue_fraction",
    "rasterize_regions",
]

# 8-connectivity structuring element for component labelling
_CONN8 = np.ones((3, 3), dtype=bool)


class GridError(ValueError):
    """Invalid grid input: bad values, out-of-bounds rectangles, bad shapes."""


@dataclass(frozen=True)
class GridGeometry:
    """Slide dimensions plus the stride that discretizes them into map cells."""

    slide_width: int
    slide_height: int
    map_stride: int = 256

    def __post_init__(self):
        if self.map_stride < 1:
            raise GridError(f"map_stride must be >= 1, got {self.map_stride}")
        if self.slide_width < 1 or self.slide_height < 1:
            raise GridError(
                f"slide dimensions must be >= 1, got "
                f"{self.slide_width}x{self.slide_height}"
            )

    @property
    def map_width(self) -> int:
        return -(-self.slide_width // self.map_stride)

    @property
    def map_height(self) -> int:
        return -(-self.slide_height // self.map_stride)

    @property
    def map_shape(self) -> tuple[int, int]:
        """Array shape (map_height, map_width)."""
        return (self.map_height, self.map_width)

    @classmethod
    def from_map_size(cls, map_width: int, map_height: int,
                      map_stride: int = 256) -> "GridGeometry":
        """Geometry whose slide exactly tiles into map_width x map_height cells."""
        return cls(map_width * map_stride, map_height * map_stride, map_stride)


@dataclass(frozen=True)
class MapRect:
    """Axis-aligned cell rectangle [x, x+w) x [y, y+h) in map coordinates."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise GridError(f"rectangle sides must be >= 1, got {self.w}x{self.h}")

    @property
    def x1(self) -> int:
        return self.x + self.w

    @property
    def y1(self) -> int:
        return self.y + self.h

    @property
    def area(self) -> int:
        return self.w * self.h

    def intersects(self, other: "MapRect") -> bool:
        """Open-interior test: rectangles sharing only an edge do not intersect."""
        return (self.x < other.x1 and other.x < self.x1
                and self.y < other.y1 and other.y < self.y1)

    def contains_cell(self, x: int, y: int) -> bool:
        return self.x <= x < self.x1 and self.y <= y < self.y1


@dataclass(frozen=True)
class Region:
    """Axis-aligned slide-pixel rectangle stored as center plus size."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise GridError(f"region sides must be positive, got {self.w}x{self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h

    def bounds(self) -> tuple[float, float, float, float]:
        """(x0, y0, x1, y1) slide-pixel bounds."""
        return (self.cx - self.w / 2.0, self.cy - self.h / 2.0,
                self.cx + self.w / 2.0, self.cy + self.h / 2.0)


def _validate_unit_values(values: np.ndarray, what: str) -> None:
    bad = ~np.isfinite(values)
    if bad.any():
        y, x = np.argwhere(bad)[0]
        raise GridError(f"{what} has non-finite value at cell (x={x}, y={y}): "
                        f"{values[y, x]!r}")
    if values.size and (values.min() < 0.0 or values.max() > 1.0):
        out = (values < 0.0) | (values > 1.0)
        y, x = np.argwhere(out)[0]
        raise GridError(f"{what} outside [0, 1] at cell (x={x}, y={y}): "
                        f"{values[y, x]!r}")


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


class ProbabilityGrid:
    """Per-cell probabilities in [0, 1] at map resolution."""

    def __init__(self, geometry: GridGeometry, values: np.ndarray):
        values = np.asarray(values, dtype=np.float64)
        if values.shape != geometry.map_shape:
            raise GridError(f"values shape {values.shape} does not match map "
                            f"shape {geometry.map_shape}")
        _validate_unit_values(values, "probability grid")
        self.geometry = geometry
        self.values = _freeze(values.copy())


class PriorityGrid:
    """Per-cell priorities in [0, 1] plus the tissue mask they live on."""

    def __init__(self, geometry: GridGeometry, values: np.ndarray,
                 tissue: np.ndarray):
        values = np.asarray(values, dtype=np.float64)
        tissue = np.asarray(tissue, dtype=bool)
        if values.shape != geometry.map_shape:
            raise GridError(f"values shape {values.shape} does not match map "
                            f"shape {geometry.map_shape}")
        if tissue.shape != values.shape:
            raise GridError(f"tissue shape {tissue.shape} does not match values "
                            f"shape {values.shape}")
        _validate_unit_values(values, "priority grid")
        self.geometry = geometry
        self.values = _freeze(values.copy())
        self.tissue = _freeze(tissue.copy())

    @classmethod
    def from_probabilities(cls, probabilities: ProbabilityGrid,
                           tissue: np.ndarray) -> "PriorityGrid":
        return cls(probabilities.geometry, informativeness(probabilities.values),
                   tissue)


def informativeness(values: np.ndarray) -> np.ndarray:
    """Map probabilities to priorities: cells near 0.5 score highest.

    Computes ``1 - 2 * |p - 0.5|`` per cell, which is 1 at p = 0.5 and falls
    linearly to 0 at p = 0 and p = 1.
    """
    values = np.asarray(values, dtype=np.float64)
    bad = ~np.isfinite(values)
    if bad.any():
        y, x = np.argwhere(bad)[0]
        raise GridError(f"non-finite probability at cell (x={x}, y={y}): "
                        f"{values[y, x]!r}")
    return 1.0 - 2.0 * np.abs(values - 0.5)


class IntegralTable:
    """Summed-area table giving O(1) rectangle sums over a 2-D grid.

    The table has shape (h+1, w+1) with a zero first row and column;
    ``table[y, x]`` is the sum of all cells with coordinates below (x, y).
    Accumulation is row-major, so sums over integer-valued grids are exact.
    """

    def __init__(self, values: np.ndarray):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2:
            raise GridError(f"expected a 2-D grid, got ndim={values.ndim}")
        if not np.isfinite(values).all():
            raise GridError("grid contains non-finite values")
        h, w = values.shape
        table = np.zeros((h + 1, w + 1), dtype=np.float64)
        np.cumsum(values, axis=1, out=table[1:, 1:])
        np.cumsum(table[1:, 1:], axis=0, out=table[1:, 1:])
        self.table = _freeze(table)
        self.grid_shape = (h, w)

    def window_sum(self, rect: MapRect) -> float:
        """Sum of grid cells inside ``rect`` via four-corner evaluation."""
        h, w = self.grid_shape
        if rect.x < 0 or rect.y < 0:
            raise GridError(f"rectangle origin ({rect.x}, {rect.y}) below zero")
        if rect.x1 > w:
            raise GridError(f"rectangle right edge {rect.x1} exceeds grid width {w}")
        if rect.y1 > h:
            raise GridError(f"rectangle bottom edge {rect.y1} exceeds grid height {h}")
        t = self.table
        return float(t[rect.y1, rect.x1] - t[rect.y, rect.x1]
                     - t[rect.y1, rect.x] + t[rect.y, rect.x])


def build_integral(values: np.ndarray) -> IntegralTable:
    return IntegralTable(values)


def median_filter_3x3(grid: np.ndarray) -> np.ndarray:
    """3x3 median filter with clamp-to-edge borders.

    Every output cell is the median of nine samples, so the result is an
    order statistic drawn from the input values (no averaging).
    """
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2:
        raise GridError(f"expected a 2-D grid, got ndim={grid.ndim}")
    padded = np.pad(grid, 1, mode="edge")
    windows = np.lib.stride_tricks.sliding_window_view(padded, (3, 3))
    return np.median(windows, axis=(2, 3))


def _percentile_rank(percentile: float, n: int) -> int:
    """Nearest-rank index: ceil(percentile * n / 100) clamped to [1, n]."""
    rank = math.ceil(percentile * n / 100.0)
    return min(max(rank, 1), n)


def percentile_threshold(grid: np.ndarray, percentile: float,
                         domain: np.ndarray | None = None) -> float:
    """Nearest-rank percentile of grid intensities.

    ``domain`` optionally restricts the cell set (e.g. to tissue); ``None``
    uses every cell. The returned value is always an element of the grid.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if not 0.0 <= percentile <= 100.0:
        raise GridError(f"percentile must be in [0, 100], got {percentile}")
    values = grid.ravel() if domain is None else grid[np.asarray(domain, bool)]
    n = values.size
    if n == 0:
        raise GridError("percentile domain selects no cells")
    rank = _percentile_rank(percentile, n)
    return float(np.partition(values, rank - 1)[rank - 1])


def connected_component(mask: np.ndarray, seed: tuple[int, int]
                        ) -> tuple[np.ndarray, MapRect]:
    """8-connected component of ``mask`` containing ``seed`` (x, y).

    Returns the component as a boolean grid plus its tight bounding box.
    """
    mask = np.asarray(mask, dtype=bool)
    sx, sy = seed
    h, w = mask.shape
    if not (0 <= sx < w and 0 <= sy < h):
        raise GridError(f"seed (x={sx}, y={sy}) outside grid {w}x{h}")
    if not mask[sy, sx]:
        raise GridError(f"seed (x={sx}, y={sy}) is not set in the mask")
    labels, _ = ndimage.label(mask, structure=_CONN8)
    component = labels == labels[sy, sx]
    ys = np.flatnonzero(component.any(axis=1))
    xs = np.flatnonzero(component.any(axis=0))
    box = MapRect(int(xs[0]), int(ys[0]),
                  int(xs[-1] - xs[0] + 1), int(ys[-1] - ys[0] + 1))
    return component, box


def map_to_slide(rect: MapRect, geometry: GridGeometry) -> Region:
    """Convert a map rectangle to the slide-pixel region its cells cover.

    The right and bottom edges are clipped to the slide bounds, which only
    matters when the slide dimensions are not multiples of the stride.
    """
    if rect.x < 0 or rect.y < 0 or rect.x1 > geometry.map_width \
            or rect.y1 > geometry.map_height:
        raise GridError(f"map rectangle ({rect.x}, {rect.y}, {rect.w}, {rect.h}) "
                        f"outside map {geometry.map_width}x{geometry.map_height}")
    s = geometry.map_stride
    x0, y0 = rect.x * s, rect.y * s
    x1 = min(rect.x1 * s, geometry.slide_width)
    y1 = min(rect.y1 * s, geometry.slide_height)
    return Region((x0 + x1) / 2.0, (y0 + y1) / 2.0, float(x1 - x0), float(y1 - y0))


def slide_to_map(region: Region, geometry: GridGeometry) -> MapRect:
    """Smallest map rectangle covering ``region`` (floor/ceil of its edges)."""
    x0, y0, x1, y1 = region.bounds()
    if x0 < 0 or y0 < 0 or x1 > geometry.slide_width or y1 > geometry.slide_height:
        raise GridError(f"region bounds ({x0}, {y0}, {x1}, {y1}) outside slide "
                        f"{geometry.slide_width}x{geometry.slide_height}")
    s = geometry.map_stride
    mx0 = int(math.floor(x0 / s))
    my0 = int(math.floor(y0 / s))
    mx1 = int(math.ceil(x1 / s))
    my1 = int(math.ceil(y1 / s))
    mx1 = min(mx1, geometry.map_width)
    my1 = min(my1, geometry.map_height)
    return MapRect(mx0, my0, mx1 - mx0, my1 - my0)


def tissue_fraction(rect: MapRect, tissue: np.ndarray | IntegralTable) -> float:
    """Fraction of cells inside ``rect`` that are tissue.

    Accepts the boolean mask directly or a prebuilt IntegralTable over it
    (preferred when querying many rectangles).
    """
    if rect.area == 0:
        raise GridError("zero-area rectangle has no tissue fraction")
    table = tissue if isinstance(tissue, IntegralTable) \
        else IntegralTable(np.asarray(tissue, dtype=np.float64))
    return table.window_sum(rect) / rect.area


def rasterize_regions(regions, geometry: GridGeometry) -> np.ndarray:
    """Boolean map mask of all cells touched by any region in ``regions``."""
    mask = np.zeros(geometry.map_shape, dtype=bool)
    for region in regions:
        r = slide_to_map(region, geometry)
        mask[r.y:r.y1, r.x:r.x1] = True
    return mask
