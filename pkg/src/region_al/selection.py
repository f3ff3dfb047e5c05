"""Region selection methods over priority grids.

Four methods share one calling convention: given a priority grid, the
regions already annotated on that slide, and a SelectionConfig, each
proposes up to ``count`` new regions.

* random: uniform draws of fixed squares with a tissue floor.
* standard: sliding fixed square maximizing summed priority, greedy NMS.
* standard_nonsquare: standard over a set of equal-area aspect ratios.
* adaptive: peak finding plus a percentile bisection that fits a bounding
  box around the informative component, yielding variable-size regions.

Determinism contract: every tie is broken toward the lowest (y, x) cell,
then the lowest candidate-shape index. Outputs are pure functions of
(grid, annotated regions, config).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .grid import (
    GridGeometry,
    IntegralTable,
    MapRect,
    PriorityGrid,
    Region,
    connected_component,
    map_to_slide,
    median_filter_3x3,
    percentile_threshold,
    slide_to_map,
)

__all__ = [
    "METHODS",
    "SelectionConfig",
    "SelectionError",
    "CandidateShape",
    "RegionPick",
    "SelectionOutcome",
    "enumerate_candidates",
    "nms_disjoint",
    "select_random",
    "select_standard",
    "select_standard_nonsquare",
    "select_adaptive",
    "select_regions",
]

METHODS = ("random", "standard", "standard_nonsquare", "adaptive")

# rejection-sampling budget for the random method, draws per region
RANDOM_DRAW_BUDGET = 10_000


class SelectionError(ValueError):
    """Raised when a selection cannot run on the given grid/config."""


@dataclass(frozen=True)
class SelectionConfig:
    """Knobs shared by all selection methods.

    ``side`` is the nominal region side in slide pixels and must be a
    positive multiple of the grid's map stride. ``area_bounds`` defaults to
    [(side/2)^2, (3*side/2)^2] slide px^2, the admissible range for adaptive
    bounding boxes.
    """

    method: str
    side: int
    count: int
    min_tissue: float = 0.10
    percentile_range: tuple[float, float] = (98.0, 100.0)
    area_bounds: tuple[float, float] | None = None
    bisection_max_iters: int = 20
    bisection_tol: float = 0.01
    allow_oversample: bool = False
    rng_seed: int = 0
    percentile_domain: str = "all"

    def __post_init__(self):
        if self.method not in METHODS:
            raise SelectionError(f"unknown method {self.method!r}, "
                                 f"expected one of {METHODS}")
        if self.side < 1:
            raise SelectionError(f"side must be positive, got {self.side}")
        if self.count < 1:
            raise SelectionError(f"count must be >= 1, got {self.count}")
        if not 0.0 <= self.min_tissue <= 1.0:
            raise SelectionError(f"min_tissue must be in [0, 1], got {self.min_tissue}")
        lo, hi = self.percentile_range
        if not (0.0 <= lo < hi <= 100.0):
            raise SelectionError(f"percentile_range must satisfy "
                                 f"0 <= low < high <= 100, got {self.percentile_range}")
        if self.area_bounds is not None:
            amin, amax = self.area_bounds
            if not amin < amax:
                raise SelectionError(f"area_bounds must satisfy min < max, "
                                     f"got {self.area_bounds}")
        if self.bisection_max_iters < 1:
            raise SelectionError("bisection_max_iters must be >= 1")
        if self.bisection_tol <= 0:
            raise SelectionError("bisection_tol must be positive")
        if self.percentile_domain not in ("all", "tissue"):
            raise SelectionError(f"percentile_domain must be 'all' or 'tissue', "
                                 f"got {self.percentile_domain!r}")

    @property
    def resolved_area_bounds(self) -> tuple[float, float]:
        if self.area_bounds is not None:
            return self.area_bounds
        return ((self.side / 2.0) ** 2, (3.0 * self.side / 2.0) ** 2)


@dataclass(frozen=True)
class CandidateShape:
    """Window size in slide pixels; w*h is the nominal area up to rounding."""

    w: int
    h: int


@dataclass(frozen=True)
class RegionPick:
    """One selected region plus per-method diagnostics."""

    region: Region
    score: float | None = None          # summed priority (standard variants)
    peak: tuple[int, int] | None = None  # priority argmax cell (adaptive)
    percentile: float | None = None      # final threshold percentile (adaptive)
    iterations: int | None = None        # bisection probes used (adaptive)
    fallback: bool = False               # box did not satisfy the area bounds


@dataclass(frozen=True)
class SelectionOutcome:
    picks: tuple[RegionPick, ...] = ()
    exhausted: bool = False

    @property
    def regions(self) -> list[Region]:
        return [p.region for p in self.picks]


def _map_side(cfg: SelectionConfig, geometry: GridGeometry) -> int:
    if cfg.side % geometry.map_stride != 0:
        raise SelectionError(f"region side {cfg.side} is not a multiple of "
                             f"map_stride {geometry.map_stride}")
    return cfg.side // geometry.map_stride


def _annotated_rects(annotated: Sequence[Region],
                     geometry: GridGeometry) -> list[MapRect]:
    return [slide_to_map(r, geometry) for r in annotated]


def enumerate_candidates(side: int, map_stride: int) -> list[CandidateShape]:
    """Equal-area window shapes: widths side/2..side, heights side^2/width.

    Widths step by ``map_stride``; heights are rounded half-up to the map
    grid. Both orientations are included and exact duplicates (the square)
    removed, preserving enumeration order: tall shapes by ascending width,
    then their transposes.
    """
    if map_stride < 1:
        raise SelectionError(f"map_stride must be >= 1, got {map_stride}")
    if side % map_stride != 0:
        raise SelectionError(f"side {side} is not a multiple of map_stride "
                             f"{map_stride}")
    if side < 2 * map_stride:
        raise SelectionError(f"side {side} too small for width range "
                             f"[side/2, side] at stride {map_stride}")
    target = side * side
    widths = range(side // 2, side + 1, map_stride)
    shapes: list[CandidateShape] = []
    seen: set[tuple[int, int]] = set()
    for w in widths:
        h = ((target + (w * map_stride) // 2) // (w * map_stride)) * map_stride
        if (w, h) not in seen:
            seen.add((w, h))
            shapes.append(CandidateShape(w, h))
    for shape in list(shapes):
        t = (shape.h, shape.w)
        if t not in seen:
            seen.add(t)
            shapes.append(CandidateShape(*t))
    return shapes


def nms_disjoint(candidates: Iterable[tuple[MapRect, float]], count: int,
                 forbidden: Sequence[MapRect] = ()) -> list[MapRect]:
    """Greedy non-maximum suppression over score-ordered rectangles.

    Accepts each candidate in the given order unless it intersects an
    already accepted or forbidden rectangle (open-interior test, so shared
    edges are fine). Stops after ``count`` acceptances.
    """
    picked: list[MapRect] = []
    for rect, _score in candidates:
        if len(picked) >= count:
            break
        if any(rect.intersects(q) for q in picked):
            continue
        if any(rect.intersects(q) for q in forbidden):
            continue
        picked.append(rect)
    return picked


def select_random(grid: PriorityGrid, annotated: Sequence[Region],
                  cfg: SelectionConfig) -> SelectionOutcome:
    """Uniform draws of side x side squares meeting the tissue floor.

    Positions are drawn on the map lattice; each accepted region must not
    intersect earlier picks, nor previously annotated regions unless
    oversampling is allowed. Each region slot gets RANDOM_DRAW_BUDGET draws
    before the slide is declared exhausted.
    """
    geometry = grid.geometry
    side = _map_side(cfg, geometry)
    mh, mw = geometry.map_shape
    forbidden = [] if cfg.allow_oversample else _annotated_rects(annotated, geometry)
    tissue_table = IntegralTable(grid.tissue.astype(np.float64))
    t = tissue_table.table
    rng = np.random.Generator(np.random.PCG64(cfg.rng_seed))
    picks: list[RegionPick] = []
    picked_rects: list[MapRect] = []
    exhausted = False
    cells = side * side
    for _ in range(cfg.count):
        if side > mw or side > mh:
            exhausted = True
            break
        xs = rng.integers(0, mw - side + 1, size=RANDOM_DRAW_BUDGET)
        ys = rng.integers(0, mh - side + 1, size=RANDOM_DRAW_BUDGET)
        fractions = (t[ys + side, xs + side] - t[ys, xs + side]
                     - t[ys + side, xs] + t[ys, xs]) / cells
        accepted = None
        for i in np.flatnonzero(fractions >= cfg.min_tissue):
            rect = MapRect(int(xs[i]), int(ys[i]), side, side)
            if any(rect.intersects(q) for q in picked_rects):
                continue
            if any(rect.intersects(q) for q in forbidden):
                continue
            accepted = rect
            break
        if accepted is None:
            exhausted = True
            break
        picked_rects.append(accepted)
        picks.append(RegionPick(map_to_slide(accepted, geometry)))
    return SelectionOutcome(tuple(picks), exhausted)


def _shape_cells(shapes: Sequence[CandidateShape],
                 geometry: GridGeometry) -> list[tuple[int, int]]:
    s = geometry.map_stride
    out = []
    for shape in shapes:
        if shape.w % s or shape.h % s:
            raise SelectionError(f"candidate shape {shape.w}x{shape.h} not on "
                                 f"the map grid (stride {s})")
        out.append((shape.w // s, shape.h // s))
    return out


def _greedy_window_selection(grid: PriorityGrid, annotated: Sequence[Region],
                             cfg: SelectionConfig,
                             shapes: Sequence[CandidateShape]) -> SelectionOutcome:
    """Greedy max-sum window selection with non-maximum suppression.

    Scores every (position, shape) candidate through one integral table and
    repeatedly takes the global maximum, masking out positions that would
    intersect an accepted or forbidden rectangle. Equivalent to sorting all
    candidates by (score desc, y, x, shape index) and filtering greedily,
    without materializing the candidate pool.
    """
    geometry = grid.geometry
    mh, mw = geometry.map_shape
    cell_shapes = _shape_cells(shapes, geometry)
    if not any(wc <= mw and hc <= mh for wc, hc in cell_shapes):
        raise SelectionError(f"grid {mw}x{mh} smaller than every candidate window")

    values = np.array(grid.values)
    rects = _annotated_rects(annotated, geometry)
    if not cfg.allow_oversample:
        for r in rects:
            values[r.y:r.y1, r.x:r.x1] = 0.0
    table = IntegralTable(values).table

    score_maps: list[np.ndarray | None] = []
    for wc, hc in cell_shapes:
        if wc > mw or hc > mh:
            score_maps.append(None)
            continue
        scores = (table[hc:, wc:] + table[:mh - hc + 1, :mw - wc + 1]
                  - table[:mh - hc + 1, wc:] - table[hc:, :mw - wc + 1]).copy()
        score_maps.append(scores)

    def mask_overlaps(rect: MapRect) -> None:
        for (wc, hc), scores in zip(cell_shapes, score_maps):
            if scores is None:
                continue
            y0 = max(rect.y - hc + 1, 0)
            x0 = max(rect.x - wc + 1, 0)
            scores[y0:rect.y1, x0:rect.x1] = -np.inf

    if not cfg.allow_oversample:
        for r in rects:
            mask_overlaps(r)

    picks: list[RegionPick] = []
    exhausted = False
    for _ in range(cfg.count):
        best = None  # (score, y, x, shape_index)
        for si, scores in enumerate(score_maps):
            if scores is None or scores.size == 0:
                continue
            flat = int(np.argmax(scores))
            score = scores.flat[flat]
            if score == -np.inf:
                continue
            y, x = divmod(flat, scores.shape[1])
            key = (y, x, si)
            if best is None or score > best[0] or \
                    (score == best[0] and key < best[1:]):
                best = (score, y, x, si)
        if best is None:
            exhausted = True
            break
        score, y, x, si = best
        wc, hc = cell_shapes[si]
        rect = MapRect(x, y, wc, hc)
        mask_overlaps(rect)
        picks.append(RegionPick(map_to_slide(rect, geometry), score=float(score)))
    return SelectionOutcome(tuple(picks), exhausted)


def select_standard(grid: PriorityGrid, annotated: Sequence[Region],
                    cfg: SelectionConfig) -> SelectionOutcome:
    """Sliding side x side window maximizing summed priority, with NMS.

    Priorities of previously annotated cells are zeroed before scoring
    (skipped when oversampling), and the stride is one map cell.
    """
    geometry = grid.geometry
    side = _map_side(cfg, geometry)
    mh, mw = geometry.map_shape
    if side > mw or side > mh:
        raise SelectionError(f"window of {side} cells does not fit grid {mw}x{mh}")
    shape = CandidateShape(cfg.side, cfg.side)
    return _greedy_window_selection(grid, annotated, cfg, [shape])


def select_standard_nonsquare(grid: PriorityGrid, annotated: Sequence[Region],
                              cfg: SelectionConfig) -> SelectionOutcome:
    """Standard method pooled over every equal-area candidate shape."""
    geometry = grid.geometry
    side = _map_side(cfg, geometry)
    mh, mw = geometry.map_shape
    if side > mw or side > mh:
        raise SelectionError(f"window of {side} cells does not fit grid {mw}x{mh}")
    shapes = enumerate_candidates(cfg.side, geometry.map_stride)
    return _greedy_window_selection(grid, annotated, cfg, shapes)


def _zero_rects(values: np.ndarray, rects: Sequence[MapRect]) -> None:
    for r in rects:
        values[r.y:r.y1, r.x:r.x1] = 0.0


def _component_box(filtered: np.ndarray, peak: tuple[int, int],
                   percentile: float, domain: np.ndarray | None) -> MapRect:
    """Bounding box of the 8-connected thresholded component at the peak.

    If the threshold exceeds the peak value (possible when the peak search
    skipped higher-valued zeroed cells), the component degenerates to the
    peak cell alone, which reads as a too-small box to the bisection.
    """
    threshold = percentile_threshold(filtered, percentile, domain)
    px, py = peak
    if filtered[py, px] < threshold:
        return MapRect(px, py, 1, 1)
    mask = filtered >= threshold
    _, box = connected_component(mask, peak)
    return box


def _trim_forbidden(box: MapRect, peak: tuple[int, int],
                    forbidden: Sequence[MapRect]) -> MapRect:
    """Shrink ``box`` until it intersects no forbidden rectangle.

    Each step removes one overlap by cutting the box back on a side that
    keeps the peak cell, preferring the cut that preserves the most area
    (ties resolved left, right, top, bottom). The peak never lies inside a
    forbidden rectangle, so a valid cut always exists.
    """
    px, py = peak
    while True:
        hit = next((r for r in forbidden if box.intersects(r)), None)
        if hit is None:
            return box
        options: list[MapRect] = []
        if px >= hit.x1:
            options.append(MapRect(hit.x1, box.y, box.x1 - hit.x1, box.h))
        if px < hit.x:
            options.append(MapRect(box.x, box.y, hit.x - box.x, box.h))
        if py >= hit.y1:
            options.append(MapRect(box.x, hit.y1, box.w, box.y1 - hit.y1))
        if py < hit.y:
            options.append(MapRect(box.x, box.y, box.w, hit.y - box.y))
        if not options:
            raise SelectionError("peak lies inside a forbidden rectangle")
        box = max(options, key=lambda r: r.area)


def _clip_square(peak: tuple[int, int], side_cells: int,
                 geometry: GridGeometry) -> MapRect:
    """Square of ``side_cells`` centered at the peak, translated in-bounds."""
    mh, mw = geometry.map_shape
    side_x = min(side_cells, mw)
    side_y = min(side_cells, mh)
    px, py = peak
    x = min(max(px - side_x // 2, 0), mw - side_x)
    y = min(max(py - side_y // 2, 0), mh - side_y)
    return MapRect(x, y, side_x, side_y)


def select_adaptive(grid: PriorityGrid, annotated: Sequence[Region],
                    cfg: SelectionConfig) -> SelectionOutcome:
    """Peak-seeded bounding boxes sized by a percentile bisection.

    Per region: zero the priorities of cells already selected or annotated
    (annotated zeroing is skipped when oversampling), median-filter the
    result, take the highest remaining cell as the peak, then bisect the
    threshold percentile inside ``percentile_range`` until the bounding box
    of the peak's thresholded component lands inside the area bounds.

    Failure handling: if every probe produced a too-small box the box at
    the lower percentile bound is used (accepted outright when it happens
    to satisfy the bounds); if any probe was too large, a 3*side/2 square
    clipped around the peak is used. Both paths flag the pick as fallback
    when the final area is out of bounds, as does any shrinking applied to
    keep the output disjoint from forbidden rectangles.
    """
    geometry = grid.geometry
    side = _map_side(cfg, geometry)
    min_area, max_area = cfg.resolved_area_bounds
    domain = grid.tissue if cfg.percentile_domain == "tissue" else None

    annotated_rects = _annotated_rects(annotated, geometry)
    zero_rects: list[MapRect] = [] if cfg.allow_oversample else list(annotated_rects)
    forbidden: list[MapRect] = [] if cfg.allow_oversample else list(annotated_rects)

    picks: list[RegionPick] = []
    exhausted = False
    for _ in range(cfg.count):
        values = np.array(grid.values)
        _zero_rects(values, zero_rects)
        filtered = median_filter_3x3(values)
        eligible = np.ones_like(filtered, dtype=bool)
        for r in zero_rects:
            eligible[r.y:r.y1, r.x:r.x1] = False
        peak_surface = np.where(eligible, filtered, -1.0)
        flat = int(np.argmax(peak_surface))
        py, px = divmod(flat, peak_surface.shape[1])
        if peak_surface[py, px] <= 0.0:
            exhausted = True
            break
        peak = (px, py)

        box, pct, iters, fallback = _bisect_box(
            filtered, peak, domain, cfg, geometry, side, min_area, max_area)
        box = _trim_forbidden(box, peak, forbidden)
        region = map_to_slide(box, geometry)
        if not min_area <= region.area <= max_area:
            fallback = True
        picks.append(RegionPick(region, peak=peak, percentile=pct,
                                iterations=iters, fallback=fallback))
        zero_rects.append(box)
        forbidden.append(box)
    return SelectionOutcome(tuple(picks), exhausted)


def _bisect_box(filtered: np.ndarray, peak: tuple[int, int],
                domain: np.ndarray | None, cfg: SelectionConfig,
                geometry: GridGeometry, side: int,
                min_area: float, max_area: float
                ) -> tuple[MapRect, float, int, bool]:
    """Bisection over the threshold percentile; see select_adaptive."""
    lo, hi = cfg.percentile_range
    iters = 0
    too_large_seen = False
    last_mid = lo
    while iters < cfg.bisection_max_iters and hi - lo >= cfg.bisection_tol:
        mid = 0.5 * (lo + hi)
        last_mid = mid
        iters += 1
        box = _component_box(filtered, peak, mid, domain)
        area = map_to_slide(box, geometry).area
        if area > max_area:
            too_large_seen = True
            lo = mid
        elif area < min_area:
            hi = mid
        else:
            return box, mid, iters, False
    if too_large_seen:
        clip = _clip_square(peak, (3 * side) // 2, geometry)
        return clip, last_mid, iters, True
    # every probe was too small: the box at the lower bound is the largest
    # available; take it, as a plain success if it satisfies the bounds
    iters += 1
    box = _component_box(filtered, peak, cfg.percentile_range[0], domain)
    area = map_to_slide(box, geometry).area
    fallback = not (min_area <= area <= max_area)
    return box, cfg.percentile_range[0], iters, fallback


_DISPATCH = {
    "random": select_random,
    "standard": select_standard,
    "standard_nonsquare": select_standard_nonsquare,
    "adaptive": select_adaptive,
}


def select_regions(grid: PriorityGrid, annotated: Sequence[Region],
                   cfg: SelectionConfig) -> SelectionOutcome:
    """Run the method named by ``cfg.method``."""
    return _DISPATCH[cfg.method](grid, annotated, cfg)
