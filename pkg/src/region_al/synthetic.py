"""Synthetic slide pool: tissue blobs, tumor blobs, and a feature surface.

Each slide is generated from a single seed: tissue is a thresholded sum of
radial bumps, tumor is a union of disks rooted at tissue cells, and the
feature surface is a class-dependent level plus spatially correlated noise.

Besides ordinary tissue, every slide carries a few distractor blobs of
non-tumor tissue whose feature level sits between the normal and tumor
levels. The level is drawn per slide from a continuum, so a learner only
stops confusing distractors with tumor once it has seen annotated examples
covering that part of the feature range; these blobs are what keeps an
annotation campaign informative after the easy structure is learned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .grid import GridError, GridGeometry, _freeze

__all__ = ["GeneratorConfig", "SyntheticSlide", "generate_slide", "generate_pool"]


@dataclass(frozen=True)
class GeneratorConfig:
    map_width: int = 128
    map_height: int = 128
    map_stride: int = 256
    tissue_blob_range: tuple[int, int] = (3, 6)
    tissue_radius_range: tuple[float, float] = (0.12, 0.30)  # fraction of min dim
    tissue_level: float = 0.30
    tumor_blob_range: tuple[int, int] = (1, 3)
    tumor_radius_range: tuple[float, float] = (3.0, 12.0)    # cells
    tumor_free_fraction: float = 0.0
    distractor_blob_range: tuple[int, int] = (4, 6)
    distractor_radius_range: tuple[float, float] = (5.0, 9.0)
    distractor_levels_easy: tuple[float, float] = (0.42, 0.52)
    distractor_levels_hard: tuple[float, float] = (0.58, 0.74)
    distractor_hard_fraction: float = 0.18     # level = top - span * v**skew, v ~ U(0,1)
    feature_normal: float = 0.20
    feature_tumor: float = 0.80
    blob_level_jitter: float = 0.004
    cell_noise_sd: float = 0.012
    field_noise_sd: float = 0.010
    field_corr: float = 6.0

    def __post_init__(self):
        if self.map_width < 8 or self.map_height < 8:
            raise GridError(f"map dimensions too small: "
                            f"{self.map_width}x{self.map_height}")
        min_dim = min(self.map_width, self.map_height)
        if self.tissue_radius_range[1] >= 0.5:
            raise GridError(f"tissue blob radius fraction "
                            f"{self.tissue_radius_range[1]} must stay below 0.5")
        for name, radius in (("tumor", self.tumor_radius_range[1]),
                             ("distractor", self.distractor_radius_range[1])):
            if radius >= min_dim / 2.0:
                raise GridError(f"{name} blob radius {radius} too large for a "
                                f"{min_dim}-cell map")
        if not 0.0 <= self.tumor_free_fraction <= 1.0:
            raise GridError("tumor_free_fraction must be in [0, 1]")

    @property
    def geometry(self) -> GridGeometry:
        return GridGeometry.from_map_size(self.map_width, self.map_height,
                                          self.map_stride)


@dataclass(frozen=True)
class SyntheticSlide:
    slide_id: str
    geometry: GridGeometry
    features: np.ndarray
    tumor: np.ndarray
    tissue: np.ndarray

    @property
    def tumor_fraction(self) -> float:
        """Tumor cells as a fraction of tissue cells."""
        tissue = int(self.tissue.sum())
        return float(self.tumor.sum()) / tissue if tissue else 0.0

    @property
    def has_tumor(self) -> bool:
        return bool(self.tumor.any())


def _radial_bumps(rng: np.random.Generator, shape: tuple[int, int],
                  n_blobs: int, radius_range: tuple[float, float]) -> np.ndarray:
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    field = np.zeros(shape, dtype=np.float64)
    for _ in range(n_blobs):
        cx = rng.uniform(0, w)
        cy = rng.uniform(0, h)
        r = rng.uniform(*radius_range)
        d2 = (xx - cx) ** 2 + (yy - cy) ** 2
        field += np.exp(-d2 / (2.0 * r * r))
    return field


def _disk_blobs(rng: np.random.Generator, allowed: np.ndarray, n_blobs: int,
                radius_range: tuple[float, float], map_width: int
                ) -> list[np.ndarray]:
    """Disks rooted at cells of ``allowed``, clipped to it; log-uniform radii."""
    h, w = allowed.shape
    yy, xx = np.mgrid[0:h, 0:w]
    cells = np.flatnonzero(allowed)
    log_lo, log_hi = math.log(radius_range[0]), math.log(radius_range[1])
    blobs = []
    for _ in range(n_blobs):
        center = int(cells[rng.integers(len(cells))])
        cy, cx = divmod(center, map_width)
        r = math.exp(rng.uniform(log_lo, log_hi))
        blobs.append((((xx - cx) ** 2 + (yy - cy) ** 2) <= r * r) & allowed)
    return blobs


def generate_slide(cfg: GeneratorConfig, slide_seed, slide_id: str
                   ) -> SyntheticSlide:
    """One slide, a pure function of (cfg, slide_seed)."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(slide_seed)))
    shape = (cfg.map_height, cfg.map_width)
    min_dim = min(cfg.map_width, cfg.map_height)

    n_tissue = int(rng.integers(cfg.tissue_blob_range[0],
                                cfg.tissue_blob_range[1] + 1))
    radius_range = (cfg.tissue_radius_range[0] * min_dim,
                    cfg.tissue_radius_range[1] * min_dim)
    field = _radial_bumps(rng, shape, n_tissue, radius_range)
    tissue = field >= cfg.tissue_level * field.max()

    levels = np.full(shape, cfg.feature_normal, dtype=np.float64)
    tumor = np.zeros(shape, dtype=bool)
    tumor_free = rng.uniform() < cfg.tumor_free_fraction
    if not tumor_free:
        n_tumor = int(rng.integers(cfg.tumor_blob_range[0],
                                   cfg.tumor_blob_range[1] + 1))
        for blob in _disk_blobs(rng, tissue, n_tumor, cfg.tumor_radius_range,
                                cfg.map_width):
            level = cfg.feature_tumor + rng.normal(0.0, cfg.blob_level_jitter)
            tumor |= blob
            levels[blob] = level

    # distractors: non-tumor tissue at a slide-specific intermediate level;
    # a small fraction of slides carries hard mimics close to the tumor band
    hard = rng.uniform() < cfg.distractor_hard_fraction
    band = cfg.distractor_levels_hard if hard else cfg.distractor_levels_easy
    distractor_level = float(rng.uniform(*band))
    n_distractor = int(rng.integers(cfg.distractor_blob_range[0],
                                    cfg.distractor_blob_range[1] + 1))
    for blob in _disk_blobs(rng, tissue, n_distractor,
                            cfg.distractor_radius_range, cfg.map_width):
        blob = blob & ~tumor
        levels[blob] = distractor_level + rng.normal(0.0, cfg.blob_level_jitter)

    smooth = ndimage.gaussian_filter(rng.standard_normal(shape), cfg.field_corr)
    sd = smooth.std()
    if sd > 0:
        smooth /= sd
    features = (levels + cfg.field_noise_sd * smooth
                + cfg.cell_noise_sd * rng.standard_normal(shape))

    return SyntheticSlide(slide_id, cfg.geometry, _freeze(features),
                          _freeze(tumor), _freeze(tissue))


def generate_pool(cfg: GeneratorConfig, count: int, seed: int,
                  id_prefix: str = "slide") -> list[SyntheticSlide]:
    """Deterministic pool of ``count`` slides; slide i is seeded by (seed, i)."""
    if count < 1:
        raise GridError(f"pool size must be >= 1, got {count}")
    return [generate_slide(cfg, [seed, i], f"{id_prefix}_{i:04d}")
            for i in range(count)]
