"""Surrogate patch classifier working at map-cell granularity.

Each class of annotated cells is summarized by a small codebook of
feature-bin centroids plus a robust spread; prediction contrasts the
distances to the nearest centroid of either class through a logistic. The
codebook only claims feature regions it has seen annotated, so cells in
unseen parts of the feature range stay uncertain (or get attributed to the
nearer class) until examples arrive; a class with no annotated cells at
all contributes a constant unit distance, making the fully uninformed
learner predict 0.5 on tissue.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np
from scipy.special import expit

from .grid import ProbabilityGrid

if TYPE_CHECKING:
    from .experiment import AnnotationState
    from .synthetic import SyntheticSlide

__all__ = ["ClassStats", "SurrogateLearner", "fit_learner", "predict"]

# codebook resolution: one centroid per occupied feature bin of this width,
# kept only when the bin holds enough cells to be trusted. The absolute
# floor makes a bin claimable only by concentrated annotation (most of a
# blob), not by diffuse partial hits, and the fractional floor keeps noise
# tails of a large class from claiming bins that belong to the other class.
_BIN_WIDTH = 0.015
_MIN_BIN_COUNT = 260
_MIN_BIN_FRACTION = 0.0003
# spread from this central quantile span of residuals, scaled for a normal
_SPREAD_QUANTILES = (0.16, 0.84)
_SPREAD_SCALE = 2.0
_MIN_SCALE = 0.012
# a centroid vouches for features within this many spreads; farther cells
# are off the class's support and the distance saturates
_REACH_SPREADS = 3.0


@dataclass(frozen=True)
class ClassStats:
    centers: tuple[float, ...]
    spread: float


@dataclass(frozen=True)
class SurrogateLearner:
    """Nearest-centroid distance contrast with bounded reach.

    Distances are normalized so that 1.0 means "beyond the class's reach";
    a cell outside both supports therefore scores 0.5, maximally uncertain,
    regardless of how the rest of the feature axis is laid out.
    """

    steepness: float = 6.0
    negative: ClassStats | None = None
    positive: ClassStats | None = None

    def _reach(self) -> float:
        spreads = [s.spread for s in (self.negative, self.positive)
                   if s is not None]
        scale = max(float(np.mean(spreads)), _MIN_SCALE) if spreads else 1.0
        return _REACH_SPREADS * scale

    @staticmethod
    def _distance(features: np.ndarray, stats: ClassStats | None,
                  reach: float) -> np.ndarray:
        if stats is None:
            return np.ones_like(features)
        centers = np.asarray(stats.centers)
        gaps = np.abs(features[..., None] - centers).min(axis=-1)
        return np.minimum(gaps / reach, 1.0)

    def predict_values(self, features: np.ndarray,
                       tissue: np.ndarray) -> np.ndarray:
        """Tumor probability per cell; background cells are forced to 0."""
        features = np.asarray(features, dtype=np.float64)
        reach = self._reach()
        d_neg = self._distance(features, self.negative, reach)
        d_pos = self._distance(features, self.positive, reach)
        probs = expit(self.steepness * (d_neg - d_pos))
        probs[~np.asarray(tissue, dtype=bool)] = 0.0
        return probs


def _class_stats(values: np.ndarray) -> ClassStats | None:
    if values.size == 0:
        return None
    bins = np.floor(values / _BIN_WIDTH).astype(np.int64)
    uniq, inverse, counts = np.unique(bins, return_inverse=True,
                                      return_counts=True)
    floor = max(_MIN_BIN_COUNT, int(_MIN_BIN_FRACTION * values.size))
    if values.size < 4 * _MIN_BIN_COUNT:
        # tiny samples (early cycles) still deserve a coarse model
        floor = max(15, values.size // 4)
    keep = counts >= floor
    if keep.any():
        sums = np.bincount(inverse, weights=values, minlength=len(uniq))
        centers = tuple(float(c) for c in (sums / counts)[keep])
    else:
        centers = (float(np.median(values)),)
    center_arr = np.asarray(centers)
    residuals = values - center_arr[np.abs(values[:, None]
                                           - center_arr).argmin(axis=1)]
    q_lo, q_hi = np.quantile(residuals, _SPREAD_QUANTILES)
    spread = max(float(q_hi - q_lo) / _SPREAD_SCALE, _MIN_SCALE)
    return ClassStats(centers, spread)


def fit_learner(base: SurrogateLearner, slides: Sequence["SyntheticSlide"],
                state: "AnnotationState") -> SurrogateLearner:
    """Fit class codebooks on the annotated cells of ``slides``.

    Only cells covered by annotated regions are touched; their labels come
    from the slide ground truth (background cells count as negative).
    """
    pos_parts: list[np.ndarray] = []
    neg_parts: list[np.ndarray] = []
    for slide in slides:
        mask = state.mask(slide.slide_id, slide.geometry)
        if not mask.any():
            continue
        feats = slide.features[mask]
        labels = slide.tumor[mask]
        pos_parts.append(feats[labels])
        neg_parts.append(feats[~labels])
    pos = np.concatenate(pos_parts) if pos_parts else np.empty(0)
    neg = np.concatenate(neg_parts) if neg_parts else np.empty(0)
    return SurrogateLearner(steepness=base.steepness,
                            negative=_class_stats(neg),
                            positive=_class_stats(pos))


def predict(learner: SurrogateLearner, slide: "SyntheticSlide") -> ProbabilityGrid:
    """Per-cell tumor probabilities for one slide."""
    values = learner.predict_values(slide.features, slide.tissue)
    return ProbabilityGrid(slide.geometry, values)
