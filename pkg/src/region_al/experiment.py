"""Train-select-annotate simulation over a synthetic slide pool.

Cycle 0 annotates random regions on every slide to build the initial
labeled set. Each later cycle predicts on one scheduled subset of the
pool, converts predictions to priorities, runs the configured selection
per slide, and reveals ground truth inside the selected regions. The
learner is refit after every cycle and evaluated on held-out slides.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .grid import GridError, GridGeometry, PriorityGrid, Region, informativeness, \
    rasterize_regions
from .learner import SurrogateLearner, fit_learner, predict
from .selection import SelectionConfig, SelectionOutcome, select_regions
from .synthetic import GeneratorConfig, SyntheticSlide, generate_pool

__all__ = [
    "AnnotatedRegion",
    "AnnotationState",
    "ExperimentConfig",
    "CycleRecord",
    "ExperimentLog",
    "partition_subsets",
    "scheduled_subset",
    "run_cycle",
    "evaluate",
    "annotated_tissue_pct",
    "full_annotation_reference",
    "run_experiment",
]


@dataclass(frozen=True)
class AnnotatedRegion:
    region: Region
    cycle: int


class AnnotationState:
    """Annotated regions per slide; the labeled set of the simulation.

    Area statistics always come from a mask rebuilt from the region list,
    so overlapping regions (oversampling) are never double counted.
    """

    def __init__(self):
        self._per_slide: dict[str, list[AnnotatedRegion]] = {}

    def add(self, slide_id: str, region: Region, cycle: int) -> None:
        self._per_slide.setdefault(slide_id, []).append(
            AnnotatedRegion(region, cycle))

    def entries(self, slide_id: str) -> list[AnnotatedRegion]:
        return list(self._per_slide.get(slide_id, ()))

    def regions(self, slide_id: str) -> list[Region]:
        return [e.region for e in self._per_slide.get(slide_id, ())]

    def slide_ids(self) -> list[str]:
        return list(self._per_slide)

    def mask(self, slide_id: str, geometry: GridGeometry) -> np.ndarray:
        return rasterize_regions(self.regions(slide_id), geometry)

    def copy(self) -> "AnnotationState":
        clone = AnnotationState()
        clone._per_slide = {k: list(v) for k, v in self._per_slide.items()}
        return clone


@dataclass(frozen=True)
class ExperimentConfig:
    selection: SelectionConfig
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    pool_slides: int = 50
    test_slides: int = 20
    pool_seed: int = 11
    cycles: int = 15
    subsets: int = 5
    initial_count: int | None = None    # random regions per slide at cycle 0
    repetitions: int = 3
    base_seed: int = 7
    eval_threshold: float = 0.5
    include_tumor_free: bool = False
    learner_steepness: float = 6.0

    def __post_init__(self):
        if self.cycles < 0:
            raise GridError(f"cycles must be >= 0, got {self.cycles}")
        if self.repetitions < 1:
            raise GridError(f"repetitions must be >= 1, got {self.repetitions}")
        if not 1 <= self.subsets <= self.pool_slides:
            raise GridError(f"subsets must be in [1, pool_slides], got {self.subsets}")
        if self.pool_slides < 1 or self.test_slides < 1:
            raise GridError("pool_slides and test_slides must be >= 1")


@dataclass
class CycleRecord:
    repetition: int
    cycle: int
    annotated_tissue_pct: float
    miou_tumor: float
    selections: dict[str, dict] = field(default_factory=dict)


@dataclass
class ExperimentLog:
    records: list[CycleRecord] = field(default_factory=list)
    repetition_seeds: list[int] = field(default_factory=list)
    full_annotation_miou: float | None = None
    final_states: list[AnnotationState] = field(default_factory=list)


def _derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def partition_subsets(pool: Sequence[SyntheticSlide], subsets: int,
                      seed: int) -> list[list[int]]:
    """Stratified partition of pool indices into near-equal subsets.

    Stratification key: tumor presence plus tumor-size tercile among the
    tumor slides. Strata are shuffled with a seeded generator and dealt
    round-robin, so subset sizes differ by at most one.
    """
    if not 1 <= subsets <= len(pool):
        raise GridError(f"subsets must be in [1, {len(pool)}], got {subsets}")
    tumor_idx = [i for i, s in enumerate(pool) if s.has_tumor]
    free_idx = [i for i, s in enumerate(pool) if not s.has_tumor]
    strata: list[list[int]] = []
    if tumor_idx:
        fractions = np.array([pool[i].tumor_fraction for i in tumor_idx])
        cuts = np.quantile(fractions, [1 / 3, 2 / 3])
        terciles = np.searchsorted(cuts, fractions, side="right")
        for t in range(3):
            stratum = [i for i, tc in zip(tumor_idx, terciles) if tc == t]
            if stratum:
                strata.append(stratum)
    if free_idx:
        strata.append(free_idx)
    rng = np.random.Generator(np.random.PCG64(seed))
    dealt: list[int] = []
    for stratum in strata:
        order = rng.permutation(len(stratum))
        dealt.extend(stratum[j] for j in order)
    out: list[list[int]] = [[] for _ in range(subsets)]
    for pos, idx in enumerate(dealt):
        out[pos % subsets].append(idx)
    return [sorted(group) for group in out]


def scheduled_subset(cycle: int, subsets: int) -> int:
    """Round-robin subset index for a cycle (cycles start at 1)."""
    if cycle < 1:
        raise GridError(f"cycle must be >= 1, got {cycle}")
    return (cycle - 1) % subsets


def run_cycle(pool: Sequence[SyntheticSlide], state: AnnotationState,
              learner: SurrogateLearner, cfg: ExperimentConfig, cycle: int,
              seed_salt: int = 0
              ) -> tuple[AnnotationState, dict[str, SelectionOutcome]]:
    """One selection cycle on the scheduled subset; returns the grown state.

    Ground truth inside the selected regions is revealed by appending them
    to the annotation state; selection exhaustion is recorded in the
    returned outcomes, never fatal.
    """
    groups = partition_subsets(pool, cfg.subsets, cfg.pool_seed)
    group = groups[scheduled_subset(cycle, cfg.subsets)]
    new_state = state.copy()
    outcomes: dict[str, SelectionOutcome] = {}
    for idx in group:
        slide = pool[idx]
        probabilities = predict(learner, slide)
        grid = PriorityGrid(slide.geometry,
                            informativeness(probabilities.values), slide.tissue)
        scfg = replace(cfg.selection,
                       rng_seed=_derived_seed(cfg.base_seed, seed_salt, cycle, idx))
        outcome = select_regions(grid, state.regions(slide.slide_id), scfg)
        for region in outcome.regions:
            new_state.add(slide.slide_id, region, cycle)
        outcomes[slide.slide_id] = outcome
    return new_state, outcomes


def _slide_iou(predicted: np.ndarray, truth: np.ndarray,
               tissue: np.ndarray) -> float:
    a = predicted & tissue
    b = truth & tissue
    union = int((a | b).sum())
    if union == 0:
        return 1.0
    return float((a & b).sum()) / union


def evaluate(learner: SurrogateLearner, test_slides: Sequence[SyntheticSlide],
             threshold: float = 0.5) -> float:
    """Mean IoU of thresholded predictions vs tumor, over tumor slides only."""
    ious = []
    for slide in test_slides:
        if not slide.has_tumor:
            continue
        probs = predict(learner, slide)
        ious.append(_slide_iou(probs.values >= threshold, slide.tumor,
                               slide.tissue))
    if not ious:
        raise GridError("evaluation requires at least one tumor-containing slide")
    return float(np.mean(ious))


def annotated_tissue_pct(state: AnnotationState,
                         pool: Sequence[SyntheticSlide]) -> float:
    """Annotated tissue cells as a percentage of all tissue cells in the pool."""
    annotated = 0
    tissue = 0
    for slide in pool:
        tissue += int(slide.tissue.sum())
        mask = state.mask(slide.slide_id, slide.geometry)
        annotated += int((mask & slide.tissue).sum())
    return 100.0 * annotated / tissue if tissue else 0.0


def full_annotation_reference(pool: Sequence[SyntheticSlide],
                              test_slides: Sequence[SyntheticSlide],
                              cfg: ExperimentConfig) -> float:
    """Held-out performance with the whole pool annotated: the ceiling."""
    state = AnnotationState()
    for slide in pool:
        geo = slide.geometry
        full = Region(geo.slide_width / 2.0, geo.slide_height / 2.0,
                      float(geo.slide_width), float(geo.slide_height))
        state.add(slide.slide_id, full, 0)
    learner = fit_learner(SurrogateLearner(steepness=cfg.learner_steepness),
                          pool, state)
    return evaluate(learner, test_slides, cfg.eval_threshold)


def _initialize(pool: Sequence[SyntheticSlide], cfg: ExperimentConfig,
                repetition: int) -> AnnotationState:
    state = AnnotationState()
    count = cfg.initial_count or cfg.selection.count
    for idx, slide in enumerate(pool):
        rcfg = replace(cfg.selection, method="random", count=count,
                       rng_seed=_derived_seed(cfg.base_seed, repetition, 0, idx))
        grid = PriorityGrid(slide.geometry,
                            np.zeros(slide.geometry.map_shape), slide.tissue)
        outcome = select_regions(grid, [], rcfg)
        for region in outcome.regions:
            state.add(slide.slide_id, region, 0)
    return state


def _outcome_summary(outcome: SelectionOutcome) -> dict:
    return {
        "regions": [(p.region.cx, p.region.cy, p.region.w, p.region.h)
                    for p in outcome.picks],
        "fallbacks": sum(1 for p in outcome.picks if p.fallback),
        "exhausted": outcome.exhausted,
    }


def make_pools(cfg: ExperimentConfig
               ) -> tuple[list[SyntheticSlide], list[SyntheticSlide]]:
    """Generate the AL pool and the held-out test pool for a config."""
    slides = generate_pool(cfg.generator, cfg.pool_slides + cfg.test_slides,
                           cfg.pool_seed)
    pool = slides[:cfg.pool_slides]
    test = slides[cfg.pool_slides:]
    if not cfg.include_tumor_free:
        pool = [s for s in pool if s.has_tumor]
    return pool, test


def run_experiment(cfg: ExperimentConfig, keep_states: bool = False
                   ) -> ExperimentLog:
    """Full protocol: per repetition, random initialization then AL cycles.

    Every repetition uses a distinct initial labeled set derived from
    (base_seed, repetition); the pool itself is shared. Cycle 0 records the
    post-initialization evaluation.
    """
    pool, test = make_pools(cfg)
    log = ExperimentLog()
    log.full_annotation_miou = full_annotation_reference(pool, test, cfg)
    base = SurrogateLearner(steepness=cfg.learner_steepness)
    for rep in range(cfg.repetitions):
        log.repetition_seeds.append(_derived_seed(cfg.base_seed, rep))
        state = _initialize(pool, cfg, rep)
        learner = fit_learner(base, pool, state)
        log.records.append(CycleRecord(
            rep, 0, annotated_tissue_pct(state, pool),
            evaluate(learner, test, cfg.eval_threshold)))
        for cycle in range(1, cfg.cycles + 1):
            state, outcomes = run_cycle(pool, state, learner, cfg, cycle,
                                        seed_salt=rep)
            learner = fit_learner(base, pool, state)
            log.records.append(CycleRecord(
                rep, cycle, annotated_tissue_pct(state, pool),
                evaluate(learner, test, cfg.eval_threshold),
                {sid: _outcome_summary(o) for sid, o in outcomes.items()}))
        if keep_states:
            log.final_states.append(state)
    return log
