import numpy as np
import pytest
from dataclasses import replace

from region_al.experiment import (
    AnnotationState,
    ExperimentConfig,
    annotated_tissue_pct,
    evaluate,
    full_annotation_reference,
    make_pools,
    partition_subsets,
    run_cycle,
    run_experiment,
    scheduled_subset,
)
from region_al.grid import GridError, GridGeometry, MapRect, Region, map_to_slide
from region_al.learner import SurrogateLearner, fit_learner, predict
from region_al.selection import SelectionConfig
from region_al.synthetic import GeneratorConfig, SyntheticSlide, generate_pool


def small_config(method="standard", **overrides):
    defaults = dict(
        selection=SelectionConfig(method=method, side=8 * 256, count=1),
        generator=GeneratorConfig(map_width=64, map_height=64,
                                  tumor_radius_range=(3.0, 8.0),
                                  distractor_radius_range=(3.0, 8.0)),
        pool_slides=8, test_slides=4, cycles=3, subsets=2, repetitions=1,
        base_seed=5, pool_seed=3)
    defaults.update(overrides)
    return ExperimentConfig(**defaults)


def constant_slide(level, tumor_box=None, size=16):
    geo = GridGeometry.from_map_size(size, size, 256)
    features = np.full((size, size), level)
    tumor = np.zeros((size, size), bool)
    if tumor_box:
        x0, y0, x1, y1 = tumor_box
        tumor[y0:y1, x0:x1] = True
    tissue = np.ones((size, size), bool)
    return SyntheticSlide("s", geo, features, tumor, tissue)


class TestAnnotationState:
    def test_mask_is_union(self):
        geo = GridGeometry.from_map_size(16, 16, 256)
        state = AnnotationState()
        state.add("s", map_to_slide(MapRect(0, 0, 4, 4), geo), 0)
        state.add("s", map_to_slide(MapRect(2, 2, 4, 4), geo), 1)
        mask = state.mask("s", geo)
        assert mask.sum() == 16 + 16 - 4

    def test_copy_isolated(self):
        geo = GridGeometry.from_map_size(8, 8, 256)
        state = AnnotationState()
        state.add("s", map_to_slide(MapRect(0, 0, 2, 2), geo), 0)
        clone = state.copy()
        clone.add("s", map_to_slide(MapRect(4, 4, 2, 2), geo), 1)
        assert len(state.regions("s")) == 1
        assert len(clone.regions("s")) == 2


class TestLearner:
    def test_uninformed_predicts_half_on_tissue(self):
        slide = constant_slide(0.3)
        learner = SurrogateLearner()
        probs = predict(learner, slide)
        assert np.all(probs.values == 0.5)

    def test_background_forced_to_zero(self):
        geo = GridGeometry.from_map_size(8, 8, 256)
        tissue = np.zeros((8, 8), bool)
        tissue[:4] = True
        slide = SyntheticSlide("s", geo, np.full((8, 8), 0.5),
                              np.zeros((8, 8), bool), tissue)
        probs = predict(SurrogateLearner(), slide)
        assert np.all(probs.values[4:] == 0.0)
        assert np.all(probs.values[:4] == 0.5)

    def test_single_class_biases_toward_it(self):
        # only negative cells annotated: typical tissue leans negative
        slide = constant_slide(0.3)
        geo = slide.geometry
        state = AnnotationState()
        state.add("s", map_to_slide(MapRect(0, 0, 8, 8), geo), 0)
        learner = fit_learner(SurrogateLearner(), [slide], state)
        assert learner.positive is None
        probs = predict(learner, slide)
        assert np.all(probs.values < 0.5)
        assert probs.values.min() >= 0.0

    def test_fit_separates_classes(self):
        slide = constant_slide(0.2, tumor_box=(0, 0, 8, 8))
        slide.features.flags.writeable = True
        slide.features[slide.tumor] = 0.8
        slide.features.flags.writeable = False
        geo = slide.geometry
        state = AnnotationState()
        state.add("s", map_to_slide(MapRect(0, 0, 16, 16), geo), 0)
        learner = fit_learner(SurrogateLearner(), [slide], state)
        probs = predict(learner, slide)
        assert np.all(probs.values[slide.tumor] > 0.5)
        assert np.all(probs.values[~slide.tumor] < 0.5)

    def test_fit_touches_only_annotated_cells(self):
        # labels outside annotated regions must not influence the fit
        slide_a = constant_slide(0.2, tumor_box=(8, 8, 16, 16))
        slide_b = constant_slide(0.2, tumor_box=(10, 10, 14, 14))
        geo = slide_a.geometry
        state = AnnotationState()
        state.add("s", map_to_slide(MapRect(0, 0, 4, 4), geo), 0)
        a = fit_learner(SurrogateLearner(), [slide_a], state)
        b = fit_learner(SurrogateLearner(), [slide_b], state)
        assert a == b


class TestEvaluate:
    def test_perfect_prediction(self):
        slide = constant_slide(0.2, tumor_box=(0, 0, 4, 4))
        slide.features.flags.writeable = True
        slide.features[slide.tumor] = 0.9
        slide.features.flags.writeable = False
        state = AnnotationState()
        state.add("s", map_to_slide(MapRect(0, 0, 16, 16), slide.geometry), 0)
        learner = fit_learner(SurrogateLearner(), [slide], state)
        assert evaluate(learner, [slide]) == 1.0

    def test_all_negative_gives_zero(self):
        slide = constant_slide(0.2, tumor_box=(0, 0, 4, 4))
        state = AnnotationState()
        state.add("s", map_to_slide(MapRect(8, 8, 8, 8), slide.geometry), 0)
        learner = fit_learner(SurrogateLearner(), [slide], state)
        # all annotated cells are negative and identical: nothing positive
        assert evaluate(learner, [slide]) == 0.0

    def test_half_overlap_is_one_third(self):
        from region_al.experiment import _slide_iou
        pred = np.zeros((4, 4), bool)
        truth = np.zeros((4, 4), bool)
        pred[0, 0:2] = True
        truth[0, 1:3] = True
        assert _slide_iou(pred, truth, np.ones((4, 4), bool)) == pytest.approx(1 / 3)

    def test_requires_tumor_slides(self):
        slide = constant_slide(0.2)
        with pytest.raises(GridError, match="tumor"):
            evaluate(SurrogateLearner(), [slide])


class TestSubsets:
    def test_partition_sizes_and_coverage(self):
        pool = generate_pool(GeneratorConfig(map_width=64, map_height=64),
                             11, seed=4)
        groups = partition_subsets(pool, 3, seed=1)
        sizes = sorted(len(g) for g in groups)
        assert max(sizes) - min(sizes) <= 1
        assert sorted(i for g in groups for i in g) == list(range(11))

    def test_partition_deterministic(self):
        pool = generate_pool(GeneratorConfig(map_width=64, map_height=64),
                             10, seed=4)
        assert partition_subsets(pool, 5, seed=9) == \
            partition_subsets(pool, 5, seed=9)

    def test_schedule_round_robin(self):
        assert [scheduled_subset(c, 5) for c in range(1, 11)] == \
            [0, 1, 2, 3, 4, 0, 1, 2, 3, 4]

    def test_single_subset_contains_all(self):
        pool = generate_pool(GeneratorConfig(map_width=64, map_height=64),
                             6, seed=4)
        groups = partition_subsets(pool, 1, seed=0)
        assert groups == [list(range(6))]


class TestRunCycle:
    def test_annotates_only_scheduled_subset(self):
        cfg = small_config()
        pool, _ = make_pools(cfg)
        groups = partition_subsets(pool, cfg.subsets, cfg.pool_seed)
        state = AnnotationState()
        learner = SurrogateLearner()
        new_state, outcomes = run_cycle(pool, state, learner, cfg, cycle=1)
        scheduled = {pool[i].slide_id for i in groups[0]}
        assert set(outcomes) == scheduled
        assert set(new_state.slide_ids()) <= scheduled

    def test_area_strictly_increases_when_scheduled(self):
        cfg = small_config()
        pool, _ = make_pools(cfg)
        state = AnnotationState()
        learner = SurrogateLearner()
        for cycle in (1, 2):
            before = annotated_tissue_pct(state, pool)
            state, outcomes = run_cycle(pool, state, learner, cfg, cycle)
            if any(len(o.picks) for o in outcomes.values()):
                assert annotated_tissue_pct(state, pool) > before

    def test_oversample_area_growth_bounded(self):
        cfg = small_config(method="adaptive")
        cfg = replace(cfg, selection=replace(cfg.selection,
                                             allow_oversample=True, count=2))
        pool, _ = make_pools(cfg)
        state = AnnotationState()
        learner = SurrogateLearner()
        max_growth_cells = cfg.selection.count * \
            (3 * cfg.selection.side // 2 // 256) ** 2
        for cycle in (1, 2, 3):
            before = {s.slide_id: state.mask(s.slide_id, s.geometry).sum()
                      for s in pool}
            state, outcomes = run_cycle(pool, state, learner, cfg, cycle)
            for s in pool:
                grown = state.mask(s.slide_id, s.geometry).sum() - \
                    before[s.slide_id]
                assert grown <= max_growth_cells


class TestAnnotatedTissuePct:
    def test_zero_and_full(self):
        cfg = small_config()
        pool, _ = make_pools(cfg)
        state = AnnotationState()
        assert annotated_tissue_pct(state, pool) == 0.0
        for s in pool:
            geo = s.geometry
            state.add(s.slide_id,
                      Region(geo.slide_width / 2, geo.slide_height / 2,
                             geo.slide_width, geo.slide_height), 0)
        assert annotated_tissue_pct(state, pool) == 100.0

    def test_overlapping_regions_counted_once(self):
        cfg = small_config()
        pool, _ = make_pools(cfg)
        geo = pool[0].geometry
        state = AnnotationState()
        state.add(pool[0].slide_id, map_to_slide(MapRect(0, 0, 8, 8), geo), 0)
        once = annotated_tissue_pct(state, pool)
        state.add(pool[0].slide_id, map_to_slide(MapRect(0, 0, 8, 8), geo), 1)
        assert annotated_tissue_pct(state, pool) == once


class TestRunExperiment:
    def test_deterministic(self):
        cfg = small_config(repetitions=2, cycles=2)
        a = run_experiment(cfg)
        b = run_experiment(cfg)
        assert [(r.repetition, r.cycle, r.annotated_tissue_pct, r.miou_tumor)
                for r in a.records] == \
            [(r.repetition, r.cycle, r.annotated_tissue_pct, r.miou_tumor)
             for r in b.records]

    def test_zero_cycles_only_initial_row(self):
        cfg = small_config(cycles=0)
        log = run_experiment(cfg)
        assert [r.cycle for r in log.records] == [0]

    def test_repetitions_distinct_initial_states(self):
        cfg = small_config(repetitions=3, cycles=0)
        log = run_experiment(cfg, keep_states=True)
        masks = []
        for state in log.final_states:
            sid = state.slide_ids()[0]
            masks.append(tuple((r.cx, r.cy) for r in state.regions(sid)))
        assert len(set(masks)) > 1

    def test_area_non_decreasing_within_repetition(self):
        cfg = small_config(repetitions=2, cycles=3)
        log = run_experiment(cfg)
        for rep in (0, 1):
            areas = [r.annotated_tissue_pct for r in log.records
                     if r.repetition == rep]
            assert all(a <= b for a, b in zip(areas, areas[1:]))

    def test_full_annotation_reference_fixed(self):
        cfg = small_config()
        pool, test = make_pools(cfg)
        assert full_annotation_reference(pool, test, cfg) == \
            full_annotation_reference(pool, test, cfg)

    def test_tumor_free_excluded_by_default(self):
        cfg = small_config(generator=GeneratorConfig(
            map_width=64, map_height=64, tumor_free_fraction=0.5,
            tumor_radius_range=(3.0, 8.0),
            distractor_radius_range=(3.0, 8.0)), pool_slides=12)
        pool, _ = make_pools(cfg)
        assert all(s.has_tumor for s in pool)
        inclusive = replace(cfg, include_tumor_free=True)
        pool_all, _ = make_pools(inclusive)
        assert len(pool_all) == 12
