import numpy as np
import pytest

from region_al.grid import GridGeometry, MapRect, PriorityGrid, map_to_slide, \
    slide_to_map
from region_al.selection import (
    CandidateShape,
    SelectionConfig,
    SelectionError,
    enumerate_candidates,
    nms_disjoint,
    select_adaptive,
    select_random,
    select_regions,
    select_standard,
    select_standard_nonsquare,
)

from oracles import greedy_window_oracle, quadratic_nms

STRIDE = 256


def make_grid(values, tissue=None):
    values = np.asarray(values, dtype=np.float64)
    h, w = values.shape
    geo = GridGeometry.from_map_size(w, h, STRIDE)
    if tissue is None:
        tissue = np.ones((h, w), bool)
    return PriorityGrid(geo, values, tissue)


def gaussian_bump(w, h, cx, cy, sigma):
    yy, xx = np.mgrid[0:h, 0:w]
    return np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2.0 * sigma ** 2))


def picks_as_map_rects(grid, outcome):
    return [slide_to_map(p.region, grid.geometry) for p in outcome.picks]


class TestConfig:
    def test_defaults_and_area_bounds(self):
        cfg = SelectionConfig(method="adaptive", side=4096, count=3)
        assert cfg.resolved_area_bounds == (2048.0 ** 2, 6144.0 ** 2)

    @pytest.mark.parametrize("kwargs", [
        dict(method="bogus", side=4096, count=1),
        dict(method="standard", side=0, count=1),
        dict(method="standard", side=4096, count=0),
        dict(method="standard", side=4096, count=1, percentile_range=(99, 98)),
        dict(method="standard", side=4096, count=1, area_bounds=(10.0, 5.0)),
        dict(method="standard", side=4096, count=1, percentile_domain="bogus"),
    ])
    def test_invalid_configs(self, kwargs):
        with pytest.raises(SelectionError):
            SelectionConfig(**kwargs)

    def test_side_not_multiple_of_stride(self):
        grid = make_grid(np.zeros((8, 8)))
        cfg = SelectionConfig(method="standard", side=300, count=1)
        with pytest.raises(SelectionError, match="multiple"):
            select_standard(grid, [], cfg)


class TestEnumerateCandidates:
    def test_count_for_8192(self):
        shapes = enumerate_candidates(8192, 256)
        assert len(shapes) == 33
        widths = sorted({s.w for s in shapes[:17]})
        assert widths[0] == 4096 and widths[-1] == 8192
        assert CandidateShape(8192, 8192) in shapes

    def test_count_for_4096(self):
        shapes = enumerate_candidates(4096, 256)
        assert len(shapes) == 17

    def test_area_rounding_bound(self):
        for side in (4096, 8192, 12288):
            for s in enumerate_candidates(side, 256):
                assert abs(s.w * s.h - side * side) <= side * 256

    def test_transposes_present(self):
        shapes = enumerate_candidates(4096, 256)
        pairs = {(s.w, s.h) for s in shapes}
        for s in shapes:
            assert (s.h, s.w) in pairs


class TestNmsDisjoint:
    def test_identical_rectangles(self):
        r = MapRect(2, 2, 4, 4)
        assert nms_disjoint([(r, 1.0), (r, 0.9)], 5) == [r]

    def test_disjoint_tiling_all_accepted(self):
        tiles = [(MapRect(x, y, 2, 2), 1.0)
                 for y in range(0, 8, 2) for x in range(0, 8, 2)]
        assert len(nms_disjoint(tiles, 16)) == 16
        assert len(nms_disjoint(tiles, 5)) == 5

    def test_shared_edges_allowed(self):
        a, b = MapRect(0, 0, 2, 2), MapRect(2, 0, 2, 2)
        assert nms_disjoint([(a, 1.0), (b, 0.5)], 2) == [a, b]

    def test_forbidden_respected(self):
        a = MapRect(0, 0, 4, 4)
        assert nms_disjoint([(a, 1.0)], 1, forbidden=[MapRect(3, 3, 2, 2)]) == []

    def test_matches_quadratic_reference(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            soup = []
            for _ in range(40):
                x, y = rng.integers(0, 20, 2)
                w, h = rng.integers(1, 8, 2)
                soup.append((MapRect(int(x), int(y), int(w), int(h)),
                             float(rng.uniform())))
            soup.sort(key=lambda c: -c[1])
            forbidden = [MapRect(5, 5, 4, 4)]
            k = int(rng.integers(1, 10))
            assert nms_disjoint(soup, k, forbidden) == \
                quadratic_nms(soup, k, forbidden)


class TestSelectRandom:
    def test_all_background_exhausts(self):
        grid = make_grid(np.zeros((16, 16)), tissue=np.zeros((16, 16), bool))
        cfg = SelectionConfig(method="random", side=4 * STRIDE, count=2,
                              rng_seed=1)
        out = select_random(grid, [], cfg)
        assert out.picks == ()
        assert out.exhausted

    def test_full_tissue_single_region(self):
        grid = make_grid(np.zeros((16, 16)))
        cfg = SelectionConfig(method="random", side=4 * STRIDE, count=1,
                              rng_seed=1)
        out = select_random(grid, [], cfg)
        assert len(out.picks) == 1
        assert not out.exhausted
        rect = picks_as_map_rects(grid, out)[0]
        assert rect.w == 4 and rect.h == 4

    def test_deterministic(self):
        rng = np.random.default_rng(5)
        grid = make_grid(rng.uniform(0, 1, (32, 32)),
                         tissue=rng.uniform(size=(32, 32)) < 0.6)
        cfg = SelectionConfig(method="random", side=4 * STRIDE, count=3,
                              rng_seed=99)
        a = select_random(grid, [], cfg)
        b = select_random(grid, [], cfg)
        assert a == b

    def test_min_tissue_enforced(self):
        tissue = np.zeros((16, 16), bool)
        tissue[:, 8:] = True
        grid = make_grid(np.zeros((16, 16)), tissue=tissue)
        cfg = SelectionConfig(method="random", side=4 * STRIDE, count=4,
                              min_tissue=0.99, rng_seed=3)
        out = select_random(grid, [], cfg)
        table = None
        for rect in picks_as_map_rects(grid, out):
            assert rect.x >= 8

    def test_disjoint_from_annotated(self):
        grid = make_grid(np.zeros((12, 12)))
        annotated = [map_to_slide(MapRect(0, 0, 8, 8), grid.geometry)]
        cfg = SelectionConfig(method="random", side=4 * STRIDE, count=4,
                              rng_seed=11)
        out = select_random(grid, annotated, cfg)
        forbidden = slide_to_map(annotated[0], grid.geometry)
        rects = picks_as_map_rects(grid, out)
        for rect in rects:
            assert not rect.intersects(forbidden)
        for i, a in enumerate(rects):
            for b in rects[i + 1:]:
                assert not a.intersects(b)

    def test_oversample_ignores_annotated(self):
        grid = make_grid(np.zeros((8, 8)))
        annotated = [map_to_slide(MapRect(0, 0, 8, 8), grid.geometry)]
        cfg = SelectionConfig(method="random", side=8 * STRIDE, count=1,
                              rng_seed=2, allow_oversample=True)
        out = select_random(grid, annotated, cfg)
        assert len(out.picks) == 1


class TestSelectStandard:
    def test_uniform_grid_tie_break_top_left(self):
        grid = make_grid(np.ones((16, 16)))
        cfg = SelectionConfig(method="standard", side=4 * STRIDE, count=3)
        out = select_standard(grid, [], cfg)
        rects = picks_as_map_rects(grid, out)
        assert rects[0] == MapRect(0, 0, 4, 4)
        assert rects[1] == MapRect(4, 0, 4, 4)
        assert rects[2] == MapRect(8, 0, 4, 4)
        for i, a in enumerate(rects):
            for b in rects[i + 1:]:
                assert not a.intersects(b)

    def test_gaussian_bump_first_pick_is_argmax(self):
        values = gaussian_bump(32, 32, 17.3, 12.8, 3.0)
        values /= values.max()
        grid = make_grid(values)
        cfg = SelectionConfig(method="standard", side=8 * STRIDE, count=1)
        out = select_standard(grid, [], cfg)
        oracle = greedy_window_oracle(values, [(8, 8)], 1)
        assert picks_as_map_rects(grid, out)[0] == oracle[0][0]

    def test_grid_smaller_than_window(self):
        grid = make_grid(np.zeros((4, 4)))
        cfg = SelectionConfig(method="standard", side=8 * STRIDE, count=1)
        with pytest.raises(SelectionError, match="does not fit"):
            select_standard(grid, [], cfg)

    def test_annotated_cells_zeroed_and_avoided(self):
        values = np.zeros((16, 16))
        values[2:6, 2:6] = 1.0   # inside the annotated block
        values[10:13, 10:13] = 0.5
        grid = make_grid(values)
        annotated = [map_to_slide(MapRect(0, 0, 8, 8), grid.geometry)]
        cfg = SelectionConfig(method="standard", side=4 * STRIDE, count=1)
        out = select_standard(grid, annotated, cfg)
        rect = picks_as_map_rects(grid, out)[0]
        assert not rect.intersects(MapRect(0, 0, 8, 8))
        assert out.picks[0].score == pytest.approx(0.5 * 9)

    def test_matches_oracle_on_random_grids(self):
        rng = np.random.default_rng(17)
        for trial in range(20):
            values = rng.uniform(0, 1, (24, 24))
            grid = make_grid(values)
            cfg = SelectionConfig(method="standard", side=6 * STRIDE, count=3)
            got = picks_as_map_rects(grid, select_standard(grid, [], cfg))
            expected = [r for r, _ in greedy_window_oracle(values, [(6, 6)], 3)]
            assert got == expected

    def test_matches_oracle_with_annotated(self):
        rng = np.random.default_rng(18)
        values = rng.uniform(0, 1, (24, 24))
        grid = make_grid(values)
        annotated_rect = MapRect(4, 6, 6, 5)
        annotated = [map_to_slide(annotated_rect, grid.geometry)]
        cfg = SelectionConfig(method="standard", side=4 * STRIDE, count=3)
        got = picks_as_map_rects(grid, select_standard(grid, annotated, cfg))
        zeroed = values.copy()
        zeroed[annotated_rect.y:annotated_rect.y1,
               annotated_rect.x:annotated_rect.x1] = 0.0
        expected = [r for r, _ in greedy_window_oracle(
            zeroed, [(4, 4)], 3, forbidden=[annotated_rect])]
        assert got == expected

    def test_exhaustion_when_grid_saturated(self):
        grid = make_grid(np.ones((8, 8)))
        cfg = SelectionConfig(method="standard", side=8 * STRIDE, count=3)
        out = select_standard(grid, [], cfg)
        assert len(out.picks) == 1
        assert out.exhausted


class TestSelectStandardNonsquare:
    def test_isotropic_bump_prefers_square(self):
        values = gaussian_bump(32, 32, 16.0, 16.0, 2.5)
        values /= values.max()
        grid = make_grid(values)
        cfg = SelectionConfig(method="standard_nonsquare", side=8 * STRIDE,
                              count=1)
        out = select_standard_nonsquare(grid, [], cfg)
        rect = picks_as_map_rects(grid, out)[0]
        assert rect.w == 8 and rect.h == 8

    def test_wide_bar_prefers_wide_shape(self):
        values = np.zeros((32, 32))
        values[15:18, 2:30] = 1.0    # wide horizontal bar
        grid = make_grid(values)
        cfg = SelectionConfig(method="standard_nonsquare", side=8 * STRIDE,
                              count=1)
        out = select_standard_nonsquare(grid, [], cfg)
        rect = picks_as_map_rects(grid, out)[0]
        assert rect.w > rect.h

    def test_square_candidate_set_reduces_to_standard(self):
        rng = np.random.default_rng(19)
        from region_al.selection import _greedy_window_selection
        for _ in range(10):
            values = rng.uniform(0, 1, (20, 20))
            grid = make_grid(values)
            cfg = SelectionConfig(method="standard", side=5 * STRIDE, count=3)
            standard = select_standard(grid, [], cfg)
            forced = _greedy_window_selection(
                grid, [], cfg, [CandidateShape(5 * STRIDE, 5 * STRIDE)])
            assert standard == forced

    def test_matches_oracle_on_random_grids(self):
        rng = np.random.default_rng(20)
        shapes = enumerate_candidates(4 * STRIDE, STRIDE)
        cells = [(s.w // STRIDE, s.h // STRIDE) for s in shapes]
        for _ in range(10):
            values = rng.uniform(0, 1, (16, 16))
            grid = make_grid(values)
            cfg = SelectionConfig(method="standard_nonsquare", side=4 * STRIDE,
                                  count=3)
            got = picks_as_map_rects(grid,
                                     select_standard_nonsquare(grid, [], cfg))
            expected = [r for r, _ in greedy_window_oracle(values, cells, 3)]
            assert got == expected


class TestSelectAdaptive:
    def two_blob_grid(self, size=64):
        # one dominant blob and a secondary one, as in a bisection walk
        values = 0.5 * gaussian_bump(size, size, 18.0, 20.0, 2.0) \
            + 1.0 * gaussian_bump(size, size, 44.0, 40.0, 3.2)
        values = values / values.max()
        return make_grid(values)

    def test_two_blob_probe_sequence(self):
        # first probe at the midpoint percentile gives a too-small box, the
        # next lower probe enlarges the component into bounds
        grid = self.two_blob_grid()
        cfg = SelectionConfig(method="adaptive", side=16 * STRIDE, count=1)
        out = select_adaptive(grid, [], cfg)
        assert len(out.picks) == 1
        pick = out.picks[0]
        assert pick.percentile == 98.5
        assert pick.iterations == 2
        assert not pick.fallback

    def test_success_contract(self):
        grid = self.two_blob_grid()
        cfg = SelectionConfig(method="adaptive", side=16 * STRIDE, count=2)
        out = select_adaptive(grid, [], cfg)
        lo, hi = cfg.resolved_area_bounds
        for pick in out.picks:
            if pick.fallback:
                continue
            assert lo <= pick.region.area <= hi
            assert 98.0 <= pick.percentile <= 100.0
            box = slide_to_map(pick.region, grid.geometry)
            assert box.contains_cell(*pick.peak)

    def test_spike_is_filtered_out(self):
        values = np.zeros((32, 32))
        values[5, 5] = 1.0
        grid = make_grid(values)
        cfg = SelectionConfig(method="adaptive", side=8 * STRIDE, count=1)
        out = select_adaptive(grid, [], cfg)
        assert out.exhausted
        assert out.picks == ()

    def test_plateau_larger_than_max_area_falls_back_to_clip(self):
        grid = make_grid(np.ones((64, 64)))
        cfg = SelectionConfig(method="adaptive", side=8 * STRIDE, count=1)
        out = select_adaptive(grid, [], cfg)
        pick = out.picks[0]
        assert pick.fallback
        box = slide_to_map(pick.region, grid.geometry)
        assert box.w == 12 and box.h == 12   # floor(3*8/2) cells
        assert box.contains_cell(*pick.peak)

    def test_too_small_structure_accepted_at_low_bound(self):
        # many scattered small islands: every probe yields a tiny component,
        # so the box at the low percentile bound is accepted and flagged
        values = np.zeros((64, 64))
        spots = [(6, 6), (6, 20), (6, 34), (6, 48), (20, 6), (20, 20),
                 (20, 34), (20, 48), (34, 6), (34, 20), (34, 34), (34, 48),
                 (48, 6), (48, 20)]
        for i, (y, x) in enumerate(spots):
            values[y:y + 4, x:x + 4] = 0.5 + 0.03 * i
        grid = make_grid(values / values.max())
        cfg = SelectionConfig(method="adaptive", side=16 * STRIDE, count=1)
        out = select_adaptive(grid, [], cfg)
        pick = out.picks[0]
        assert pick.fallback
        assert pick.percentile == 98.0
        assert pick.region.area < cfg.resolved_area_bounds[0]

    def test_peak_never_in_annotated_region(self):
        rng = np.random.default_rng(37)
        for _ in range(10):
            values = rng.uniform(0, 1, (48, 48))
            grid = make_grid(values)
            annotated_rect = MapRect(8, 8, 16, 16)
            annotated = [map_to_slide(annotated_rect, grid.geometry)]
            cfg = SelectionConfig(method="adaptive", side=8 * STRIDE, count=2)
            out = select_adaptive(grid, annotated, cfg)
            for pick in out.picks:
                assert not annotated_rect.contains_cell(*pick.peak)

    def test_outputs_disjoint_from_annotated_and_each_other(self):
        rng = np.random.default_rng(38)
        for trial in range(15):
            values = rng.uniform(0, 1, (48, 48)) ** 3
            grid = make_grid(values)
            annotated_rects = [MapRect(4, 4, 10, 10), MapRect(30, 26, 12, 8)]
            annotated = [map_to_slide(r, grid.geometry)
                         for r in annotated_rects]
            cfg = SelectionConfig(method="adaptive", side=8 * STRIDE, count=3)
            out = select_adaptive(grid, annotated, cfg)
            rects = picks_as_map_rects(grid, out)
            for rect in rects:
                for forbidden in annotated_rects:
                    assert not rect.intersects(forbidden)
            for i, a in enumerate(rects):
                for b in rects[i + 1:]:
                    assert not a.intersects(b)

    def test_oversample_may_overlap_annotated(self):
        values = np.zeros((32, 32))
        values[8:16, 8:16] = 1.0
        grid = make_grid(values)
        annotated = [map_to_slide(MapRect(6, 6, 12, 12), grid.geometry)]
        cfg = SelectionConfig(method="adaptive", side=8 * STRIDE, count=1,
                              allow_oversample=True)
        out = select_adaptive(grid, annotated, cfg)
        assert len(out.picks) == 1
        rect = picks_as_map_rects(grid, out)[0]
        assert rect.intersects(MapRect(6, 6, 12, 12))

    def test_bisection_terminates_within_budget(self):
        rng = np.random.default_rng(39)
        for _ in range(20):
            values = rng.uniform(0, 1, (40, 40))
            grid = make_grid(values)
            cfg = SelectionConfig(method="adaptive", side=8 * STRIDE, count=1,
                                  bisection_max_iters=20)
            out = select_adaptive(grid, [], cfg)
            for pick in out.picks:
                assert pick.iterations <= 21  # probes plus one low-bound pass


class TestDeterminism:
    @pytest.mark.parametrize("method", ["random", "standard",
                                        "standard_nonsquare", "adaptive"])
    def test_repeat_runs_identical(self, method):
        rng = np.random.default_rng(57)
        values = rng.uniform(0, 1, (32, 32))
        tissue = rng.uniform(size=(32, 32)) < 0.7
        grid = make_grid(values, tissue)
        annotated = [map_to_slide(MapRect(2, 2, 6, 6), grid.geometry)]
        cfg = SelectionConfig(method=method, side=4 * STRIDE, count=2,
                              rng_seed=123)
        assert select_regions(grid, annotated, cfg) == \
            select_regions(grid, annotated, cfg)
