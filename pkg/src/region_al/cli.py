"""Command-line surface: select, simulate, report, gen-synthetic.

Exit codes: 0 success, 1 usage error, 2 data/validation error. Selection
exhaustion is reported on stderr but still exits 0. REGION_AL_THREADS caps
the worker processes the simulate command may use (default 1).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .configfile import ConfigError, SimulationPlan, generator_plan, \
    simulation_plan
from .experiment import ExperimentConfig, full_annotation_reference, \
    make_pools, run_experiment
from .formats import FormatError, MetricsRecord, RegionRecord, \
    atomic_write_bytes, read_grid, read_region_list, write_grid, \
    write_metrics, write_region_list
from .grid import GridError, PriorityGrid, Region
from .report import write_report
from .selection import METHODS, SelectionConfig, SelectionError, select_regions
from .synthetic import generate_pool

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2

_DATA_ERRORS = (GridError, SelectionError, FormatError, ConfigError, OSError)


class _Parser(argparse.ArgumentParser):
    """argparse defaults to exit code 2 on usage errors; we reserve that
    for data errors and use 1 instead."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="region-al",
                     description="Region selection and annotation-budget "
                                 "simulation on priority grids.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("select", parents=[], help="select regions on a grid file")
    p.add_argument("--grid", required=True, help="priority grid file (PFG1)")
    p.add_argument("--tissue", required=True, help="tissue mask grid file (PFG1)")
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--l", required=True, type=int, dest="side",
                   help="region side in slide pixels")
    p.add_argument("--k", required=True, type=int, dest="count",
                   help="number of regions to select")
    p.add_argument("--annotated", help="region list of already annotated regions")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-tissue", type=float, default=0.10)
    p.add_argument("--oversample", action="store_true",
                   help="allow overlap with annotated regions")
    p.add_argument("--out", required=True, help="output region list path")
    p.set_defaults(func=_cmd_select)

    p = sub.add_parser("simulate", help="run the simulation grid from a config")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("report", help="render curves and the summary table")
    p.add_argument("--in-dir", required=True, help="directory of metrics files")
    p.add_argument("--out", required=True, help="output directory (SVG + CSV)")
    p.add_argument("--target-fraction", type=float, default=1.0,
                   help="fraction of the full-annotation reference to reach")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("gen-synthetic", help="write a synthetic slide pool")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_gen_synthetic)
    return parser


def _load_priority(grid_path, tissue_path) -> PriorityGrid:
    values, geometry, kind = read_grid(grid_path)
    if kind != "priority":
        raise FormatError(f"{grid_path}: expected a priority grid, got {kind!r}")
    tissue, tissue_geo, tissue_kind = read_grid(tissue_path)
    if tissue_kind != "mask":
        raise FormatError(f"{tissue_path}: expected a mask grid, "
                          f"got {tissue_kind!r}")
    if tissue_geo.map_shape != geometry.map_shape:
        raise FormatError(f"dimension mismatch: grid is {geometry.map_shape}, "
                          f"tissue is {tissue_geo.map_shape}")
    if tissue_geo.map_stride != geometry.map_stride:
        raise FormatError(f"stride mismatch: grid {geometry.map_stride}, "
                          f"tissue {tissue_geo.map_stride}")
    return PriorityGrid(geometry, values.astype(np.float64),
                        tissue.astype(bool))


def _cmd_select(args) -> int:
    grid = _load_priority(args.grid, args.tissue)
    annotated: list[Region] = []
    if args.annotated:
        annotated = [Region(r.cx, r.cy, r.w, r.h)
                     for r in read_region_list(args.annotated)]
    cfg = SelectionConfig(method=args.method, side=args.side, count=args.count,
                          min_tissue=args.min_tissue, rng_seed=args.seed,
                          allow_oversample=args.oversample)
    outcome = select_regions(grid, annotated, cfg)
    slide_id = Path(args.grid).stem
    records = []
    for p in outcome.picks:
        score = p.score if p.score is not None else p.percentile
        records.append(RegionRecord(slide_id, 0, args.method,
                                    p.region.cx, p.region.cy,
                                    p.region.w, p.region.h,
                                    score_or_percentile=score,
                                    fallback=p.fallback))
    write_region_list(args.out, records)
    if outcome.exhausted:
        print(f"exhausted: only {len(records)} of {args.count} regions placed",
              file=sys.stderr)
    return EXIT_OK


def _experiment_config(plan: SimulationPlan, method: str, count: int,
                       side: int) -> ExperimentConfig:
    from .synthetic import GeneratorConfig
    generator = GeneratorConfig(map_width=plan.map_width,
                                map_height=plan.map_height,
                                map_stride=plan.map_stride,
                                tumor_free_fraction=plan.tumor_free_fraction)
    selection = SelectionConfig(method=method, side=side, count=count,
                                min_tissue=plan.min_tissue,
                                allow_oversample=plan.allow_oversample)
    return ExperimentConfig(selection=selection, generator=generator,
                            pool_slides=plan.pool_slides,
                            test_slides=plan.test_slides,
                            pool_seed=plan.pool_seed, cycles=plan.cycles,
                            subsets=plan.subsets,
                            initial_count=plan.initial_count,
                            repetitions=plan.repetitions,
                            base_seed=plan.seed,
                            eval_threshold=plan.eval_threshold,
                            include_tumor_free=plan.include_tumor_free)


def _run_combination(job: tuple[SimulationPlan, str, int, int]
                     ) -> list[MetricsRecord]:
    plan, method, count, side = job
    log = run_experiment(_experiment_config(plan, method, count, side))
    return [MetricsRecord(r.repetition, r.cycle, r.annotated_tissue_pct,
                          r.miou_tumor) for r in log.records]


def _worker_count() -> int:
    raw = os.environ.get("REGION_AL_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"REGION_AL_THREADS must be an integer, got {raw!r}") \
            from None
    return max(n, 1)


def _cmd_simulate(args) -> int:
    plan = simulation_plan(args.config)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    combos = plan.combinations()
    jobs = [(plan, m, k, l) for m, k, l in combos]
    workers = _worker_count()
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            results = list(pool.map(_run_combination, jobs))
    else:
        results = [_run_combination(job) for job in jobs]
    for (method, count, side), records in zip(combos, results):
        write_metrics(out_dir / f"metrics_{method}_k{count}_l{side}.csv",
                      records)
    cfg = _experiment_config(plan, *combos[0])
    pool_slides, test_slides = make_pools(cfg)
    reference = full_annotation_reference(pool_slides, test_slides, cfg)
    atomic_write_bytes(out_dir / "full_annotation.csv",
                       f"miou_tumor\n{reference!r}\n".encode("utf-8"))
    manifest = {
        "version": __version__,
        "config": plan.raw,
        "combinations": [list(c) for c in combos],
        "seed": plan.seed,
        "full_annotation_miou": reference,
    }
    atomic_write_bytes(out_dir / "manifest.json",
                       (json.dumps(manifest, indent=2, sort_keys=True) + "\n")
                       .encode("utf-8"))
    return EXIT_OK


def _cmd_report(args) -> int:
    write_report(args.in_dir, args.out, args.target_fraction)
    return EXIT_OK


def _cmd_gen_synthetic(args) -> int:
    plan = generator_plan(args.config)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    slides = generate_pool(plan.generator, plan.slides, plan.seed)
    entries = []
    for slide in slides:
        write_grid(out_dir / f"{slide.slide_id}_feature.pfg",
                   slide.features.astype(np.float32), slide.geometry, "feature")
        write_grid(out_dir / f"{slide.slide_id}_tumor.pfg",
                   slide.tumor.astype(np.float32), slide.geometry, "mask")
        write_grid(out_dir / f"{slide.slide_id}_tissue.pfg",
                   slide.tissue.astype(np.float32), slide.geometry, "mask")
        entries.append({
            "slide_id": slide.slide_id,
            "tumor_fraction": slide.tumor_fraction,
            "tissue_cells": int(slide.tissue.sum()),
        })
    manifest = {"version": __version__, "config": plan.raw,
                "seed": plan.seed, "slides": entries}
    atomic_write_bytes(out_dir / "pool_manifest.json",
                       (json.dumps(manifest, indent=2, sort_keys=True) + "\n")
                       .encode("utf-8"))
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except _DATA_ERRORS as exc:
        print(f"region-al: error: {exc}", file=sys.stderr)
        return EXIT_DATA


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
