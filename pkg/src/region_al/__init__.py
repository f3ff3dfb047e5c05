"""Region selection and active-learning simulation on priority grids."""

__version__ = "0.1.0"

from .grid import (
    GridError,
    GridGeometry,
    IntegralTable,
    MapRect,
    PriorityGrid,
    ProbabilityGrid,
    Region,
    build_integral,
    connected_component,
    informativeness,
    map_to_slide,
    median_filter_3x3,
    percentile_threshold,
    slide_to_map,
    tissue_fraction,
)
from .selection import (
    METHODS,
    CandidateShape,
    RegionPick,
    SelectionConfig,
    SelectionError,
    SelectionOutcome,
    enumerate_candidates,
    nms_disjoint,
    select_adaptive,
    select_random,
    select_regions,
    select_standard,
    select_standard_nonsquare,
)
from .learner import SurrogateLearner, fit_learner, predict
from .synthetic import GeneratorConfig, SyntheticSlide, generate_pool
from .experiment import (
    AnnotationState,
    ExperimentConfig,
    ExperimentLog,
    annotated_tissue_pct,
    evaluate,
    full_annotation_reference,
    run_cycle,
    run_experiment,
)
