"""key=value configuration files for the simulate and gen-synthetic commands.

Lines hold ``key = value`` pairs; blank lines and "#" comments are skipped.
Unknown keys are rejected with their line number, as are duplicate keys.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .selection import METHODS, SelectionConfig
from .synthetic import GeneratorConfig

__all__ = ["ConfigError", "parse_config", "SimulationPlan",
           "simulation_plan", "generator_plan", "GenerationPlan"]


class ConfigError(ValueError):
    """Unparseable or invalid configuration."""


# simulate keys; required ones have no default
_SIM_KEYS = {
    "methods": None,
    "k": None,
    "l": None,
    "cycles": None,
    "repetitions": None,
    "seed": None,
    "subsets": "5",
    "pool_slides": "50",
    "test_slides": "20",
    "pool_seed": "11",
    "map_width": "128",
    "map_height": "128",
    "map_stride": "256",
    "min_tissue": "0.1",
    "allow_oversample": "false",
    "initial_k": "",
    "eval_threshold": "0.5",
    "tumor_free_fraction": "0.0",
    "include_tumor_free": "false",
}

_GEN_KEYS = {
    "slides": None,
    "seed": None,
    "map_width": "128",
    "map_height": "128",
    "map_stride": "256",
    "tumor_free_fraction": "0.0",
}


def parse_config(text: str, known_keys) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in known_keys:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = value.strip()
    return values


def _resolve(path_or_text, known_keys) -> dict[str, str]:
    text = Path(path_or_text).read_text(encoding="utf-8") \
        if isinstance(path_or_text, (str, Path)) else path_or_text
    values = parse_config(text, known_keys)
    for key, default in known_keys.items():
        if key not in values:
            if default is None:
                raise ConfigError(f"missing required key {key!r}")
            values[key] = default
    return values


def _parse_int(values, key) -> int:
    try:
        return int(values[key])
    except ValueError:
        raise ConfigError(f"key {key!r}: expected an integer, "
                          f"got {values[key]!r}") from None


def _parse_float(values, key) -> float:
    try:
        return float(values[key])
    except ValueError:
        raise ConfigError(f"key {key!r}: expected a number, "
                          f"got {values[key]!r}") from None


def _parse_bool(values, key) -> bool:
    text = values[key].lower()
    if text in ("true", "1", "yes"):
        return True
    if text in ("false", "0", "no"):
        return False
    raise ConfigError(f"key {key!r}: expected true/false, got {values[key]!r}")


def _parse_int_list(values, key) -> list[int]:
    try:
        items = [int(v.strip()) for v in values[key].split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"key {key!r}: expected comma-separated integers, "
                          f"got {values[key]!r}") from None
    if not items:
        raise ConfigError(f"key {key!r}: empty list")
    return items


@dataclass(frozen=True)
class SimulationPlan:
    """Cross product of methods, counts and sides, plus shared settings."""

    methods: tuple[str, ...]
    counts: tuple[int, ...]
    sides: tuple[int, ...]
    cycles: int
    repetitions: int
    seed: int
    subsets: int
    pool_slides: int
    test_slides: int
    pool_seed: int
    map_width: int
    map_height: int
    map_stride: int
    min_tissue: float
    allow_oversample: bool
    initial_count: int | None
    eval_threshold: float
    tumor_free_fraction: float
    include_tumor_free: bool
    raw: dict[str, str] = field(default_factory=dict)

    def combinations(self) -> list[tuple[str, int, int]]:
        return [(m, k, l) for m in self.methods for k in self.counts
                for l in self.sides]


def simulation_plan(path_or_text) -> SimulationPlan:
    values = _resolve(path_or_text, _SIM_KEYS)
    methods = tuple(m.strip() for m in values["methods"].split(",") if m.strip())
    if not methods:
        raise ConfigError("key 'methods': empty list")
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"key 'methods': unknown method {m!r}, expected "
                              f"one of {METHODS}")
    initial = values["initial_k"].strip()
    plan = SimulationPlan(
        methods=methods,
        counts=tuple(_parse_int_list(values, "k")),
        sides=tuple(_parse_int_list(values, "l")),
        cycles=_parse_int(values, "cycles"),
        repetitions=_parse_int(values, "repetitions"),
        seed=_parse_int(values, "seed"),
        subsets=_parse_int(values, "subsets"),
        pool_slides=_parse_int(values, "pool_slides"),
        test_slides=_parse_int(values, "test_slides"),
        pool_seed=_parse_int(values, "pool_seed"),
        map_width=_parse_int(values, "map_width"),
        map_height=_parse_int(values, "map_height"),
        map_stride=_parse_int(values, "map_stride"),
        min_tissue=_parse_float(values, "min_tissue"),
        allow_oversample=_parse_bool(values, "allow_oversample"),
        initial_count=int(initial) if initial else None,
        eval_threshold=_parse_float(values, "eval_threshold"),
        tumor_free_fraction=_parse_float(values, "tumor_free_fraction"),
        include_tumor_free=_parse_bool(values, "include_tumor_free"),
        raw=dict(values),
    )
    for side in plan.sides:
        if side % plan.map_stride != 0:
            raise ConfigError(f"key 'l': side {side} is not a multiple of "
                              f"map_stride {plan.map_stride}")
    return plan


@dataclass(frozen=True)
class GenerationPlan:
    slides: int
    seed: int
    generator: GeneratorConfig
    raw: dict[str, str] = field(default_factory=dict)


def generator_plan(path_or_text) -> GenerationPlan:
    values = _resolve(path_or_text, _GEN_KEYS)
    generator = GeneratorConfig(
        map_width=_parse_int(values, "map_width"),
        map_height=_parse_int(values, "map_height"),
        map_stride=_parse_int(values, "map_stride"),
        tumor_free_fraction=_parse_float(values, "tumor_free_fraction"),
    )
    return GenerationPlan(slides=_parse_int(values, "slides"),
                          seed=_parse_int(values, "seed"),
                          generator=generator, raw=dict(values))
