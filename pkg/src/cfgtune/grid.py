"""Grid search over sampled parameter values, followed by one finer-tuning pass.

The first phase evaluates the full cartesian product of per-parameter candidate
lists. The second phase re-samples a narrow window around the incumbent for the
influential parameters, holding everything else at the incumbent's values.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from .cmpe import TrialRunner
from .params import (
    Configuration,
    IntRange,
    ParameterSpace,
    ParameterSpec,
    in_domain,
    is_range,
    range_values,
    sample_values,
)
from .result import NoIncumbent, PhaseSummary, TunerResult, best_trial

ParamGrid = dict[str, list]


class GridTooLarge(ValueError):
    pass


@dataclass
class GridOptions:
    """Which parameters the grid sweeps; the rest are pinned.

    Parameters that are neither swept nor listed in ``fixed`` are pinned at
    their defaults. ``finer_params`` lists the influential parameters refined
    in the second phase.
    """

    sweep: Sequence[str] = ()
    fixed: Mapping[str, Any] = field(default_factory=dict)
    finer_params: Sequence[str] = ()
    max_trials: int | None = None

    def check(self, space: ParameterSpace) -> None:
        unknown = [n for n in [*self.sweep, *self.fixed, *self.finer_params] if n not in space]
        if unknown:
            raise ValueError(f"unknown parameters in grid options: {unknown}")
        overlap = sorted(set(self.sweep) & set(self.fixed))
        if overlap:
            raise ValueError(f"parameters both swept and fixed: {overlap}")
        for name in self.finer_params:
            spec = space.spec(name)
            if not spec.influential:
                raise ValueError(f"{name} is not an influential parameter")
            if not is_range(spec.domain):
                raise ValueError(f"{name}: finer tuning needs a numeric range domain")


def hadoop_grid_options(space: ParameterSpace) -> GridOptions:
    """Sweep memory, block size and map slots; replication 1 and compression on."""
    return GridOptions(
        sweep=("mapreduce.map.memory.mb", "dfs.blocksize", "mapreduce.tasktracker.map.tasks.maximum"),
        fixed={"dfs.replication": 1, "mapreduce.map.output.compress": True},
        finer_params=[p.name for p in space.influential()],
    )


def spark_grid_options(space: ParameterSpace) -> GridOptions:
    return GridOptions(
        sweep=(
            "spark.task.cpus",
            "spark.memory.storageFraction",
            "spark.network.timeout",
            "spark.shuffle.file.buffer",
            "spark.memory.fraction",
        ),
        fixed={"spark.scheduler.mode": "FAIR"},
        finer_params=[p.name for p in space.influential()],
    )


CANNED_OPTIONS = {"hadoop": hadoop_grid_options, "spark": spark_grid_options}


def build_grid(space: ParameterSpace, options: GridOptions) -> ParamGrid:
    options.check(space)
    swept = set(options.sweep)
    grid: ParamGrid = {}
    for p in space.params:
        if p.name in swept:
            grid[p.name] = sample_values(p)
            continue
        value = p.coerce(options.fixed.get(p.name, p.default))
        if not in_domain(p.domain, value):
            raise ValueError(f"{p.name}: fixed value {value!r} out of domain")
        grid[p.name] = [value]
    return grid


def grid_size(grid: ParamGrid) -> int:
    return math.prod(len(v) for v in grid.values())


def enumerate_grid(grid: ParamGrid, space: ParameterSpace, max_trials: int | None = None) -> list[Configuration]:
    """Cartesian product in odometer order (last parameter varies fastest)."""
    size = grid_size(grid)
    if max_trials is not None and size > max_trials:
        raise GridTooLarge(f"grid has {size} configurations, more than max_trials={max_trials}")
    names = space.names
    return [Configuration(zip(names, combo)) for combo in itertools.product(*(grid[n] for n in names))]


@dataclass
class GridOutcome:
    best_config: Configuration
    best_time_ms: int
    trials: list


def grid_search(configs: Sequence[Configuration], runner: TrialRunner, phase_tag: str = "grid") -> GridOutcome:
    if not configs:
        raise ValueError("grid_search needs at least one configuration")
    trials = runner.run(configs, phase_tag)
    best = best_trial(trials)
    if best is None:
        raise NoIncumbent(f"all {len(trials)} trials in phase {phase_tag!r} failed")
    return GridOutcome(best.config, best.duration_ms, trials)


def finer_window(best_value: float, old_lower: float, old_upper: float,
                 spec: ParameterSpec) -> tuple[float, float, float]:
    """Window around ``best_value`` for the finer pass, plus its sampling increment.

    Bounds are ``best -/+ old_lower/2`` clamped to the domain. The increment is
    the parameter's ``finer_step`` when set, else ``new_lower/2`` limited to
    the window width. Integer domains round bounds inward.
    """
    d = spec.domain
    if not is_range(d):
        raise ValueError(f"{spec.name}: finer window needs a range domain")
    if not old_lower <= best_value <= old_upper:
        raise ValueError(f"{spec.name}: best {best_value} outside [{old_lower}, {old_upper}]")
    half = old_lower / 2
    lo = max(d.min, best_value - half)
    hi = min(d.max, best_value + half)
    integer = isinstance(d, IntRange)
    if integer:
        lo, hi = math.ceil(lo), math.floor(hi)
        if lo > hi:
            lo = hi = int(best_value)
    width = hi - lo
    if spec.finer_step is not None:
        inc = spec.finer_step
    else:
        inc = lo / 2
        if inc <= 0 or inc > width:
            inc = width
    if integer:
        inc = max(1, int(round(inc)))
    return lo, hi, inc


def finer_candidates(best_value, old_lower, old_upper, spec: ParameterSpec) -> list:
    """Window samples plus the incumbent value itself.

    Without the incumbent the resampled lattice can miss it, and a separable
    cost then lets the old incumbent beat every refined combination.
    """
    lo, hi, inc = finer_window(best_value, old_lower, old_upper, spec)
    if lo == hi:
        values = [spec.coerce(lo)]
    else:
        values = range_values(lo, hi, inc, isinstance(spec.domain, IntRange))
    best_value = spec.coerce(best_value)
    if best_value not in values:
        values = sorted([*values, best_value])
    return values


def finer_grid(space: ParameterSpace, grid: ParamGrid, best: Configuration,
               finer_params: Sequence[str]) -> ParamGrid:
    refine = set(finer_params)
    out: ParamGrid = {}
    for p in space.params:
        if p.name not in refine:
            out[p.name] = [best[p.name]]
        elif p.pin_max:
            out[p.name] = [p.domain.max]
        else:
            cands = grid[p.name]
            out[p.name] = finer_candidates(best[p.name], cands[0], cands[-1], p)
    return out


def tune_grid_finer(space: ParameterSpace, runner: TrialRunner, options: GridOptions) -> TunerResult:
    grid = build_grid(space, options)
    runner.event("phase", "grid", f"{grid_size(grid)} configurations")
    phase1 = grid_search(enumerate_grid(grid, space, options.max_trials), runner, "grid")
    incumbent = best_trial(phase1.trials)
    phases = [PhaseSummary("grid", len(phase1.trials), incumbent.duration_ms)]

    fine = finer_grid(space, grid, phase1.best_config, options.finer_params)
    fine_trials = []
    if options.finer_params:
        runner.event("phase", "finer", f"{grid_size(fine)} configurations")
        fine_trials = grid_search(enumerate_grid(fine, space, options.max_trials), runner, "finer").trials
        incumbent = best_trial(fine_trials, incumbent)
    phases.append(PhaseSummary("finer", len(fine_trials), incumbent.duration_ms))

    return TunerResult(
        best_config=incumbent.config,
        best_time_ms=incumbent.duration_ms,
        trials=phase1.trials + fine_trials,
        phases=phases,
    )
