"""Controlled random search.

Each round draws ``round_size`` uniform random configurations inside the
current bounds, keeps the ``top_k`` fastest, and shrinks every parameter's
bounds to the min/max seen among those. The loop stops once a round improves
the incumbent by no more than ``threshold`` (relative), or after
``max_rounds`` rounds.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import Any, Collection, Mapping

from .cmpe import Trial, TrialRunner
from .params import Configuration, ParameterSpace, in_domain, is_range, random_value
from .result import NoIncumbent, PhaseSummary, TunerResult, best_trial


@dataclass(frozen=True)
class Bounds:
    """Sampling region: (lo, hi) per range parameter, pinned values for the rest.

    A Boolean/Enum parameter absent from ``pinned`` is free.
    """

    ranges: Mapping[str, tuple[Any, Any]]
    pinned: Mapping[str, Any] = field(default_factory=dict)

    @classmethod
    def full(cls, space: ParameterSpace) -> "Bounds":
        return cls({p.name: (p.domain.min, p.domain.max) for p in space.params if is_range(p.domain)}, {})

    def check(self, space: ParameterSpace) -> None:
        for p in space.params:
            if is_range(p.domain):
                lo, hi = self.ranges[p.name]
                if not p.domain.min <= lo <= hi <= p.domain.max:
                    raise ValueError(f"{p.name}: bounds ({lo}, {hi}) invalid for {p.domain}")
            elif p.name in self.pinned and not in_domain(p.domain, self.pinned[p.name]):
                raise ValueError(f"{p.name}: pinned value {self.pinned[p.name]!r} out of domain")

    def with_pins(self, space: ParameterSpace, values: Mapping[str, Any]) -> "Bounds":
        """Collapse range parameters to a point and pin Boolean/Enum ones."""
        ranges, pinned = dict(self.ranges), dict(self.pinned)
        for name, value in values.items():
            spec = space.spec(name)
            value = spec.coerce(value)
            if is_range(spec.domain):
                ranges[name] = (value, value)
            else:
                pinned[name] = value
        out = Bounds(ranges, pinned)
        out.check(space)
        return out

    def contains(self, config: Mapping[str, Any]) -> bool:
        for name, (lo, hi) in self.ranges.items():
            if not lo <= config[name] <= hi:
                return False
        return all(config[n] == v for n, v in self.pinned.items())

    def within(self, other: "Bounds") -> bool:
        for name, (lo, hi) in self.ranges.items():
            olo, ohi = other.ranges[name]
            if lo < olo or hi > ohi:
                return False
        return all(self.pinned.get(n) == v for n, v in other.pinned.items())


def hadoop_crs_bounds(space: ParameterSpace) -> Bounds:
    """Full domain except replication 1 and a 192 MB block size."""
    return Bounds.full(space).with_pins(space, {"dfs.replication": 1, "dfs.blocksize": 192})


CANNED_BOUNDS = {"hadoop": hadoop_crs_bounds}


@dataclass
class CrsOptions:
    round_size: int = 60
    top_k: int = 6
    threshold: float = 0.01
    max_rounds: int = 10
    seed: int = 0
    # Names whose bounds contract between rounds; None means every parameter.
    contract: Collection[str] | None = None

    def check(self) -> None:
        if self.round_size < 1 or not 1 <= self.top_k <= self.round_size:
            raise ValueError(f"need 1 <= top_k <= round_size, got k={self.top_k}, m={self.round_size}")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        if not 0 < self.threshold <= 1:
            raise ValueError(f"threshold must lie in (0, 1], got {self.threshold}")


class RoundError(NoIncumbent):
    def __init__(self, message: str, trials: list[Trial]):
        super().__init__(message)
        self.trials = trials
        self.successes = [t for t in trials if t.ok]


@dataclass
class RoundOutcome:
    trials: list[Trial]
    topk: list[Configuration]
    best: Trial


def draw_config(space: ParameterSpace, bounds: Bounds, rng: random.Random) -> Configuration:
    values = {}
    for p in space.params:
        if is_range(p.domain):
            lo, hi = bounds.ranges[p.name]
            values[p.name] = random_value(p, lo, hi, rng)
        elif p.name in bounds.pinned:
            values[p.name] = bounds.pinned[p.name]
        else:
            values[p.name] = random_value(p, None, None, rng)
    return Configuration(values)


def random_round(space: ParameterSpace, bounds: Bounds, opts: CrsOptions, runner: TrialRunner,
                 rng: random.Random, phase_tag: str = "crs-round-1") -> RoundOutcome:
    # Draw the whole round before evaluating so the rng stream is independent of scheduling.
    configs = [draw_config(space, bounds, rng) for _ in range(opts.round_size)]
    trials = runner.run(configs, phase_tag)
    ok = sorted((t for t in trials if t.ok), key=lambda t: (t.duration_ms, t.index))
    if len(ok) < opts.top_k:
        raise RoundError(f"{phase_tag}: only {len(ok)} of {len(trials)} trials succeeded, need {opts.top_k}", trials)
    top = ok[: opts.top_k]
    return RoundOutcome(trials, [t.config for t in top], top[0])


def contract_bounds(topk: list[Configuration], space: ParameterSpace, prev: Bounds,
                    contract: Collection[str] | None = None) -> Bounds:
    if not topk:
        raise ValueError("contract_bounds needs at least one configuration")
    ranges, pinned = dict(prev.ranges), dict(prev.pinned)
    for p in space.params:
        if contract is not None and p.name not in contract:
            continue
        values = [c[p.name] for c in topk]
        if is_range(p.domain):
            ranges[p.name] = (min(values), max(values))
        elif all(v == values[0] for v in values):
            pinned[p.name] = values[0]
        else:
            pinned.pop(p.name, None)
    return Bounds(ranges, pinned)


def variation(prev_best_ms: int, new_best_ms: int) -> float:
    """Relative improvement of the incumbent, never negative."""
    if prev_best_ms <= 0:
        raise ValueError("prev_best_ms must be positive")
    return max(0.0, (prev_best_ms - new_best_ms) / prev_best_ms)


@dataclass
class CrsResult(TunerResult):
    bounds: list[Bounds] = field(default_factory=list)
    rounds: int = 0


def _round_note(bounds: Bounds, round_best: int | None, incumbent: int) -> str:
    return json.dumps({"round_best_ms": round_best, "incumbent_ms": incumbent,
                       "ranges": {k: list(v) for k, v in bounds.ranges.items()}}, sort_keys=True)


def controlled_random_search(space: ParameterSpace, runner: TrialRunner, opts: CrsOptions,
                             initial: Bounds | None = None) -> CrsResult:
    opts.check()
    bounds = initial if initial is not None else Bounds.full(space)
    bounds.check(space)
    rng = random.Random(opts.seed)

    out = random_round(space, bounds, opts, runner, rng, "crs-round-1")
    incumbent = out.best
    trials = list(out.trials)
    phases = [PhaseSummary("crs-round-1", len(out.trials), incumbent.duration_ms)]
    history = [bounds]
    warnings: list[str] = []
    runner.event("round", "crs-round-1", _round_note(bounds, out.best.duration_ms, incumbent.duration_ms))

    rnd = 1
    while rnd < opts.max_rounds:
        rnd += 1
        tag = f"crs-round-{rnd}"
        before = incumbent.duration_ms
        bounds = contract_bounds(out.topk, space, bounds, opts.contract)
        history.append(bounds)
        try:
            out = random_round(space, bounds, opts, runner, rng, tag)
        except RoundError as exc:
            trials.extend(exc.trials)
            incumbent = best_trial(exc.trials, incumbent)
            phases.append(PhaseSummary(tag, len(exc.trials), incumbent.duration_ms))
            warnings.append(str(exc))
            break
        trials.extend(out.trials)
        incumbent = best_trial(out.trials, incumbent)
        phases.append(PhaseSummary(tag, len(out.trials), incumbent.duration_ms))
        runner.event("round", tag, _round_note(bounds, out.best.duration_ms, incumbent.duration_ms))
        if variation(before, incumbent.duration_ms) <= opts.threshold:
            break

    return CrsResult(
        best_config=incumbent.config,
        best_time_ms=incumbent.duration_ms,
        trials=trials,
        phases=phases,
        warnings=warnings,
        bounds=history,
        rounds=rnd,
    )
