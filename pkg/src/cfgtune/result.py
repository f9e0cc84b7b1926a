from __future__ import annotations

from dataclasses import dataclass, field

from .cmpe import Trial
from .params import Configuration


class NoIncumbent(RuntimeError):
    """Every trial of a search phase failed, so there is no best configuration."""


@dataclass(frozen=True)
class PhaseSummary:
    tag: str
    trials: int
    incumbent_ms: int | None


@dataclass
class TunerResult:
    best_config: Configuration
    best_time_ms: int
    trials: list[Trial]
    phases: list[PhaseSummary] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


def best_trial(trials, incumbent: Trial | None = None) -> Trial | None:
    """Fold trials into an incumbent; only a strictly faster ok trial replaces it."""
    for t in trials:
        if t.ok and (incumbent is None or t.duration_ms < incumbent.duration_ms):
            incumbent = t
    return incumbent
