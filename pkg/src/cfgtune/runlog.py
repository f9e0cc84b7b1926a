"""Append-only JSON-lines trial log and helpers to read it back."""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import IO, Iterable

logger = logging.getLogger(__name__)

EVENTS = ("trial", "phase", "round", "run_start", "run_end")
STATUSES = ("ok", "error", "timeout")


def utc_now() -> str:
    """Current UTC time as ISO-8601 with millisecond precision."""
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds").replace("+00:00", "Z")


@dataclass
class LogRecord:
    event: str
    ts: str = field(default_factory=utc_now)
    algorithm: str = ""
    platform_tag: str = ""
    phase_tag: str = ""
    config: dict[str, str] | None = None
    duration_ms: int | None = None
    status: str | None = None
    note: str = ""
    trial: int | None = None

    def check(self) -> None:
        if self.event not in EVENTS:
            raise ValueError(f"unknown event {self.event!r}")
        if self.event == "trial":
            if self.config is None or self.status not in STATUSES:
                raise ValueError("trial records need config and a valid status")
            if (self.duration_ms is not None) != (self.status == "ok"):
                raise ValueError("duration_ms must be present exactly when status is ok")

    def to_json(self) -> str:
        doc = {k: v for k, v in asdict(self).items() if v is not None}
        return json.dumps(doc, sort_keys=True, ensure_ascii=False)

    @classmethod
    def from_dict(cls, doc: dict) -> "LogRecord":
        known = {k: doc[k] for k in cls.__dataclass_fields__ if k in doc}
        rec = cls(**known)
        rec.check()
        return rec


class RunLog:
    """Single serialized writer for one log sink.

    Accepts a path (opened in append mode) or an already-open text stream.
    Every append writes one complete line and flushes; a write failure propagates.
    """

    def __init__(self, sink: str | Path | IO[str]):
        if isinstance(sink, (str, Path)):
            path = Path(sink)
            path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(path, "a", encoding="utf-8", newline="\n")
            self._owned = True
            self.path: Path | None = path
        else:
            self._fh = sink
            self._owned = False
            self.path = None
        self._lock = threading.Lock()

    def append(self, record: LogRecord) -> None:
        record.check()
        line = record.to_json() + "\n"
        with self._lock:
            self._fh.write(line)
            self._fh.flush()

    def close(self) -> None:
        if self._owned:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class NullLog:
    """Sink that discards records; used when the caller does not want a log."""

    path = None

    def append(self, record: LogRecord) -> None:
        record.check()

    def close(self) -> None:
        pass


def append(sink: RunLog, record: LogRecord) -> None:
    sink.append(record)


def load(path: str | Path, problems: list[tuple[int, str]] | None = None) -> list[LogRecord]:
    """Parse a log file. Malformed lines are skipped and reported as ``(lineno, reason)``."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(LogRecord.from_dict(json.loads(line)))
            except (ValueError, TypeError) as exc:
                logger.warning("%s:%d: skipping malformed log line (%s)", path, lineno, exc)
                if problems is not None:
                    problems.append((lineno, str(exc)))
    return records


class NoSuccessfulTrial(LookupError):
    pass


def best_of(records: Iterable[LogRecord]) -> tuple[dict[str, str], int, str]:
    """Fastest ok trial; ties go to the earliest timestamp, then earliest position."""
    best = None
    for pos, rec in enumerate(records):
        if rec.event != "trial" or rec.status != "ok":
            continue
        key = (rec.duration_ms, rec.ts, pos)
        if best is None or key < best[0]:
            best = (key, rec)
    if best is None:
        raise NoSuccessfulTrial("log contains no successful trial")
    rec = best[1]
    return dict(rec.config), rec.duration_ms, rec.ts


def baseline_of(records: Iterable[LogRecord]) -> int | None:
    """Duration of the first ok trial tagged as the all-defaults baseline, if any."""
    for rec in records:
        if rec.event == "trial" and rec.status == "ok" and rec.phase_tag == "baseline":
            return rec.duration_ms
    return None


def improvement_pct(baseline_ms: int, best_ms: int) -> float:
    return 100.0 * (baseline_ms - best_ms) / baseline_ms
