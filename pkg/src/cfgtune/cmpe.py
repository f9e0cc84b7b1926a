"""Configuration manager and performance evaluator.

Evaluators sit between the search algorithms and the system under test. Each
one takes a :class:`~cfgtune.params.Configuration` and returns the measured
job duration in integer milliseconds, or raises:

* :class:`TrialFailed` / :class:`TrialTimeout` when the job itself misbehaved.
  The search records the trial and moves on.
* :class:`EvaluatorError` when the harness cannot produce a measurement at all
  (bad template, replay miss, invalid config). The tuning run aborts.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import re
import signal
import subprocess
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Protocol, Sequence

from .params import (
    Boolean,
    Configuration,
    Enum,
    FloatRange,
    ParameterSpace,
    is_range,
    parse_config,
    render_config,
    validate,
)
from .runlog import LogRecord, NullLog, utc_now

logger = logging.getLogger(__name__)


class EvaluatorError(RuntimeError):
    """The evaluation harness could not measure anything; fatal to the run."""


class ConfigError(EvaluatorError):
    pass


class ReplayLookupError(EvaluatorError, LookupError):
    pass


class TrialFailed(RuntimeError):
    """The job ran but failed (nonzero exit, failed pre-run hook)."""


class TrialTimeout(RuntimeError):
    pass


class Evaluator(Protocol):
    parallel_safe: bool

    def evaluate(self, config: Configuration) -> int: ...


@dataclass(frozen=True)
class Trial:
    index: int
    config: Configuration
    status: str  # ok | error | timeout
    duration_ms: int | None = None
    message: str = ""
    started_at: str = ""
    phase_tag: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "ok"


# ---------------------------------------------------------------------------
# synthetic cost model


@dataclass(frozen=True)
class CostModel:
    """Separable quadratic cost: base * (1 + sum w_i * d_i^2) + gaussian noise."""

    base_ms: int
    terms: Mapping[str, tuple[float, Any]]  # name -> (weight, optimum)
    noise_sd: float = 0.0
    seed: int = 0

    def check(self, space: ParameterSpace) -> None:
        if self.base_ms <= 0:
            raise ValueError("base_ms must be positive")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")
        missing = [n for n in space.names if n not in self.terms]
        extra = [n for n in self.terms if n not in space]
        if missing or extra:
            raise ValueError(f"cost model does not match space (missing {missing}, unknown {extra})")
        for name, (weight, opt) in self.terms.items():
            if weight < 0:
                raise ValueError(f"{name}: negative weight")
            if validate(space, {**space.defaults(), name: opt}):
                raise ValueError(f"{name}: optimum {opt!r} outside domain")

    def optimum(self, space: ParameterSpace) -> Configuration:
        return space.configuration({n: opt for n, (_, opt) in self.terms.items()})

    def noiseless_ms(self, space: ParameterSpace, config: Mapping[str, Any]) -> float:
        total = 0.0
        for p in space.params:
            weight, opt = self.terms[p.name]
            v = config[p.name]
            if is_range(p.domain):
                width = p.domain.max - p.domain.min
                d = (v - opt) / width if width else 0.0
            else:
                d = 0.0 if v == opt else 1.0
            total += weight * d * d
        return self.base_ms * (1.0 + total)

    @classmethod
    def random(cls, space: ParameterSpace, rng: random.Random, base_ms: int = 1000,
               noise_sd: float = 0.0, seed: int = 0) -> "CostModel":
        """A model with uniform-random weights in [0.5, 2] and off-grid optima."""
        terms = {}
        for p in space.params:
            d = p.domain
            if isinstance(d, Boolean):
                opt = rng.random() < 0.5
            elif isinstance(d, Enum):
                opt = rng.choice(d.values)
            elif isinstance(d, FloatRange):
                opt = rng.uniform(d.min, d.max)
            else:
                opt = rng.randint(d.min, d.max)
            terms[p.name] = (rng.uniform(0.5, 2.0), opt)
        return cls(base_ms, terms, noise_sd, seed)

    def to_json(self) -> str:
        doc = {
            "base_ms": self.base_ms,
            "noise_sd": self.noise_sd,
            "seed": self.seed,
            "params": {n: {"weight": w, "optimum": o} for n, (w, o) in self.terms.items()},
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "CostModel":
        doc = json.loads(text)
        terms = {n: (float(t["weight"]), t["optimum"]) for n, t in doc["params"].items()}
        return cls(int(doc["base_ms"]), terms, float(doc.get("noise_sd", 0.0)), int(doc.get("seed", 0)))


def load_model(path: str | Path, space: ParameterSpace) -> CostModel:
    model = CostModel.from_json(Path(path).read_text(encoding="utf-8"))
    # Optima may be written in rendered form ("32k", "FAIR", "true").
    terms = {}
    for name, (w, opt) in model.terms.items():
        if isinstance(opt, str) and name in space:
            opt = parse_config(space, {name: opt})[name]
        elif name in space:
            opt = space.spec(name).coerce(opt)
        terms[name] = (w, opt)
    model = CostModel(model.base_ms, terms, model.noise_sd, model.seed)
    model.check(space)
    return model


class SyntheticEvaluator:
    parallel_safe = True

    def __init__(self, space: ParameterSpace, model: CostModel):
        model.check(space)
        self.space = space
        self.model = model

    def _noise(self, config: Configuration) -> float:
        if self.model.noise_sd == 0:
            return 0.0
        key = json.dumps(render_config(self.space, config), sort_keys=True)
        digest = hashlib.sha256(f"{self.model.seed}:{key}".encode()).digest()
        return random.Random(int.from_bytes(digest[:8], "big")).gauss(0.0, self.model.noise_sd)

    def evaluate(self, config: Configuration) -> int:
        problems = validate(self.space, config)
        if problems:
            raise ConfigError("; ".join(problems))
        ms = self.model.noiseless_ms(self.space, config) + self._noise(config)
        return max(1, int(round(ms)))


def synthetic_evaluator(space: ParameterSpace, model: CostModel) -> SyntheticEvaluator:
    return SyntheticEvaluator(space, model)


# ---------------------------------------------------------------------------
# replay


class ReplayEvaluator:
    """Closed-world lookup of recorded durations, matched on rendered values."""

    parallel_safe = True

    def __init__(self, space: ParameterSpace, records: Iterable[tuple[Mapping[str, Any], int]]):
        self.space = space
        self._table: dict[tuple, int] = {}
        for config, ms in records:
            self._table.setdefault(self._key(config), int(ms))

    def _key(self, config: Mapping[str, Any]) -> tuple:
        return tuple(sorted(render_config(self.space, config).items()))

    def __len__(self) -> int:
        return len(self._table)

    def evaluate(self, config: Configuration) -> int:
        try:
            return self._table[self._key(config)]
        except (KeyError, ValueError):
            raise ReplayLookupError(f"no recorded duration for {dict(config)}") from None


def replay_evaluator(space: ParameterSpace, records) -> ReplayEvaluator:
    return ReplayEvaluator(space, records)


def load_replay(path: str | Path, space: ParameterSpace) -> ReplayEvaluator:
    """Build a replay evaluator from the ok trials of a run-log file."""
    from .runlog import load

    pairs = [
        (parse_config(space, r.config), r.duration_ms)
        for r in load(path)
        if r.event == "trial" and r.status == "ok"
    ]
    return ReplayEvaluator(space, pairs)


# ---------------------------------------------------------------------------
# command execution

_PLACEHOLDER = re.compile(r"\$\$\{|\$\{([^}]*)\}")


def placeholders(text: str) -> set[str]:
    return {m.group(1) for m in _PLACEHOLDER.finditer(text) if m.group(1) is not None}


def substitute(text: str, values: Mapping[str, str]) -> str:
    """Replace ``${name}`` with ``values[name]``; ``$${`` yields a literal ``${``."""

    def repl(m: re.Match) -> str:
        name = m.group(1)
        if name is None:
            return "${"
        try:
            return values[name]
        except KeyError:
            raise ConfigError(f"unresolved placeholder ${{{name}}}") from None

    return _PLACEHOLDER.sub(repl, text)


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass(frozen=True)
class PlatformProfile:
    run: str
    config_targets: tuple[tuple[Path, Path], ...] = ()
    arg_template: str | None = None
    pre_run: tuple[str, ...] = ()
    post_run: tuple[str, ...] = ()
    timeout: float = 3600.0
    workdir: Path | None = None

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")


def load_profile(path: str | Path) -> PlatformProfile:
    """Read a JSON profile; relative template/output paths resolve against its directory."""
    path = Path(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    base = path.parent

    def resolve(p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else base / q

    targets = tuple((resolve(t["template"]), resolve(t["output"])) for t in doc.get("config_targets", []))
    return PlatformProfile(
        run=doc["run"],
        config_targets=targets,
        arg_template=doc.get("arg_template"),
        pre_run=tuple(doc.get("pre_run", [])),
        post_run=tuple(doc.get("post_run", [])),
        timeout=float(doc.get("timeout", 3600.0)),
        workdir=resolve(doc["workdir"]) if doc.get("workdir") else None,
    )


def _kill_group(proc: subprocess.Popen) -> None:
    for sig, grace in ((signal.SIGTERM, 2.0), (signal.SIGKILL, 5.0)):
        try:
            os.killpg(proc.pid, sig)
        except ProcessLookupError:
            return
        try:
            proc.wait(timeout=grace)
            return
        except subprocess.TimeoutExpired:
            continue


def _tail(fh, limit: int = 400) -> str:
    fh.seek(0)
    return fh.read().decode(errors="replace")[-limit:].strip()


def run_shell(command: str, timeout: float, cwd: Path | None = None,
              env: Mapping[str, str] | None = None) -> tuple[int, float, str]:
    """Run ``command`` in its own process group; return (exit code, seconds, output tail).

    The clock starts just before spawn and stops when the shell exits. On
    timeout the whole group is terminated and :class:`TrialTimeout` raised.
    """
    with tempfile.TemporaryFile() as out:
        start = time.perf_counter()
        proc = subprocess.Popen(
            command, shell=True, cwd=cwd, env=None if env is None else {**os.environ, **env},
            stdout=out, stderr=subprocess.STDOUT, stdin=subprocess.DEVNULL, start_new_session=True,
        )
        try:
            code = proc.wait(timeout=timeout)
        except subprocess.TimeoutExpired:
            _kill_group(proc)
            raise TrialTimeout(f"{command!r} exceeded {timeout:g}s") from None
        elapsed = time.perf_counter() - start
        return code, elapsed, _tail(out)


class CommandEvaluator:
    """Materializes config files, runs hooks and times the job command."""

    parallel_safe = False

    def __init__(self, space: ParameterSpace, profile: PlatformProfile):
        self.space = space
        self.profile = profile
        self._templates = [(t.read_text(encoding="utf-8"), out) for t, out in profile.config_targets]
        texts = [t for t, _ in self._templates]
        if profile.arg_template:
            texts.append(profile.arg_template)
        unknown = sorted({n for t in texts for n in placeholders(t)} - set(space.names))
        if unknown:
            raise ConfigError(f"templates reference unknown parameters: {unknown}")

    def materialize(self, config: Configuration) -> str:
        """Write all config files; return the substituted argument string."""
        values = render_config(self.space, config)
        rendered = [(substitute(text, values), out) for text, out in self._templates]
        args = substitute(self.profile.arg_template, values) if self.profile.arg_template else ""
        for text, out in rendered:
            write_atomic(out, text)
        return args

    def evaluate(self, config: Configuration) -> int:
        problems = validate(self.space, config)
        if problems:
            raise ConfigError("; ".join(problems))
        prof = self.profile
        args = self.materialize(config)
        env = {"TUNE_ARGS": args}
        for cmd in prof.pre_run:
            code, _, tail = run_shell(cmd, prof.timeout, prof.workdir, env)
            if code != 0:
                raise TrialFailed(f"pre-run {cmd!r} exited {code}: {tail}")
        command = f"{prof.run} {args}" if args else prof.run
        try:
            code, seconds, tail = run_shell(command, prof.timeout, prof.workdir, env)
        finally:
            self._post_run(env)
        if code != 0:
            raise TrialFailed(f"run exited {code}: {tail}")
        return max(1, int(round(seconds * 1000)))

    def _post_run(self, env) -> None:
        for cmd in self.profile.post_run:
            try:
                code, _, tail = run_shell(cmd, self.profile.timeout, self.profile.workdir, env)
            except TrialTimeout as exc:
                logger.warning("post-run hook timed out: %s", exc)
                continue
            if code != 0:
                logger.warning("post-run %r exited %d: %s", cmd, code, tail)


def command_evaluator(space: ParameterSpace, profile: PlatformProfile) -> CommandEvaluator:
    return CommandEvaluator(space, profile)


# ---------------------------------------------------------------------------
# trial bookkeeping shared by the search algorithms


@dataclass
class TrialRunner:
    """Evaluates batches of configurations, numbering and logging every trial.

    Batches are dispatched to a thread pool only when the evaluator is
    ``parallel_safe`` and ``max_parallel > 1``. Results are always logged and
    returned in submission order, so concurrent runs match sequential ones.
    """

    space: ParameterSpace
    evaluator: Evaluator
    log: Any = field(default_factory=NullLog)
    algorithm: str = ""
    max_parallel: int = 1
    trials: list[Trial] = field(default_factory=list)

    def _one(self, index: int, config: Configuration, phase_tag: str) -> Trial:
        started = utc_now()
        try:
            ms = self.evaluator.evaluate(config)
        except TrialTimeout as exc:
            return Trial(index, config, "timeout", None, str(exc), started, phase_tag)
        except TrialFailed as exc:
            return Trial(index, config, "error", None, str(exc), started, phase_tag)
        if ms <= 0:
            raise EvaluatorError(f"evaluator returned non-positive duration {ms}")
        return Trial(index, config, "ok", int(ms), "", started, phase_tag)

    def run(self, configs: Sequence[Configuration], phase_tag: str) -> list[Trial]:
        base = len(self.trials)
        jobs = [(base + i, c) for i, c in enumerate(configs)]
        workers = self.max_parallel if getattr(self.evaluator, "parallel_safe", False) else 1
        if workers > 1 and len(jobs) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(lambda job: self._one(job[0], job[1], phase_tag), jobs))
        else:
            results = [self._one(i, c, phase_tag) for i, c in jobs]
        for t in results:
            self.log.append(self.trial_record(t))
        self.trials.extend(results)
        return results

    def trial_record(self, t: Trial) -> LogRecord:
        return LogRecord(
            event="trial",
            algorithm=self.algorithm,
            platform_tag=self.space.platform_tag,
            phase_tag=t.phase_tag,
            config=render_config(self.space, t.config),
            duration_ms=t.duration_ms,
            status=t.status,
            note=t.message,
            trial=t.index,
        )

    def event(self, event: str, phase_tag: str = "", note: str = "") -> None:
        self.log.append(LogRecord(
            event=event, algorithm=self.algorithm, platform_tag=self.space.platform_tag,
            phase_tag=phase_tag, note=note,
        ))
