"""Parameter domains, platform presets, sampling, validation and rendering."""

from __future__ import annotations

import json
import math
import random
from collections.abc import Iterator, Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Union

# Float grids are snapped to this many decimals so 0.25 + 3*0.1 prints as 0.55.
_FLOAT_DIGITS = 10


@dataclass(frozen=True)
class IntRange:
    min: int
    max: int
    step: int = 1

    def __post_init__(self):
        if self.min > self.max:
            raise ValueError(f"min {self.min} > max {self.max}")
        if self.step <= 0:
            raise ValueError(f"step must be positive, got {self.step}")


@dataclass(frozen=True)
class FloatRange:
    min: float
    max: float
    step: float

    def __post_init__(self):
        if self.min > self.max:
            raise ValueError(f"min {self.min} > max {self.max}")
        if self.step <= 0:
            raise ValueError(f"step must be positive, got {self.step}")


@dataclass(frozen=True)
class Boolean:
    pass


@dataclass(frozen=True)
class Enum:
    values: tuple[str, ...]

    def __post_init__(self):
        if not self.values:
            raise ValueError("enum needs at least one value")
        if len(set(self.values)) != len(self.values):
            raise ValueError(f"duplicate enum values in {self.values}")


Domain = Union[IntRange, FloatRange, Boolean, Enum]
Value = Union[int, float, bool, str]


def is_range(domain: Domain) -> bool:
    return isinstance(domain, (IntRange, FloatRange))


def in_domain(domain: Domain, value: Any) -> bool:
    if isinstance(domain, Boolean):
        return isinstance(value, bool)
    if isinstance(domain, Enum):
        return isinstance(value, str) and value in domain.values
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        return False
    if isinstance(domain, IntRange) and not float(value).is_integer():
        return False
    return domain.min <= value <= domain.max


@dataclass(frozen=True)
class ParameterSpec:
    name: str
    domain: Domain
    default: Value
    influential: bool = False
    finer_step: float | None = None
    unit_suffix: str = ""
    # Finer tuning holds this parameter at its domain max instead of windowing it.
    pin_max: bool = False

    def __post_init__(self):
        if isinstance(self.domain, IntRange) and isinstance(self.default, float):
            object.__setattr__(self, "default", int(self.default))
        if not in_domain(self.domain, self.default):
            raise ValueError(f"{self.name}: default {self.default!r} not in {self.domain}")
        if self.finer_step is not None:
            if not is_range(self.domain):
                raise ValueError(f"{self.name}: finer_step needs a range domain")
            if not 0 < self.finer_step <= self.domain.max - self.domain.min:
                raise ValueError(f"{self.name}: finer_step {self.finer_step} outside (0, max-min]")
        if self.pin_max and not is_range(self.domain):
            raise ValueError(f"{self.name}: pin_max needs a range domain")

    def coerce(self, value: Any) -> Value:
        """Normalise a numeric value to the domain's Python type (int for IntRange)."""
        if isinstance(self.domain, IntRange) and isinstance(value, float) and value.is_integer():
            return int(value)
        if isinstance(self.domain, FloatRange) and isinstance(value, int) and not isinstance(value, bool):
            return float(value)
        return value


class Configuration(Mapping):
    """Immutable, hashable assignment of parameter name -> value."""

    __slots__ = ("_items", "_map", "_hash")

    def __init__(self, assignments: Mapping[str, Value] | Iterator[tuple[str, Value]] = ()):
        items = tuple(dict(assignments).items())
        self._items = items
        self._map = dict(items)
        self._hash = hash(frozenset(items))

    def __getitem__(self, key: str) -> Value:
        return self._map[key]

    def __iter__(self):
        return iter(self._map)

    def __len__(self) -> int:
        return len(self._map)

    def __hash__(self) -> int:
        return self._hash

    def __eq__(self, other) -> bool:
        if isinstance(other, Configuration):
            return self._map == other._map
        if isinstance(other, Mapping):
            return self._map == dict(other)
        return NotImplemented

    def __repr__(self) -> str:
        return f"Configuration({self._map!r})"

    def with_values(self, changes: Mapping[str, Value]) -> "Configuration":
        merged = dict(self._map)
        merged.update(changes)
        return Configuration(merged)


@dataclass(frozen=True)
class ParameterSpace:
    params: tuple[ParameterSpec, ...]
    platform_tag: str = "custom"
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(self.params))
        names = [p.name for p in self.params]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise ValueError(f"duplicate parameter names: {dupes}")
        object.__setattr__(self, "_index", {p.name: p for p in self.params})

    def __len__(self) -> int:
        return len(self.params)

    def __iter__(self):
        return iter(self.params)

    def __contains__(self, name: str) -> bool:
        return name in self._index

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.params]

    def spec(self, name: str) -> ParameterSpec:
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"unknown parameter {name!r}") from None

    def defaults(self) -> Configuration:
        return Configuration((p.name, p.default) for p in self.params)

    def influential(self) -> list[ParameterSpec]:
        return [p for p in self.params if p.influential]

    def configuration(self, values: Mapping[str, Any]) -> Configuration:
        """Build a configuration in space order, coercing numeric types."""
        return Configuration((p.name, p.coerce(values[p.name])) for p in self.params if p.name in values)


# ---------------------------------------------------------------------------
# presets


def preset_hadoop() -> ParameterSpace:
    """The twelve Hadoop MapReduce/HDFS parameters with their default values and ranges.

    ``dfs.blocksize`` is held in megabytes; the table's numbers only make sense in MB.
    """
    P = ParameterSpec
    return ParameterSpace(
        (
            P("mapreduce.map.memory.mb", IntRange(256, 3072, 256), 1024, influential=True, finer_step=32),
            P("dfs.blocksize", IntRange(32, 256, 32), 128, influential=True, finer_step=8),
            P("mapreduce.tasktracker.map.tasks.maximum", IntRange(2, 128, 16), 2),
            P("mapreduce.job.reduce.slowstart.completedmaps", FloatRange(0.025, 0.9, 0.1), 0.05),
            P("mapreduce.map.output.compress", Boolean(), False),
            P("mapreduce.job.reduces", IntRange(1, 4, 1), 1),
            P("mapreduce.task.io.sort.mb", IntRange(32, 128, 32), 100),
            P("mapreduce.job.maps", IntRange(2, 32, 10), 2),
            P("mapreduce.task.io.sort.factor", IntRange(5, 80, 15), 10),
            P("dfs.replication", IntRange(1, 3, 1), 3),
            P("mapreduce.tasktracker.reduce.tasks.maximum", IntRange(2, 128, 16), 2),
            P("mapreduce.job.jvm.numtasks", IntRange(1, 1024, 128), 1),
        ),
        platform_tag="hadoop",
    )


def preset_spark() -> ParameterSpace:
    """The eleven Spark parameters; buffer sizes are integers with k/m unit suffixes."""
    P = ParameterSpec
    return ParameterSpace(
        (
            P("spark.task.cpus", IntRange(1, 5, 1), 1, influential=True, pin_max=True),
            P("spark.memory.storageFraction", FloatRange(0.25, 0.9, 0.1), 0.5, influential=True, finer_step=0.25),
            P("spark.network.timeout", IntRange(40, 200, 40), 120, influential=True, finer_step=20),
            P("spark.memory.fraction", FloatRange(0.25, 0.8, 0.1), 0.6),
            P("spark.shuffle.file.buffer", IntRange(16, 512, 112), 32, unit_suffix="k"),
            P("spark.scheduler.listenerbus.eventqueue.capacity", IntRange(2500, 25000, 2500), 10000),
            P("spark.files.openCostInBytes", IntRange(1048576, 16777216, 1048576), 4194304),
            P("spark.storage.memoryMapThreshold", IntRange(1, 5, 1), 2, unit_suffix="m"),
            P("spark.files.maxPartitionBytes", IntRange(33554432, 1073741824, 33554432), 134217728),
            P("spark.default.parallelism", IntRange(4, 24, 4), 24),
            P("spark.scheduler.mode", Enum(("FIFO", "FAIR")), "FIFO"),
        ),
        platform_tag="spark",
    )


PRESETS = {"hadoop": preset_hadoop, "spark": preset_spark}


def preset(name: str) -> ParameterSpace:
    try:
        return PRESETS[name]()
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


# ---------------------------------------------------------------------------
# sampling


def _snap(x: float) -> float:
    return round(x, _FLOAT_DIGITS)


def range_values(lo: float, hi: float, step: float, integer: bool) -> list:
    """Arithmetic progression lo, lo+step, ... capped at hi, with hi appended if missed."""
    if integer:
        lo, hi, step = int(lo), int(hi), max(1, int(round(step)))
        out = list(range(lo, hi + 1, step))
        if out[-1] != hi:
            out.append(hi)
        return out
    out = [float(lo)]
    i = 1
    while True:
        v = _snap(lo + i * step)
        if v > hi or math.isclose(v, hi, rel_tol=0, abs_tol=10 ** -_FLOAT_DIGITS):
            break
        out.append(v)
        i += 1
    if out[-1] != hi:
        out.append(float(hi))
    return out


def sample_values(spec: ParameterSpec) -> list:
    d = spec.domain
    if isinstance(d, Boolean):
        return [False, True]
    if isinstance(d, Enum):
        return list(d.values)
    return range_values(d.min, d.max, d.step, isinstance(d, IntRange))


def random_value(spec: ParameterSpec, lo: Any, hi: Any, rng: random.Random) -> Value:
    d = spec.domain
    if isinstance(d, Boolean):
        return rng.random() < 0.5
    if isinstance(d, Enum):
        return d.values[rng.randrange(len(d.values))]
    if lo > hi:
        raise ValueError(f"{spec.name}: lo {lo} > hi {hi}")
    if lo < d.min or hi > d.max:
        raise ValueError(f"{spec.name}: [{lo}, {hi}] outside domain [{d.min}, {d.max}]")
    if isinstance(d, IntRange):
        return rng.randint(math.ceil(lo), math.floor(hi))
    if lo == hi:
        return float(lo)
    return rng.uniform(lo, hi)


# ---------------------------------------------------------------------------
# validation and rendering


def validate(space: ParameterSpace, config: Mapping[str, Any]) -> list[str]:
    """Return human-readable violations; an empty list means the config is valid."""
    problems = []
    for p in space.params:
        if p.name not in config:
            problems.append(f"{p.name}: missing parameter")
        elif not in_domain(p.domain, config[p.name]):
            problems.append(f"{p.name}: value {config[p.name]!r} out of domain {p.domain}")
    for name in config:
        if name not in space:
            problems.append(f"{name}: unknown parameter")
    return problems


def _fmt_number(v: float | int) -> str:
    if isinstance(v, int):
        return str(v)
    s = repr(float(v))
    return s[:-2] if s.endswith(".0") else s


def render_value(spec: ParameterSpec, value: Any) -> str:
    if not in_domain(spec.domain, value):
        raise ValueError(f"{spec.name}: value {value!r} out of domain")
    if isinstance(spec.domain, Boolean):
        return "true" if value else "false"
    if isinstance(spec.domain, Enum):
        return value
    if isinstance(spec.domain, IntRange):
        value = int(value)
    return _fmt_number(value) + spec.unit_suffix


def parse_value(spec: ParameterSpec, text: str) -> Value:
    """Inverse of :func:`render_value`; also accepts TRUE/FALSE spellings."""
    d = spec.domain
    if isinstance(d, Boolean):
        low = text.strip().lower()
        if low not in ("true", "false"):
            raise ValueError(f"{spec.name}: not a boolean: {text!r}")
        return low == "true"
    if isinstance(d, Enum):
        if text not in d.values:
            raise ValueError(f"{spec.name}: {text!r} not one of {d.values}")
        return text
    body = text.strip()
    if spec.unit_suffix and body.endswith(spec.unit_suffix):
        body = body[: -len(spec.unit_suffix)]
    value = int(body) if isinstance(d, IntRange) else float(body)
    if not in_domain(d, value):
        raise ValueError(f"{spec.name}: value {text!r} out of domain")
    return value


def render_config(space: ParameterSpace, config: Mapping[str, Any]) -> dict[str, str]:
    return {p.name: render_value(p, config[p.name]) for p in space.params if p.name in config}


def parse_config(space: ParameterSpace, rendered: Mapping[str, str]) -> Configuration:
    unknown = [k for k in rendered if k not in space]
    if unknown:
        raise ValueError(f"unknown parameters: {unknown}")
    return Configuration((p.name, parse_value(p, rendered[p.name])) for p in space.params if p.name in rendered)


# ---------------------------------------------------------------------------
# space files (JSON)


def _domain_record(d: Domain) -> dict:
    if isinstance(d, IntRange):
        return {"type": "int", "min": d.min, "max": d.max, "step": d.step}
    if isinstance(d, FloatRange):
        return {"type": "float", "min": d.min, "max": d.max, "step": d.step}
    if isinstance(d, Boolean):
        return {"type": "bool"}
    return {"type": "enum", "values": list(d.values)}


def spec_to_record(p: ParameterSpec) -> dict:
    rec = {"name": p.name, "default": p.default, **_domain_record(p.domain)}
    if p.influential:
        rec["influential"] = True
    if p.finer_step is not None:
        rec["finer_step"] = p.finer_step
    if p.unit_suffix:
        rec["unit_suffix"] = p.unit_suffix
    if p.pin_max:
        rec["pin_max"] = True
    return rec


def spec_from_record(rec: Mapping[str, Any]) -> ParameterSpec:
    kind = rec["type"]
    if kind == "int":
        domain = IntRange(int(rec["min"]), int(rec["max"]), int(rec.get("step", 1)))
    elif kind == "float":
        domain = FloatRange(float(rec["min"]), float(rec["max"]), float(rec["step"]))
    elif kind == "bool":
        domain = Boolean()
    elif kind == "enum":
        domain = Enum(tuple(rec["values"]))
    else:
        raise ValueError(f"{rec.get('name')}: unknown parameter type {kind!r}")
    default = rec["default"]
    if kind == "float":
        default = float(default)
    return ParameterSpec(
        name=rec["name"],
        domain=domain,
        default=default,
        influential=bool(rec.get("influential", False)),
        finer_step=rec.get("finer_step"),
        unit_suffix=rec.get("unit_suffix", ""),
        pin_max=bool(rec.get("pin_max", False)),
    )


def dump_space(space: ParameterSpace) -> str:
    """Serialize a space; output is byte-stable for a given space."""
    doc = {"platform": space.platform_tag, "parameters": [spec_to_record(p) for p in space.params]}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def load_space(source: str | Path) -> ParameterSpace:
    """Load a space from a preset name or a JSON space file."""
    if str(source) in PRESETS:
        return preset(str(source))
    doc = json.loads(Path(source).read_text(encoding="utf-8"))
    return ParameterSpace(
        tuple(spec_from_record(r) for r in doc["parameters"]),
        platform_tag=doc.get("platform", "custom"),
    )
