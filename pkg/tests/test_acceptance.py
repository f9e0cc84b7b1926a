"""Numbered acceptance criteria, each with its own runtime budget."""

import json
import os
import random
import time
from pathlib import Path

import pytest

from conftest import separable_space
from cfgtune.cli import main
from cfgtune.cmpe import CostModel, PlatformProfile, TrialFailed, TrialRunner, TrialTimeout
from cfgtune.cmpe import command_evaluator, synthetic_evaluator
from cfgtune.crs import Bounds, CrsOptions, controlled_random_search, random_round
from cfgtune.grid import GridOptions, build_grid, enumerate_grid, finer_window, grid_search, hadoop_grid_options
from cfgtune.grid import tune_grid_finer
from cfgtune.params import Boolean, Enum, FloatRange, IntRange, ParameterSpace, ParameterSpec
from cfgtune.params import preset_hadoop, preset_spark, sample_values
from cfgtune import runlog
from cfgtune.runlog import LogRecord, RunLog


class Budget:
    def __init__(self, seconds):
        self.seconds = seconds

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0
        if exc[0] is None:
            assert self.elapsed < self.seconds, f"took {self.elapsed:.2f} s, budget {self.seconds} s"


# name: (default, min, max) or (default, values) for categorical; transcribed from the parameter tables
HADOOP_TABLE = {
    "mapreduce.map.memory.mb": (1024, 256, 3072),
    "dfs.blocksize": (128, 32, 256),
    "mapreduce.tasktracker.map.tasks.maximum": (2, 2, 128),
    "mapreduce.job.reduce.slowstart.completedmaps": (0.05, 0.025, 0.9),
    "mapreduce.map.output.compress": (False, (False, True)),
    "mapreduce.job.reduces": (1, 1, 4),
    "mapreduce.task.io.sort.mb": (100, 32, 128),
    "mapreduce.job.maps": (2, 2, 32),
    "mapreduce.task.io.sort.factor": (10, 5, 80),
    "dfs.replication": (3, 1, 3),
    "mapreduce.tasktracker.reduce.tasks.maximum": (2, 2, 128),
    "mapreduce.job.jvm.numtasks": (1, 1, 1024),
}

SPARK_TABLE = {
    "spark.task.cpus": (1, 1, 5),
    "spark.memory.storageFraction": (0.5, 0.25, 0.9),
    "spark.network.timeout": (120, 40, 200),
    "spark.memory.fraction": (0.6, 0.25, 0.8),
    "spark.shuffle.file.buffer": (32, 16, 512),
    "spark.scheduler.listenerbus.eventqueue.capacity": (10000, 2500, 25000),
    "spark.files.openCostInBytes": (4194304, 1048576, 16777216),
    "spark.storage.memoryMapThreshold": (2, 1, 5),
    "spark.files.maxPartitionBytes": (134217728, 33554432, 1073741824),
    "spark.default.parallelism": (24, 4, 24),
    "spark.scheduler.mode": ("FIFO", ("FIFO", "FAIR")),
}


def _check_table(space, table):
    assert list(space.names) == list(table)
    for name, row in table.items():
        p = space.spec(name)
        assert p.default == row[0], name
        if len(row) == 3:
            assert isinstance(p.domain, (IntRange, FloatRange)), name
            assert (p.domain.min, p.domain.max) == row[1:], name
        elif isinstance(p.domain, Boolean):
            assert row[1] == (False, True), name
        else:
            assert isinstance(p.domain, Enum) and p.domain.values == row[1], name


@pytest.mark.acceptance(1, "preset fidelity")
def test_preset_fidelity():
    with Budget(1):
        h, s = preset_hadoop(), preset_spark()
        assert (len(h), len(s)) == (12, 11)
        _check_table(h, HADOOP_TABLE)
        _check_table(s, SPARK_TABLE)
        assert s.spec("spark.shuffle.file.buffer").unit_suffix == "k"
        assert s.spec("spark.storage.memoryMapThreshold").unit_suffix == "m"


@pytest.mark.acceptance(2, "grid enumeration")
def test_grid_enumeration():
    with Budget(1):
        h = preset_hadoop()
        grid = build_grid(h, hadoop_grid_options(h))
        lengths = [len(grid[n]) for n in ("mapreduce.map.memory.mb", "dfs.blocksize",
                                          "mapreduce.tasktracker.map.tasks.maximum")]
        assert lengths == [12, 8, 9]
        assert len(enumerate_grid(grid, h)) == 12 * 8 * 9 == 864

        toy = ParameterSpace((
            ParameterSpec("x", IntRange(0, 2), 0),
            ParameterSpec("y", Boolean(), False),
            ParameterSpec("z", Enum(("p", "q", "r")), "p"),
        ))
        lists = {"x": [0, 1, 2], "y": [False, True], "z": ["p", "q", "r"]}
        oracle = []
        for x in lists["x"]:
            for y in lists["y"]:
                for z in lists["z"]:
                    oracle.append({"x": x, "y": y, "z": z})
        assert [dict(c) for c in enumerate_grid(lists, toy)] == oracle


def _oracle_window(best, old_lower, dmin, dmax, integer, finer_step):
    lo = best - old_lower / 2
    hi = best + old_lower / 2
    if lo < dmin:
        lo = dmin
    if hi > dmax:
        hi = dmax
    if integer:
        lo, hi = -(-lo // 1), hi // 1
        if lo > hi:
            lo = hi = int(best)
    if finer_step:
        inc = finer_step
    else:
        inc = lo / 2
        if inc <= 0 or inc > hi - lo:
            inc = hi - lo
    if integer:
        inc = max(1, round(inc))
    return lo, hi, inc


@pytest.mark.acceptance(3, "finer-window formula")
def test_finer_window_formula():
    with Budget(5):
        mem = preset_hadoop().spec("mapreduce.map.memory.mb")
        assert finer_window(512, 256, 3072, mem) == (384, 640, 32)
        rng = random.Random(20240101)
        clamped = 0
        for _ in range(1000):
            integer = rng.random() < 0.5
            if integer:
                dmin = rng.randint(1, 400)
                dmax = dmin + rng.randint(1, 3000)
                best = rng.randint(dmin, dmax)
                old_lower = rng.randint(dmin, best)
                step = rng.choice([None, rng.randint(1, dmax - dmin)])
                domain = IntRange(dmin, dmax)
            else:
                dmin = rng.uniform(0.01, 2)
                dmax = dmin + rng.uniform(0.01, 5)
                best = rng.uniform(dmin, dmax)
                old_lower = rng.uniform(dmin, best)
                step = rng.choice([None, rng.uniform(0.001, dmax - dmin)])
                domain = FloatRange(dmin, dmax, (dmax - dmin) / 4)
            spec = ParameterSpec("p", domain, dmin, influential=True, finer_step=step)
            got = finer_window(best, old_lower, dmax, spec)
            assert got == pytest.approx(_oracle_window(best, old_lower, dmin, dmax, integer, step))
            assert dmin <= got[0] <= best <= got[1] <= dmax
            clamped += got[0] == dmin or got[1] == dmax
        assert clamped > 100


def _off_grid_model(space, rng, base_ms):
    model = CostModel.random(space, rng, base_ms=base_ms)
    terms = dict(model.terms)
    for p in space.influential():
        grid = sample_values(p)
        weight, opt = terms[p.name]
        while opt in grid:
            opt = rng.randint(p.domain.min, p.domain.max) if isinstance(p.domain, IntRange) \
                else rng.uniform(p.domain.min, p.domain.max)
        terms[p.name] = (weight, opt)
    return CostModel(model.base_ms, terms)


@pytest.mark.acceptance(4, "grid + finer optimization quality")
def test_grid_finer_quality():
    with Budget(30):
        for seed in range(20):
            rng = random.Random(seed)
            space = separable_space(rng)
            # a large base keeps integer-ms rounding from hiding sub-step improvements
            model = _off_grid_model(space, rng, 10**9)
            runner = TrialRunner(space, synthetic_evaluator(space, model))
            influential = [p.name for p in space.influential()]
            opts = GridOptions(sweep=list(space.names), finer_params=influential)
            res = tune_grid_finer(space, runner, opts)
            grid = build_grid(space, opts)
            phase1 = min((t for t in res.trials if t.phase_tag == "grid"), key=lambda t: (t.duration_ms, t.index))
            assert res.best_time_ms <= phase1.duration_ms
            for name in influential:
                spec = space.spec(name)
                _, _, inc = finer_window(phase1.config[name], grid[name][0], grid[name][-1], spec)
                err = abs(res.best_config[name] - model.terms[name][1])
                assert err <= inc + 1e-9, (seed, name, err, inc)


@pytest.mark.acceptance(5, "CRS convergence")
def test_crs_convergence():
    with Budget(60):
        close = 0
        for seed in range(20):
            rng = random.Random(1000 + seed)
            space = separable_space(rng)
            model = CostModel.random(space, rng)
            runner = TrialRunner(space, synthetic_evaluator(space, model))
            opts = CrsOptions(round_size=60, top_k=6, threshold=0.01, max_rounds=10, seed=seed)
            res = controlled_random_search(space, runner, opts)
            optimum = model.noiseless_ms(space, model.optimum(space))
            close += res.best_time_ms <= 1.05 * optimum
            incs = [p.incumbent_ms for p in res.phases]
            assert all(b <= a for a, b in zip(incs, incs[1:])), seed
            assert all(inner.within(outer) for outer, inner in zip(res.bounds, res.bounds[1:])), seed
        assert close >= 18, f"{close}/20 within 5%"


@pytest.mark.acceptance(6, "replay fixtures")
def test_replay_fixtures(fixtures_dir):
    with Budget(1):
        expected = {"hadoop-defaults": 339_000, "spark-defaults": 117_000, "hadoop-grid-finer": 99_000,
                    "spark-grid-finer": 22_000, "hadoop-crs": 171_000, "spark-crs": 26_000}
        for name, ms in expected.items():
            assert runlog.best_of(runlog.load(fixtures_dir / f"{name}.jsonl"))[1] == ms, name
        reported = {"hadoop-grid-finer": 70.8, "spark-grid-finer": 81.19, "hadoop-crs": 49.55, "spark-crs": 77.77}
        for name, pct in reported.items():
            recs = runlog.load(fixtures_dir / f"{name}.jsonl")
            got = runlog.improvement_pct(runlog.baseline_of(recs), runlog.best_of(recs)[1])
            assert abs(got - pct) <= 0.5, (name, got)


def _random_record(rng):
    event = rng.choice(runlog.EVENTS)
    text = lambda n: "".join(rng.choice("abc xyz.=\"\\é☃{}[]") for _ in range(rng.randint(0, n)))
    rec = LogRecord(event, ts=runlog.utc_now(), algorithm=rng.choice(["grid", "crs"]),
                    platform_tag=rng.choice(["hadoop", "spark"]), phase_tag=text(8), note=text(30))
    if event == "trial":
        rec.config = {f"p{i}.{text(3)}": text(6) for i in range(rng.randint(0, 12))}
        rec.status = rng.choice(runlog.STATUSES)
        rec.duration_ms = rng.randint(1, 10**9) if rec.status == "ok" else None
        rec.trial = rng.randint(0, 10**5)
    return rec


@pytest.mark.acceptance(7, "log round-trip")
def test_log_roundtrip(tmp_path):
    with Budget(5):
        rng = random.Random(7)
        recs = [_random_record(rng) for _ in range(1000)]
        path = tmp_path / "run.jsonl"
        with RunLog(path) as sink:
            for r in recs:
                sink.append(r)
        assert runlog.load(path) == recs

        data = path.read_bytes()
        path.write_bytes(data[: len(data) - 7])
        problems = []
        assert runlog.load(path, problems) == recs[:-1]
        assert [p[0] for p in problems] == [1000]


@pytest.mark.acceptance(8, "determinism")
def test_determinism(tmp_path):
    with Budget(30):
        for space_name in ("spark", "hadoop"):
            model_path = tmp_path / f"{space_name}.json"
            space = preset_spark() if space_name == "spark" else preset_hadoop()
            model_path.write_text(CostModel.random(space, random.Random(5), noise_sd=25, seed=5).to_json())
            for algorithm in ("grid", "crs"):
                outs = []
                for run in range(2):
                    out = tmp_path / f"{space_name}-{algorithm}-{run}.json"
                    code = main(["tune", "--algorithm", algorithm, "--space", space_name, "--model", str(model_path),
                                 "--seed", "3", "--log", str(tmp_path / f"{out.stem}.jsonl"), "--out", str(out)])
                    assert code == 0
                    outs.append(out.read_bytes())
                assert outs[0] == outs[1], (space_name, algorithm)
                assert json.loads(outs[0])["best_config"]


STUB = """#!/bin/sh
t0=$(date +%s%N)
sleep "$1"
t1=$(date +%s%N)
echo $(( (t1 - t0) / 1000000 )) >> "$REPORT"
"""


def _gone(pid):
    stat = Path(f"/proc/{pid}/stat")
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return True
    return not stat.exists() or stat.read_text().split()[2] == "Z"


@pytest.mark.acceptance(9, "command evaluator timing")
def test_command_timing(tmp_path, monkeypatch):
    with Budget(60):
        stub = tmp_path / "stub.sh"
        stub.write_text(STUB)
        stub.chmod(0o755)
        report = tmp_path / "report"
        monkeypatch.setenv("REPORT", str(report))
        space = ParameterSpace((ParameterSpec("sleep_ms", IntRange(50, 1000, 50), 100),))
        ev = command_evaluator(space, PlatformProfile(run=f"{stub} $(echo \"$TUNE_ARGS\" | awk '{{print $1/1000}}')",
                                                      arg_template="${sleep_ms}", timeout=10))
        programmed = [100, 200, 350, 500, 800]
        measured = [ev.evaluate(space.configuration({"sleep_ms": ms})) for ms in programmed]
        reported = [int(x) for x in report.read_text().split()]
        for p, m, r in zip(programmed, measured, reported):
            assert abs(m - p) <= 50, (p, m)
            assert abs(m - r) <= 50, (r, m)

        flag = tmp_path / "ran"
        aborting = command_evaluator(space, PlatformProfile(run=f"touch {flag}", pre_run=("exit 7",)))
        with pytest.raises(TrialFailed):
            aborting.evaluate(space.defaults())
        assert not flag.exists()

        pidfile = tmp_path / "pid"
        slow = command_evaluator(space, PlatformProfile(
            run=f"sh -c 'sleep 60 & echo $! > {pidfile}; wait'", timeout=0.5))
        t0 = time.perf_counter()
        with pytest.raises(TrialTimeout):
            slow.evaluate(space.defaults())
        assert time.perf_counter() - t0 < 5
        pid = int(pidfile.read_text())
        deadline = time.monotonic() + 3
        while not _gone(pid) and time.monotonic() < deadline:
            time.sleep(0.05)
        assert _gone(pid)


@pytest.mark.acceptance(10, "parallel-sequential equivalence")
def test_parallel_equivalence():
    with Budget(30):
        for space in (preset_hadoop(), preset_spark()):
            model = CostModel.random(space, random.Random(11), noise_sd=40, seed=11)
            ev = synthetic_evaluator(space, model)
            grid = build_grid(space, GridOptions(sweep=[p.name for p in space.params[:4]]))
            configs = enumerate_grid(grid, space)
            seq = grid_search(configs, TrialRunner(space, ev, max_parallel=1))
            par = grid_search(configs, TrialRunner(space, ev, max_parallel=8))
            assert (seq.best_config, seq.best_time_ms) == (par.best_config, par.best_time_ms)
            assert [t.duration_ms for t in seq.trials] == [t.duration_ms for t in par.trials]

            opts = CrsOptions(round_size=60, top_k=6)
            a = random_round(space, Bounds.full(space), opts, TrialRunner(space, ev, max_parallel=1), random.Random(2))
            b = random_round(space, Bounds.full(space), opts, TrialRunner(space, ev, max_parallel=8), random.Random(2))
            assert a.topk == b.topk
            assert (a.best.config, a.best.duration_ms) == (b.best.config, b.best.duration_ms)
