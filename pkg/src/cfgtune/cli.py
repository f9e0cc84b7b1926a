"""Command line entry point: ``cfgtune tune | best | presets``.

Exit codes: 0 success, 1 invalid arguments, 2 evaluator or infrastructure
failure, 3 the search (or log) has no successful trial.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import runlog
from .cmpe import EvaluatorError, TrialRunner, command_evaluator, load_model, load_profile, load_replay
from .cmpe import synthetic_evaluator
from .crs import CANNED_BOUNDS, Bounds, CrsOptions, controlled_random_search
from .grid import CANNED_OPTIONS, GridOptions, build_grid, grid_size, tune_grid_finer
from .params import PRESETS, dump_space, load_space, parse_value, render_config
from .result import NoIncumbent, best_trial

LOG_DIR_ENV = "CFGTUNE_LOG_DIR"

EXIT_OK, EXIT_USAGE, EXIT_INFRA, EXIT_NO_INCUMBENT = 0, 1, 2, 3

log = logging.getLogger("cfgtune")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _csv(text: str) -> list[str]:
    return [s.strip() for s in text.split(",") if s.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cfgtune", description="Black-box configuration tuner for batch data platforms.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("tune", help="run a tuner and report the best configuration")
    t.add_argument("--algorithm", action="append", choices=["grid", "crs"], required=True)
    t.add_argument("--space", required=True, help="preset name (hadoop, spark) or space file")
    src = t.add_mutually_exclusive_group(required=True)
    src.add_argument("--profile", help="platform profile file (runs real commands)")
    src.add_argument("--model", help="synthetic cost-model file")
    src.add_argument("--replay", help="run log whose ok trials are replayed")
    t.add_argument("--log", help=f"trial log path (default: ${LOG_DIR_ENV}/cfgtune-<algorithm>-<platform>.jsonl)")
    t.add_argument("--out", help="write the structured summary here as well as to stdout")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--baseline", action="store_true", help="evaluate the all-defaults config first")
    t.add_argument("--max-parallel", type=int, default=1)
    t.add_argument("--fix", action="append", default=[], metavar="NAME=VALUE",
                   help="pin a parameter (grid: fixed value, crs: collapsed bounds)")
    t.add_argument("--canned", action=argparse.BooleanOptionalAction, default=True,
                   help="use the built-in sweep/bounds for preset spaces")
    g = t.add_argument_group("grid")
    g.add_argument("--sweep", type=_csv, help="comma-separated parameters to sweep")
    g.add_argument("--finer", type=_csv, help="comma-separated influential parameters to refine")
    g.add_argument("--max-trials", type=int)
    c = t.add_argument_group("crs")
    c.add_argument("--round-size", type=int, default=60)
    c.add_argument("--top-k", type=int, default=6)
    c.add_argument("--threshold", type=float, default=0.01)
    c.add_argument("--max-rounds", type=int, default=10)
    c.add_argument("--contract", type=_csv, help="only contract bounds of these parameters")

    b = sub.add_parser("best", help="print the best trial recorded in a log")
    b.add_argument("--log", required=True)

    p = sub.add_parser("presets", help="dump a built-in parameter space")
    p.add_argument("--space", required=True)
    return parser


def _parse_fixes(space, items: list[str]) -> dict:
    out = {}
    for item in items:
        name, sep, text = item.partition("=")
        if not sep:
            raise UsageError(f"--fix expects NAME=VALUE, got {item!r}")
        try:
            out[name] = parse_value(space.spec(name), text)
        except (KeyError, ValueError) as exc:
            raise UsageError(f"--fix {item}: {exc}") from None
    return out


def _evaluator(args, space):
    if args.profile:
        return command_evaluator(space, load_profile(args.profile))
    if args.model:
        return synthetic_evaluator(space, load_model(args.model, space))
    return load_replay(args.replay, space)


def _grid_options(args, space, fixes) -> GridOptions:
    canned = CANNED_OPTIONS.get(space.platform_tag) if args.canned and args.space in PRESETS else None
    if args.sweep is None and canned is not None:
        opts = canned(space)
        sweep = [n for n in opts.sweep if n not in fixes]
        fixed = {**opts.fixed, **fixes}
        finer = opts.finer_params
    else:
        sweep = [n for n in (args.sweep if args.sweep is not None else space.names) if n not in fixes]
        fixed = fixes
        finer = [p.name for p in space.influential()]
    if args.finer is not None:
        finer = args.finer
    return GridOptions(sweep=sweep, fixed=fixed, finer_params=finer, max_trials=args.max_trials)


def _crs_bounds(args, space, fixes) -> Bounds:
    canned = CANNED_BOUNDS.get(space.platform_tag) if args.canned and args.space in PRESETS else None
    bounds = canned(space) if canned else Bounds.full(space)
    return bounds.with_pins(space, fixes) if fixes else bounds


def cmd_tune(args) -> int:
    if len(args.algorithm) != 1:
        raise UsageError(f"--algorithm given {len(args.algorithm)} times; pick one")
    algorithm = args.algorithm[0]
    try:
        space = load_space(args.space)
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"--space {args.space}: {exc}") from None
    fixes = _parse_fixes(space, args.fix)
    try:
        if algorithm == "grid":
            grid_opts = _grid_options(args, space, fixes)
            size = grid_size(build_grid(space, grid_opts))
            if grid_opts.max_trials is not None and size > grid_opts.max_trials:
                raise UsageError(f"grid has {size} configurations, more than --max-trials {grid_opts.max_trials}")
        else:
            crs_opts = CrsOptions(args.round_size, args.top_k, args.threshold, args.max_rounds, args.seed,
                                  args.contract)
            crs_opts.check()
            bounds = _crs_bounds(args, space, fixes)
    except (KeyError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    if args.max_parallel < 1:
        raise UsageError("--max-parallel must be >= 1")

    evaluator = _evaluator(args, space)
    log_path = Path(args.log) if args.log else (
        Path(os.environ.get(LOG_DIR_ENV, ".")) / f"cfgtune-{algorithm}-{space.platform_tag}.jsonl")

    with runlog.RunLog(log_path) as sink:
        runner = TrialRunner(space, evaluator, sink, algorithm, args.max_parallel)
        runner.event("run_start", note=json.dumps({"seed": args.seed, "space": args.space}))
        baseline = None
        if args.baseline:
            baseline = runner.run([space.defaults()], "baseline")[0]
        if algorithm == "grid":
            result = tune_grid_finer(space, runner, grid_opts)
        else:
            result = controlled_random_search(space, runner, crs_opts, bounds)
        best = best_trial(result.trials, baseline if baseline and baseline.ok else None)
        runner.event("run_end", note=json.dumps({"best_ms": best.duration_ms}))

    summary = {
        "algorithm": algorithm,
        "platform": space.platform_tag,
        "best_config": render_config(space, best.config),
        "best_time_ms": best.duration_ms,
        "trials": len(runner.trials),
        "phases": [{"tag": p.tag, "trials": p.trials, "incumbent_ms": p.incumbent_ms} for p in result.phases],
        "baseline_ms": baseline.duration_ms if baseline and baseline.ok else None,
        "improvement_pct": None,
        "warnings": list(result.warnings),
    }
    if summary["baseline_ms"]:
        summary["improvement_pct"] = round(runlog.improvement_pct(summary["baseline_ms"], best.duration_ms), 2)
    text = json.dumps(summary, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    msg = f"best {best.duration_ms} ms after {len(runner.trials)} trials (log: {log_path})"
    if summary["improvement_pct"] is not None:
        msg += f", {summary['improvement_pct']}% faster than defaults"
    print(msg, file=sys.stderr)
    return EXIT_OK


def cmd_best(args) -> int:
    try:
        records = runlog.load(args.log)
    except OSError as exc:
        print(f"cannot read log: {exc}", file=sys.stderr)
        return EXIT_INFRA
    try:
        config, ms, ts = runlog.best_of(records)
    except runlog.NoSuccessfulTrial as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_NO_INCUMBENT
    out = {"best_config": config, "duration_ms": ms, "ts": ts}
    baseline = runlog.baseline_of(records)
    if baseline:
        out["improvement_pct"] = round(runlog.improvement_pct(baseline, ms), 2)
    sys.stdout.write(json.dumps(out, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_presets(args) -> int:
    if args.space not in PRESETS:
        raise UsageError(f"unknown preset {args.space!r}; choose from {', '.join(sorted(PRESETS))}")
    sys.stdout.write(dump_space(PRESETS[args.space]()))
    return EXIT_OK


COMMANDS = {"tune": cmd_tune, "best": cmd_best, "presets": cmd_presets}


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except NoIncumbent as exc:
        print(f"no incumbent: {exc}", file=sys.stderr)
        return EXIT_NO_INCUMBENT
    except (EvaluatorError, OSError, ValueError) as exc:
        print(f"evaluation failed: {exc}", file=sys.stderr)
        return EXIT_INFRA


if __name__ == "__main__":
    sys.exit(main())
