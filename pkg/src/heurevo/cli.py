"""Command line front end.

Subcommands: run, resume, export, baselines, gen-instances. `run` takes an
optional JSON config file whose keys mirror RunSpec; explicit flags override
config values and `--set dotted.key=value` reaches nested eval/backend
fields. Exit codes from a run: 0 done, 2 nothing feasible during
initialization, 3 rejected credentials, 4 unknown baseline name.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
from pathlib import Path

from . import orchestrator
from .core import STRATEGY_ORDER
from .orchestrator import BaselineOptions, RunSpec
from .prompts import REPRESENTATION_MODES
from .sources import PROBLEMS


def _parse_set(entry: str) -> tuple[list[str], object]:
    if "=" not in entry:
        raise ValueError("--set needs key=value, got %r" % entry)
    key, raw = entry.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.split("."), value


def _apply_set(data: dict, path: list[str], value: object) -> None:
    node = data
    for part in path[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ValueError("--set path %s crosses a non-object" % ".".join(path))
    node[path[-1]] = value


def _spec_from_args(args: argparse.Namespace) -> RunSpec:
    data: dict = {}
    if args.config:
        loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        if not isinstance(loaded, dict):
            raise ValueError("config file must hold a JSON object")
        data = copy.deepcopy(loaded)
    overrides = {
        "problem": args.problem,
        "pop_size": args.pop,
        "generations": args.gens,
        "seed": args.seed,
        "representation_mode": args.mode,
        "parents_per_prompt": args.parents,
        "evaluator": args.evaluator,
        "max_concurrent": args.max_concurrent,
    }
    for key, value in overrides.items():
        if value is not None:
            data[key] = value
    if args.strategies is not None:
        data["strategies"] = [s.strip() for s in args.strategies.split(",") if s.strip()]
    if args.backend is not None:
        data.setdefault("backend", {})["kind"] = args.backend
    for entry in args.set or []:
        path, value = _parse_set(entry)
        _apply_set(data, path, value)
    return orchestrator.make_spec(data)


def _baseline_options(args: argparse.Namespace) -> BaselineOptions:
    opts = BaselineOptions()
    for name in ("count", "seed0", "n_items", "capacity", "cities",
                 "jobs", "machines", "instances"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(opts, name, value)
    if getattr(args, "strict_rest", False):
        opts.strict_rest = True
    return opts


def _cmd_run(args: argparse.Namespace) -> int:
    spec = _spec_from_args(args)
    code, run_dir = orchestrator.cmd_run(spec, out=args.out, runs_root=args.runs_root)
    print(run_dir)
    return code


def _cmd_resume(args: argparse.Namespace) -> int:
    code, run_dir = orchestrator.cmd_resume(args.run_dir)
    print(run_dir)
    return code


def _cmd_export(args: argparse.Namespace) -> int:
    code, target = orchestrator.cmd_export(args.run_dir, args.what, out=args.out)
    print(target)
    return code


def _cmd_baselines(args: argparse.Namespace) -> int:
    names = [s.strip() for s in args.names.split(",") if s.strip()]
    code, target = orchestrator.cmd_baselines(args.problem, names, args.out,
                                              _baseline_options(args))
    print(target)
    return code


def _cmd_gen_instances(args: argparse.Namespace) -> int:
    out = args.out or "%s_instances.json" % args.problem
    code, target = orchestrator.cmd_gen_instances(args.problem, out,
                                                  _baseline_options(args))
    print(target)
    return code


def _add_instance_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--count", type=int, help="number of instances")
    sub.add_argument("--seed0", type=int, help="seed of the first instance")
    sub.add_argument("--n-items", dest="n_items", type=int,
                     help="bin packing: items per instance")
    sub.add_argument("--capacity", type=int, help="bin packing: bin capacity")
    sub.add_argument("--cities", type=int, help="tsp: cities per instance")
    sub.add_argument("--jobs", type=int, help="fssp: jobs per instance")
    sub.add_argument("--machines", type=int, help="fssp: machines per instance")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="heurevo",
                                     description="LLM-driven heuristic evolution")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="start a fresh evolution run")
    run.add_argument("--config", help="JSON config file, keys mirror RunSpec")
    run.add_argument("--problem", choices=PROBLEMS)
    run.add_argument("--backend", choices=("mock", "http"))
    run.add_argument("--pop", type=int, help="population size")
    run.add_argument("--gens", type=int, help="number of generations")
    run.add_argument("--seed", type=int, help="run seed")
    run.add_argument("--strategies", help="comma list, e.g. E1,E2,M1")
    run.add_argument("--mode", choices=REPRESENTATION_MODES,
                     help="representation mode")
    run.add_argument("--parents", type=int, help="parents per crossover prompt")
    run.add_argument("--evaluator", choices=orchestrator.EVALUATOR_KINDS)
    run.add_argument("--max-concurrent", dest="max_concurrent", type=int)
    run.add_argument("--out", help="run directory (default runs/<run_id>)")
    run.add_argument("--runs-root", dest="runs_root", default="runs")
    run.add_argument("--set", action="append", metavar="KEY=VALUE",
                     help="override any config field, e.g. eval.n_items=500")
    run.set_defaults(func=_cmd_run)

    resume = sub.add_parser("resume", help="continue a run from its last checkpoint")
    resume.add_argument("run_dir")
    resume.set_defaults(func=_cmd_resume)

    export = sub.add_parser("export", help="derive files from a finished run")
    export.add_argument("run_dir")
    export.add_argument("what", choices=("convergence", "best-code"))
    export.add_argument("--out", help="target file (default inside the run dir)")
    export.set_defaults(func=_cmd_export)

    baselines = sub.add_parser("baselines", help="score built-in baselines to CSV")
    baselines.add_argument("--problem", choices=PROBLEMS, required=True)
    baselines.add_argument("--names", required=True, help="comma list of baselines")
    baselines.add_argument("--out", default="baselines.csv")
    baselines.add_argument("--strict-rest", dest="strict_rest", action="store_true",
                           help="bin packing: forbid placements that leave rest == 0")
    baselines.add_argument("--instances", help="instance file instead of generated sets")
    _add_instance_flags(baselines)
    baselines.set_defaults(func=_cmd_baselines)

    gen = sub.add_parser("gen-instances", help="write an instance file")
    gen.add_argument("--problem", choices=PROBLEMS, required=True)
    gen.add_argument("--out", help="target file (default <problem>_instances.json)")
    _add_instance_flags(gen)
    gen.set_defaults(func=_cmd_gen_instances)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except orchestrator.UnknownBaseline as exc:
        print("error: %s" % exc, file=sys.stderr)
        return orchestrator.EXIT_BAD_BASELINE
    except orchestrator.CorruptCheckpoint as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
