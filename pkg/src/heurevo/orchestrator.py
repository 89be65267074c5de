"""Run orchestration: on-disk artifacts, resume, baselines, exports.

A run directory is the unit of persistence:

    config.json             resolved settings plus run_id
    candidates.jsonl        one record per attempt, append-only
    population_gen_<g>.json elitist population after generation g (0 = init)
    best.json               record of the current best member
    convergence.csv         generation,best_fitness,mean_fitness
    queries.txt             cumulative LLM query count

Records are the source of truth: every checkpoint stores the same JSON
objects that were appended to candidates.jsonl, so folding the record
stream back through the merge reproduces each checkpoint byte for byte.
The checkpoint lands last in each generation and carries the query count,
so resume trusts only records plus the newest checkpoint and rebuilds the
derived files, which may be ahead after a crash, from those.
"""

from __future__ import annotations

import dataclasses
import json
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

from . import binpacking, core, fssp, problems, tsp
from .backend import AuthError, Backend, BackendConfig, stable_hash
from .core import Heuristic, Population
from .mockpool import pool_for
from .pipeline import DesignPipeline
from .sandbox import NativeRegistryEvaluator, SandboxEvaluator

EXIT_OK = 0
EXIT_NO_FEASIBLE = 2
EXIT_AUTH = 3
EXIT_BAD_BASELINE = 4

CONFIG_NAME = "config.json"
CANDIDATES_NAME = "candidates.jsonl"
BEST_NAME = "best.json"
CONVERGENCE_NAME = "convergence.csv"
QUERIES_NAME = "queries.txt"
CONVERGENCE_HEADER = "generation,best_fitness,mean_fitness"
_POPULATION_RE = re.compile(r"population_gen_(\d+)\.json$")

EVALUATOR_KINDS = ("sandbox", "native")


class CorruptCheckpoint(RuntimeError):
    """A run directory artifact is missing or does not parse."""


class UnknownBaseline(ValueError):
    """A requested baseline name is not in the problem's registry."""


# ---------------------------------------------------------------------------
# Run specification. `eval` and `backend` hold plain-dict overrides so a
# config file round-trips through JSON without bespoke encoders.
# ---------------------------------------------------------------------------


@dataclass
class RunSpec:
    problem: str = "binpacking"
    pop_size: int = 4
    generations: int = 3
    parents_per_prompt: int | None = None
    strategies: tuple[str, ...] = core.STRATEGY_ORDER
    representation_mode: str = "FULL"
    seed: int = 0
    max_concurrent: int = 4
    init_retry_rounds: int = 3
    seed_heuristics: tuple[str, ...] = ()
    evaluator: str = "sandbox"
    eval: dict = field(default_factory=dict)
    backend: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.problem not in problems.SETTINGS_TYPES:
            raise ValueError("unknown problem %r" % self.problem)
        if self.evaluator not in EVALUATOR_KINDS:
            raise ValueError("evaluator must be one of %s" % (EVALUATOR_KINDS,))
        self.strategies = tuple(self.strategies)
        self.seed_heuristics = tuple(self.seed_heuristics)


def eval_settings(spec: RunSpec):
    cls = problems.SETTINGS_TYPES[spec.problem]
    try:
        return cls(**{**dataclasses.asdict(cls()), **spec.eval})
    except TypeError as exc:
        raise ValueError("bad eval settings for %s: %s" % (spec.problem, exc)) from None


def backend_config(spec: RunSpec) -> BackendConfig:
    try:
        return BackendConfig(**spec.backend)
    except TypeError as exc:
        raise ValueError("bad backend settings: %s" % exc) from None


def resolved_config(spec: RunSpec) -> dict:
    """Fully resolved settings, with eval/backend defaults filled in."""
    return {
        "problem": spec.problem,
        "pop_size": spec.pop_size,
        "generations": spec.generations,
        "parents_per_prompt": spec.parents_per_prompt,
        "strategies": list(spec.strategies),
        "representation_mode": spec.representation_mode,
        "seed": spec.seed,
        "max_concurrent": spec.max_concurrent,
        "init_retry_rounds": spec.init_retry_rounds,
        "seed_heuristics": list(spec.seed_heuristics),
        "evaluator": spec.evaluator,
        "eval": dataclasses.asdict(eval_settings(spec)),
        "backend": dataclasses.asdict(backend_config(spec)),
    }


def make_spec(data: dict) -> RunSpec:
    """RunSpec from a plain dict, rejecting unknown keys."""
    fields = {f.name for f in dataclasses.fields(RunSpec)}
    unknown = sorted(set(data) - fields - {"run_id"})
    if unknown:
        raise ValueError("unknown config key(s): %s" % ", ".join(unknown))
    return RunSpec(**{k: v for k, v in data.items() if k in fields})


def spec_from_config(config: dict) -> RunSpec:
    return make_spec(config)


def compute_run_id(config: dict) -> str:
    canonical = json.dumps({k: v for k, v in config.items() if k != "run_id"},
                           sort_keys=True, separators=(",", ":"))
    return "%016x" % stable_hash(canonical)


# ---------------------------------------------------------------------------
# Record serialization. Field order is fixed so reruns are byte-identical.
# ---------------------------------------------------------------------------


def record_dict(h: Heuristic, run_id: str, timestamp: int) -> dict:
    meta = h.meta or {}
    return {
        "id": h.id,
        "thought": h.thought,
        "code": h.code,
        "fitness": h.fitness,
        "raw_score": h.raw_score,
        "generation": h.generation,
        "strategy": h.strategy,
        "parent_ids": list(h.parent_ids),
        "feasible": h.feasible,
        "error": h.error,
        "prompt_hash": int(meta.get("prompt_hash", 0)),
        "reply_hash": int(meta.get("reply_hash", 0)),
        "eval_wall_ms": int(meta.get("eval_wall_ms", 0)),
        "timestamp": int(timestamp),
        "run_id": run_id,
        "representation_mode": str(meta.get("representation_mode", "FULL")),
    }


def heuristic_from_record(rec: dict) -> Heuristic:
    return Heuristic(
        id=rec["id"], thought=rec["thought"], code=rec["code"],
        fitness=rec["fitness"], raw_score=rec["raw_score"],
        generation=rec["generation"], strategy=rec["strategy"],
        parent_ids=list(rec["parent_ids"]), feasible=rec["feasible"],
        error=rec["error"],
        meta={"prompt_hash": rec["prompt_hash"], "reply_hash": rec["reply_hash"],
              "eval_wall_ms": rec["eval_wall_ms"],
              "representation_mode": rec["representation_mode"]})


def _dump_record(rec: dict) -> str:
    return json.dumps(rec, separators=(",", ":"))


def _fmt_float(value: float) -> str:
    return repr(float(value))


def replay_populations(records: Sequence[Heuristic],
                       capacity: int) -> Iterator[tuple[int, Population]]:
    """Fold the record stream through the merge, one population per generation."""
    pop = Population(members=[], capacity=capacity)
    for gen in sorted({r.generation for r in records}):
        batch = [r for r in records if r.generation == gen]
        pop = core.manage_population(pop, batch, capacity)
        yield gen, pop


# ---------------------------------------------------------------------------
# Artifact writer. Single writer per run directory; every append is flushed
# before the next step so a crash can lose at most the in-flight generation.
# ---------------------------------------------------------------------------


class RunWriter:

    def __init__(self, run_dir: str | Path, run_id: str, logical_clock: bool):
        self.run_dir = Path(run_dir)
        self.run_id = run_id
        # Mock runs stamp records with their ordinal so reruns match bytewise.
        self.logical_clock = logical_clock
        self._n_records = 0
        self._queries_base = 0
        self._record_by_id: dict[str, dict] = {}

    def path(self, name: str) -> Path:
        return self.run_dir / name

    def population_path(self, gen: int) -> Path:
        return self.run_dir / ("population_gen_%d.json" % gen)

    def start_fresh(self, config: dict) -> None:
        self.run_dir.mkdir(parents=True, exist_ok=True)
        for old in self.run_dir.iterdir():
            if _POPULATION_RE.match(old.name) or old.name in (
                    CANDIDATES_NAME, BEST_NAME, QUERIES_NAME, "best.code.txt"):
                old.unlink()
        self.path(CONFIG_NAME).write_text(
            json.dumps(config, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        self.path(CANDIDATES_NAME).write_text("", encoding="utf-8")
        self.path(CONVERGENCE_NAME).write_text(CONVERGENCE_HEADER + "\n", encoding="utf-8")
        self.path(QUERIES_NAME).write_text("0\n", encoding="utf-8")

    def resume_state(self, kept: Sequence[dict], queries_base: int) -> None:
        for rec in kept:
            self._record_by_id[rec["id"]] = rec
        self._n_records = len(kept)
        self._queries_base = queries_base

    def append_records(self, records: Sequence[Heuristic]) -> None:
        lines = []
        for h in records:
            stamp = self._n_records if self.logical_clock else int(time.time() * 1000)
            rec = record_dict(h, self.run_id, stamp)
            self._n_records += 1
            self._record_by_id[h.id] = rec
            lines.append(_dump_record(rec))
        with open(self.path(CANDIDATES_NAME), "a", encoding="utf-8") as fh:
            fh.write("".join(line + "\n" for line in lines))
            fh.flush()

    def write_population(self, gen: int, population: Population,
                         queries: int) -> None:
        payload = {"generation": gen, "capacity": population.capacity,
                   "queries": queries,
                   "members": [self._record_by_id[m.id] for m in population.members]}
        self.population_path(gen).write_text(
            json.dumps(payload, indent=2) + "\n", encoding="utf-8")

    def append_convergence(self, gen: int, best: float, mean: float) -> None:
        with open(self.path(CONVERGENCE_NAME), "a", encoding="utf-8") as fh:
            fh.write("%d,%s,%s\n" % (gen, _fmt_float(best), _fmt_float(mean)))
            fh.flush()

    def write_best(self, population: Population) -> None:
        rec = self._record_by_id[population.best.id]
        self.path(BEST_NAME).write_text(
            json.dumps(rec, indent=2) + "\n", encoding="utf-8")

    def write_queries(self, backend_count: int) -> int:
        total = self._queries_base + backend_count
        self.path(QUERIES_NAME).write_text("%d\n" % total, encoding="utf-8")
        return total


# ---------------------------------------------------------------------------
# Stack assembly and the generation loop shared by run and resume.
# ---------------------------------------------------------------------------


@dataclass
class RunStack:
    problem: problems.ProblemHandle
    backend: Backend
    evaluator: object
    pipeline: DesignPipeline
    config: core.RunConfig

    def close(self) -> None:
        close = getattr(self.evaluator, "close", None)
        if close is not None:
            close()


def build_stack(spec: RunSpec) -> RunStack:
    settings = eval_settings(spec)
    problem = problems.make_problem(spec.problem, settings)
    bcfg = backend_config(spec)
    pool = pool_for(spec.problem) if bcfg.kind == "mock" else None
    backend = Backend(bcfg, pool=pool, rng_seed=spec.seed)
    if spec.evaluator == "native":
        evaluator = NativeRegistryEvaluator()
    else:
        evaluator = SandboxEvaluator(pool_size=spec.max_concurrent)
    pipeline = DesignPipeline(problem, backend, evaluator,
                              mode=spec.representation_mode, eval_seed=spec.seed)
    config = core.RunConfig(
        pop_size=spec.pop_size, generations=spec.generations,
        parents_per_prompt=spec.parents_per_prompt,
        enabled_strategies=spec.strategies,
        representation_mode=spec.representation_mode,
        rng_seed=spec.seed, seed_heuristics=list(spec.seed_heuristics),
        max_concurrent=spec.max_concurrent,
        init_retry_rounds=spec.init_retry_rounds)
    return RunStack(problem, backend, evaluator, pipeline, config)


def _convergence_row(population: Population) -> tuple[float, float]:
    fits = population.fitnesses()
    return float(min(fits)), float(np.mean(fits))


def _drive(stack: RunStack, writer: RunWriter, population: Population,
           start_gen: int) -> int:
    config = stack.config
    for gen in range(start_gen, config.generations + 1):
        try:
            population, records = core.evolve_generation(
                population, config, gen, stack.pipeline)
        except AuthError:
            writer.write_queries(stack.backend.query_count)
            return EXIT_AUTH
        writer.append_records(records)
        best, mean = _convergence_row(population)
        writer.append_convergence(gen, best, mean)
        writer.write_best(population)
        total = writer.write_queries(stack.backend.query_count)
        # The checkpoint goes last: its existence certifies that every
        # artifact for this generation, query count included, is on disk.
        writer.write_population(gen, population, total)
    return EXIT_OK


def run_dir_for(spec: RunSpec, out: str | Path | None,
                runs_root: str | Path = "runs") -> tuple[Path, str, dict]:
    config = resolved_config(spec)
    run_id = compute_run_id(config)
    run_dir = Path(out) if out is not None else Path(runs_root) / run_id
    return run_dir, run_id, config


def cmd_run(spec: RunSpec, out: str | Path | None = None,
            runs_root: str | Path = "runs") -> tuple[int, Path]:
    run_dir, run_id, config = run_dir_for(spec, out, runs_root)
    stack = build_stack(spec)
    writer = RunWriter(run_dir, run_id,
                       logical_clock=stack.backend.config.kind == "mock")
    writer.start_fresh({**config, "run_id": run_id})
    try:
        try:
            population, records = core.initialize(stack.config, stack.pipeline)
        except core.NoFeasibleInitial as exc:
            writer.append_records(exc.records or [])
            writer.write_queries(stack.backend.query_count)
            return EXIT_NO_FEASIBLE, run_dir
        except AuthError:
            writer.write_queries(stack.backend.query_count)
            return EXIT_AUTH, run_dir
        writer.append_records(records)
        writer.write_best(population)
        total = writer.write_queries(stack.backend.query_count)
        writer.write_population(0, population, total)
        return _drive(stack, writer, population, 1), run_dir
    finally:
        stack.close()


# ---------------------------------------------------------------------------
# Resume. Records newer than the latest checkpoint are dropped, then the
# generation loop continues; attempt seeds make the result identical to an
# uninterrupted run.
# ---------------------------------------------------------------------------


def read_config(run_dir: str | Path) -> dict:
    path = Path(run_dir) / CONFIG_NAME
    try:
        config = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CorruptCheckpoint("cannot read %s: %s" % (path, exc)) from None
    if "run_id" not in config:
        raise CorruptCheckpoint("%s has no run_id" % path)
    return config


def read_records(run_dir: str | Path) -> list[dict]:
    path = Path(run_dir) / CANDIDATES_NAME
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise CorruptCheckpoint("cannot read %s: %s" % (path, exc)) from None
    records = []
    for i, line in enumerate(text.splitlines()):
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise CorruptCheckpoint(
                "%s line %d does not parse: %s" % (path, i + 1, exc)) from None
    return records


def latest_checkpoint(run_dir: str | Path) -> tuple[int, dict]:
    found = []
    for path in Path(run_dir).iterdir():
        match = _POPULATION_RE.match(path.name)
        if match:
            found.append((int(match.group(1)), path))
    if not found:
        raise CorruptCheckpoint("no population checkpoint in %s" % run_dir)
    gen, path = max(found)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CorruptCheckpoint("cannot read %s: %s" % (path, exc)) from None
    if (payload.get("generation") != gen or "members" not in payload
            or "queries" not in payload):
        raise CorruptCheckpoint("%s is inconsistent" % path)
    return gen, payload


def _truncate_candidates(run_dir: Path, upto_gen: int) -> list[dict]:
    """Drop records of generations after upto_gen, preserving original bytes."""
    path = run_dir / CANDIDATES_NAME
    kept_lines, kept = [], []
    for line in path.read_text(encoding="utf-8").splitlines():
        rec = json.loads(line)
        if rec["generation"] <= upto_gen:
            kept_lines.append(line)
            kept.append(rec)
    path.write_text("".join(line + "\n" for line in kept_lines), encoding="utf-8")
    return kept


def _truncate_convergence(run_dir: Path, upto_gen: int) -> None:
    path = run_dir / CONVERGENCE_NAME
    if not path.exists():
        path.write_text(CONVERGENCE_HEADER + "\n", encoding="utf-8")
        return
    lines = path.read_text(encoding="utf-8").splitlines()
    kept = [CONVERGENCE_HEADER]
    for line in lines[1:]:
        if line and int(line.split(",", 1)[0]) <= upto_gen:
            kept.append(line)
    path.write_text("".join(line + "\n" for line in kept), encoding="utf-8")


def cmd_resume(run_dir: str | Path) -> tuple[int, Path]:
    run_dir = Path(run_dir)
    config = read_config(run_dir)
    spec = spec_from_config(config)
    gen0, payload = latest_checkpoint(run_dir)
    if gen0 >= spec.generations:
        return EXIT_OK, run_dir
    # Records are flushed before their checkpoint, so a member without a
    # candidate line means the store is corrupt, not interrupted. Check
    # before touching anything so a bad directory is left as found.
    kept_ids = {rec["id"] for rec in read_records(run_dir)
                if int(rec["generation"]) <= gen0}
    missing = sorted(rec["id"] for rec in payload["members"]
                     if rec["id"] not in kept_ids)
    if missing:
        raise CorruptCheckpoint(
            "checkpoint %d references records missing from %s: %s"
            % (gen0, CANDIDATES_NAME, ", ".join(missing)))
    for path in run_dir.iterdir():
        match = _POPULATION_RE.match(path.name)
        if match and int(match.group(1)) > gen0:
            path.unlink()
    kept = _truncate_candidates(run_dir, gen0)
    _truncate_convergence(run_dir, gen0)
    # queries.txt can be ahead of the checkpoint after a crash, so the
    # count stored inside the checkpoint is the only trusted base.
    queries_base = int(payload["queries"])
    members = [heuristic_from_record(rec) for rec in payload["members"]]
    population = Population(members=members, capacity=int(payload["capacity"]))
    stack = build_stack(spec)
    writer = RunWriter(run_dir, config["run_id"],
                       logical_clock=stack.backend.config.kind == "mock")
    writer.resume_state(kept, queries_base)
    try:
        return _drive(stack, writer, population, gen0 + 1), run_dir
    finally:
        stack.close()


# ---------------------------------------------------------------------------
# Exports.
# ---------------------------------------------------------------------------


def cmd_export(run_dir: str | Path, what: str,
               out: str | Path | None = None) -> tuple[int, Path]:
    run_dir = Path(run_dir)
    records = read_records(run_dir)
    if what == "best-code":
        feasible = [rec for rec in records if rec["feasible"]]
        if not feasible:
            raise CorruptCheckpoint("no feasible record in %s" % run_dir)
        best = min(feasible, key=lambda rec: rec["fitness"])
        target = Path(out) if out is not None else run_dir / "best.code.txt"
        target.write_text(best["code"], encoding="utf-8")
        return EXIT_OK, target
    if what == "convergence":
        config = read_config(run_dir)
        heuristics = [heuristic_from_record(rec) for rec in records]
        lines = [CONVERGENCE_HEADER]
        for gen, pop in replay_populations(heuristics, int(config["pop_size"])):
            if gen == 0:
                continue
            best, mean = _convergence_row(pop)
            lines.append("%d,%s,%s" % (gen, _fmt_float(best), _fmt_float(mean)))
        target = Path(out) if out is not None else run_dir / CONVERGENCE_NAME
        target.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
        return EXIT_OK, target
    raise ValueError("export target must be convergence or best-code, got %r" % what)


# ---------------------------------------------------------------------------
# Baselines and instance generation.
# ---------------------------------------------------------------------------


def _tsp_constructive(name: str) -> Callable[[tsp.TspInstance], np.ndarray]:
    return {"nearest_insertion": tsp.nearest_insertion,
            "farthest_insertion": tsp.farthest_insertion}[name]


TSP_BASELINES = ("nearest_insertion", "farthest_insertion")


@dataclass
class BaselineOptions:
    count: int = 5
    seed0: int = 0
    n_items: int = 5000
    capacity: int = 100
    strict_rest: bool = False
    cities: int = 50
    jobs: int = 20
    machines: int = 10
    instances: str | None = None


def _baseline_rows(problem: str, names: Sequence[str],
                   opts: BaselineOptions) -> tuple[list[str], list[list[str]]]:
    if problem == "binpacking":
        known = binpacking.BUILTIN_SCORERS
    elif problem == "tsp":
        known = {name: None for name in TSP_BASELINES}
    elif problem == "fssp":
        known = fssp.BUILTIN_SEQUENCERS
    else:
        raise UnknownBaseline("unknown problem %r" % problem)
    missing = [name for name in names if name not in known]
    if missing:
        raise UnknownBaseline("unknown baseline name(s) for %s: %s"
                              % (problem, ", ".join(missing)))

    rows = []
    if problem == "binpacking":
        if opts.instances:
            insts = binpacking.load_instances(opts.instances)
        else:
            insts = [binpacking.generate_instance(opts.n_items, opts.capacity,
                                                  opts.seed0 + i)
                     for i in range(opts.count)]
        bounds = [binpacking.l2_lower_bound(inst.items, inst.capacity)
                  for inst in insts]
        for name in names:
            scorer = binpacking.BUILTIN_SCORERS[name]
            gaps = []
            for inst, lb in zip(insts, bounds):
                used = binpacking.simulate_online(inst.items, inst.capacity,
                                                  scorer, opts.strict_rest)
                gaps.append((used - lb) / lb * 100.0)
            rows.append([name] + [_fmt_float(g) for g in gaps]
                        + [_fmt_float(np.mean(gaps))])
        n_cols = len(insts)
    elif problem == "tsp":
        if opts.instances:
            insts = tsp.load_instances(opts.instances)
        else:
            insts = [tsp.generate(opts.cities, seed=opts.seed0 + i)
                     for i in range(opts.count)]
        for name in names:
            build = _tsp_constructive(name)
            gaps = []
            for inst in insts:
                length = tsp.tour_length(build(inst), inst.dist)
                ref = inst.reference_length
                gaps.append((length - ref) / ref * 100.0)
            rows.append([name] + [_fmt_float(g) for g in gaps]
                        + [_fmt_float(np.mean(gaps))])
        n_cols = len(insts)
    else:
        if opts.instances:
            insts = fssp.load_instances(opts.instances)
        else:
            insts = [fssp.generate(opts.jobs, opts.machines, opts.seed0 + i)
                     for i in range(opts.count)]
        for name in names:
            sequencer = fssp.BUILTIN_SEQUENCERS[name]
            spans = [fssp.makespan(sequencer(inst), inst.time_matrix)
                     for inst in insts]
            rows.append([name] + [_fmt_float(s) for s in spans]
                        + [_fmt_float(np.mean(spans))])
        n_cols = len(insts)
    header = ["name"] + ["instance_%d" % i for i in range(n_cols)] + ["mean"]
    return header, rows


def cmd_baselines(problem: str, names: Sequence[str], out: str | Path,
                  opts: BaselineOptions | None = None) -> tuple[int, Path]:
    """Validates every name before writing, so a bad name leaves no file."""
    opts = opts or BaselineOptions()
    header, rows = _baseline_rows(problem, names, opts)
    target = Path(out)
    lines = [",".join(header)] + [",".join(row) for row in rows]
    target.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return EXIT_OK, target


def cmd_gen_instances(problem: str, out: str | Path,
                      opts: BaselineOptions | None = None) -> tuple[int, Path]:
    opts = opts or BaselineOptions()
    target = Path(out)
    if problem == "binpacking":
        insts = [binpacking.generate_instance(opts.n_items, opts.capacity,
                                              opts.seed0 + i)
                 for i in range(opts.count)]
        binpacking.save_instances(target, insts)
    elif problem == "tsp":
        insts = [tsp.generate(opts.cities, seed=opts.seed0 + i)
                 for i in range(opts.count)]
        tsp.save_instances(target, insts)
    elif problem == "fssp":
        insts = [fssp.generate(opts.jobs, opts.machines, opts.seed0 + i)
                 for i in range(opts.count)]
        fssp.save_instances(target, insts)
    else:
        raise ValueError("unknown problem %r" % problem)
    return EXIT_OK, target
