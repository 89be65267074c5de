"""Generational loop: rank-weighted parent selection and elitist population merge.

The loop itself is problem-blind. A pipeline object owns the messy parts
(prompting, backend calls, parsing, evaluation) and hands back one scored
candidate per attempt; this module schedules attempts, keeps the population
sorted and bounded, and guarantees deterministic per-attempt seeding.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .backend import AuthError

INIT = "INIT"
STRATEGY_ORDER = ("E1", "E2", "M1", "M2", "M3")
CROSSOVER_STRATEGIES = ("E1", "E2")
REPRESENTATION_MODES = ("FULL", "C2C", "T2T2C", "TC2T2C")
DEFAULT_PARENT_COUNT = 5


class EmptyPopulation(ValueError):
    pass


class NoFeasibleInitial(RuntimeError):
    """Raised when initialization produced nothing feasible. Carries the
    attempt records so the orchestrator can still persist them."""

    def __init__(self, message: str, records: list | None = None):
        super().__init__(message)
        self.records = records or []


@dataclass
class Heuristic:
    id: str
    thought: str
    code: str
    fitness: float | None
    raw_score: float | None
    generation: int
    strategy: str
    parent_ids: list[str] = field(default_factory=list)
    feasible: bool = False
    error: str | None = None
    meta: dict = field(default_factory=dict)


@dataclass
class Population:
    members: list[Heuristic]
    capacity: int

    def __len__(self) -> int:
        return len(self.members)

    @property
    def best(self) -> Heuristic:
        if not self.members:
            raise EmptyPopulation("population is empty")
        return self.members[0]

    def fitnesses(self) -> list[float]:
        return [h.fitness for h in self.members]


@dataclass
class RunConfig:
    pop_size: int
    generations: int
    parents_per_prompt: int | None = None
    enabled_strategies: tuple[str, ...] = STRATEGY_ORDER
    representation_mode: str = "FULL"
    rng_seed: int = 0
    seed_heuristics: list[str] = field(default_factory=list)
    max_concurrent: int = 4
    init_retry_rounds: int = 3

    def __post_init__(self):
        if self.pop_size < 1:
            raise ValueError("population size must be >= 1")
        if self.generations < 1:
            raise ValueError("need at least one generation")
        if not self.enabled_strategies:
            raise ValueError("no strategies enabled")
        unknown = set(self.enabled_strategies) - set(STRATEGY_ORDER)
        if unknown:
            raise ValueError("unknown strategies: %s" % sorted(unknown))
        # keep the canonical order regardless of how the user listed them
        self.enabled_strategies = tuple(
            s for s in STRATEGY_ORDER if s in self.enabled_strategies)
        if self.representation_mode not in REPRESENTATION_MODES:
            raise ValueError("unknown representation mode %r" % self.representation_mode)
        if self.parents_per_prompt is None:
            self.parents_per_prompt = min(DEFAULT_PARENT_COUNT, self.pop_size)
        if not 1 <= self.parents_per_prompt <= self.pop_size:
            raise ValueError("parents_per_prompt must be in 1..pop_size")
        if self.max_concurrent < 1:
            raise ValueError("max_concurrent must be >= 1")


class AttemptPipeline(Protocol):
    """What the loop needs from the prompting/evaluation stack."""

    def run_attempt(self, strategy: str, parents: Sequence[Heuristic],
                    seed: int) -> Heuristic: ...

    def evaluate_seed(self, code: str, seed: int) -> Heuristic: ...


@dataclass
class RunHooks:
    """Orchestrator callbacks; no-ops by default so the loop is file-agnostic."""
    on_init: Callable[[list[Heuristic], Population], None] = lambda records, pop: None
    on_generation: Callable[[int, list[Heuristic], Population], None] = \
        lambda gen, records, pop: None


@dataclass
class RunResult:
    population: Population
    best_series: list[float]
    mean_series: list[float]
    records: list[Heuristic]


def rank_weights(pop_size: int, n_ranked: int) -> np.ndarray:
    """Selection weights proportional to 1/(rank + pop_size), ranks 1-based."""
    if pop_size < 1 or n_ranked < 1:
        raise ValueError("pop_size and n_ranked must be >= 1")
    raw = 1.0 / (np.arange(1, n_ranked + 1) + pop_size)
    return raw / raw.sum()


def select_parents(population: Population, k: int,
                   rng: np.random.Generator) -> list[Heuristic]:
    """Draw min(k, |population|) distinct members, rank-weighted, best-biased.

    Draws are without replacement; after each draw the remaining members are
    re-ranked consecutively, so the weights always match their current order.
    """
    if not population.members:
        raise EmptyPopulation("cannot select parents from an empty population")
    if k < 1:
        raise ValueError("k must be >= 1")
    remaining = list(population.members)
    pop_size = len(remaining)
    picked = []
    for _ in range(min(k, len(remaining))):
        weights = rank_weights(pop_size, len(remaining))
        idx = int(rng.choice(len(remaining), p=weights))
        picked.append(remaining.pop(idx))
    return picked


def manage_population(population: Population, candidates: Sequence[Heuristic],
                      capacity: int) -> Population:
    """Elitist merge: keep the `capacity` lowest-fitness distinct-code members.

    Exact code-text duplicates are dropped, keeping the older copy even when
    the newer one scored better. The sort is stable, so older members also
    win fitness ties.
    """
    combined = []
    seen_codes = set()
    for h in list(population.members) + list(candidates):
        if not h.feasible:
            continue
        if h.fitness is None or not np.isfinite(h.fitness):
            raise ValueError("feasible heuristic %s lacks a finite fitness" % h.id)
        if h.code in seen_codes:
            continue
        seen_codes.add(h.code)
        combined.append(h)
    combined.sort(key=lambda h: h.fitness)
    members = combined[:capacity]
    ids = [h.id for h in members]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate heuristic ids after merge")
    return Population(members=members, capacity=capacity)


def attempt_seed(run_seed: int, generation: int, strategy: str, attempt: int) -> int:
    """Deterministic per-attempt seed, stable under concurrency and resume."""
    strategy_idx = 0 if strategy == INIT else STRATEGY_ORDER.index(strategy) + 1
    seq = np.random.SeedSequence([run_seed, generation, strategy_idx, attempt])
    return int(seq.generate_state(1)[0])


def _finish(heuristic: Heuristic, id_: str, generation: int, strategy: str,
            parents: Sequence[Heuristic]) -> Heuristic:
    heuristic.id = id_
    heuristic.generation = generation
    heuristic.strategy = strategy
    heuristic.parent_ids = [p.id for p in parents]
    if heuristic.feasible and (heuristic.fitness is None
                               or not np.isfinite(heuristic.fitness)):
        heuristic.feasible = False
        heuristic.error = heuristic.error or "non-finite fitness"
    if not heuristic.feasible and heuristic.error is None:
        heuristic.error = "infeasible"
    return heuristic


def _run_attempt_guarded(pipeline: AttemptPipeline, strategy: str,
                         parents: Sequence[Heuristic], seed: int) -> Heuristic:
    try:
        return pipeline.run_attempt(strategy, parents, seed)
    except AuthError:
        # Recording a rejected key as one infeasible attempt would silently
        # burn every remaining attempt; abort the run instead.
        raise
    except Exception as exc:
        return Heuristic(id="", thought="", code="", fitness=None, raw_score=None,
                         generation=0, strategy=strategy, feasible=False,
                         error="%s: %s" % (type(exc).__name__, exc))


def evolve_generation(population: Population, config: RunConfig, generation: int,
                      pipeline: AttemptPipeline) -> tuple[Population, list[Heuristic]]:
    """One generation: N attempts per enabled strategy, then an elitist merge.

    Parents come from the generation-start snapshot only. Every attempt
    yields a record, feasible or not; failures are recorded, never raised.
    """
    if not population.members:
        raise EmptyPopulation("evolve_generation needs a non-empty population")
    jobs = []
    for strategy in config.enabled_strategies:
        k = config.parents_per_prompt if strategy in CROSSOVER_STRATEGIES else 1
        for attempt in range(config.pop_size):
            seed = attempt_seed(config.rng_seed, generation, strategy, attempt)
            rng = np.random.default_rng(seed)
            parents = select_parents(population, k, rng)
            jobs.append((strategy, attempt, parents, seed))

    def work(job):
        strategy, attempt, parents, seed = job
        h = _run_attempt_guarded(pipeline, strategy, parents, seed)
        return _finish(h, "g%d-%s-%d" % (generation, strategy.lower(), attempt),
                       generation, strategy, parents)

    if config.max_concurrent > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=config.max_concurrent) as pool:
            records = list(pool.map(work, jobs))
    else:
        records = [work(job) for job in jobs]
    return manage_population(population, records, config.pop_size), records


def initialize(config: RunConfig, pipeline: AttemptPipeline) -> tuple[Population, list[Heuristic]]:
    """Batches of fresh-draft attempts plus any user-seeded code texts.

    Retries whole batches while nothing feasible came back, up to
    init_retry_rounds batches, because an empty population is fatal.
    """
    records: list[Heuristic] = []
    for index, code in enumerate(config.seed_heuristics):
        seed = attempt_seed(config.rng_seed, 0, INIT, 10_000 + index)
        try:
            h = pipeline.evaluate_seed(code, seed)
        except Exception as exc:
            h = Heuristic(id="", thought="", code=code, fitness=None, raw_score=None,
                          generation=0, strategy=INIT, feasible=False,
                          error="%s: %s" % (type(exc).__name__, exc))
        records.append(_finish(h, "g0-seed-%d" % index, 0, INIT, []))

    attempts_done = 0
    for _ in range(config.init_retry_rounds):
        for _ in range(config.pop_size):
            seed = attempt_seed(config.rng_seed, 0, INIT, attempts_done)
            h = _run_attempt_guarded(pipeline, INIT, [], seed)
            records.append(_finish(h, "g0-init-%d" % attempts_done, 0, INIT, []))
            attempts_done += 1
        if any(r.feasible for r in records):
            break
    if not any(r.feasible for r in records):
        raise NoFeasibleInitial(
            "no feasible heuristic after %d initialization attempts" % attempts_done,
            records=records)
    empty = Population(members=[], capacity=config.pop_size)
    return manage_population(empty, records, config.pop_size), records


def run(config: RunConfig, pipeline: AttemptPipeline,
        hooks: RunHooks | None = None) -> RunResult:
    """Initialization plus `generations` rounds of evolve + merge."""
    hooks = hooks or RunHooks()
    population, init_records = initialize(config, pipeline)
    hooks.on_init(init_records, population)
    all_records = list(init_records)
    best_series, mean_series = [], []
    for gen in range(1, config.generations + 1):
        population, records = evolve_generation(population, config, gen, pipeline)
        all_records.extend(records)
        fits = population.fitnesses()
        best_series.append(float(min(fits)))
        mean_series.append(float(np.mean(fits)))
        hooks.on_generation(gen, records, population)
    return RunResult(population=population, best_series=best_series,
                     mean_series=mean_series, records=all_records)
