"""Per-problem wiring: training instances, probe inputs, full evaluation.

The generational loop stays problem-blind; everything domain-specific a
run needs (instance sets, local-search budgets, probe cases, how a
candidate function is driven over the instances) is bundled here behind
one handle per problem. Candidate-caused failures surface as EvalFailure
so the caller can mark the attempt infeasible instead of crashing.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from . import binpacking, fssp, tsp
from .prompts import FunctionSpec, PromptTemplateSet, load_template_set
from .sandbox import DEFAULT_EVAL_TIMEOUT_MS, ProbeCase
from .sources import FUNCTION_SPECS, PROBLEMS


class EvalFailure(RuntimeError):
    """The candidate failed during evaluation; the attempt is infeasible."""


@dataclass(frozen=True)
class BinPackingEvalSettings:
    """Training set for evolution runs; the held-out set is 5x5000 items."""

    n_instances: int = 5
    n_items: int = 1000
    capacity: int = 100
    instance_seed: int = 0
    strict_rest: bool = False
    timeout_ms: int = DEFAULT_EVAL_TIMEOUT_MS


@dataclass(frozen=True)
class TspEvalSettings:
    n_instances: int = 16
    n_cities: int = 50
    max_ls_calls: int = 200
    max_seconds: float = 10.0
    instance_seed: int = 0
    guide_from_true: bool = False
    call_timeout_ms: int = 2_000


@dataclass(frozen=True)
class FsspEvalSettings:
    n_instances: int = 16
    n_jobs: int = 20
    machine_counts: tuple[int, ...] = (5, 10)
    max_ls_calls: int = 100
    max_seconds: float = 10.0
    instance_seed: int = 0
    perturb_cap: int = fssp.PERTURB_MOVE_CAP
    call_timeout_ms: int = 2_000


def _instance_seed(eval_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([eval_seed, index]).generate_state(1)[0])


class ProblemHandle:
    """Spec, templates, probes and candidate evaluation for one problem."""

    name: str

    def __init__(self, settings) -> None:
        self.spec: FunctionSpec = FUNCTION_SPECS[self.name]
        self.templates: PromptTemplateSet = load_template_set(self.name)
        self.settings = settings
        self.probes: tuple[ProbeCase, ...] = self._build_probes()
        self._lock = threading.Lock()
        self._eval_set = None

    def eval_set(self):
        """The training instances, built once on first use."""
        with self._lock:
            if self._eval_set is None:
                self._eval_set = self._build_eval_set()
            return self._eval_set

    def _build_probes(self) -> tuple[ProbeCase, ...]:
        raise NotImplementedError

    def _build_eval_set(self):
        raise NotImplementedError

    def evaluate(self, fn, eval_seed: int) -> tuple[float, float]:
        """Score one loaded candidate; returns (fitness, raw_score)."""
        raise NotImplementedError


def _score_probe(item: int, rests: list[int]) -> ProbeCase:
    expected = len(rests)

    # Non-finite scores are allowed: the simulator's argmax treats them
    # as minus infinity, and published scorers mask bins with -inf.
    def validate(value) -> str | None:
        try:
            arr = np.asarray(value, dtype=np.float64)
        except (TypeError, ValueError):
            return "scores are not numeric"
        if arr.shape != (expected,):
            return "scores have shape %r, wanted (%d,)" % (arr.shape, expected)
        return None

    return ProbeCase(args={"item": item,
                           "bins": np.asarray(rests, dtype=np.int64)},
                     validate=validate)


class BinPackingProblem(ProblemHandle):
    name = "binpacking"

    def _build_probes(self) -> tuple[ProbeCase, ...]:
        # Second case includes an exact-fill rest (rest == item).
        return (_score_probe(4, [10, 7]), _score_probe(2, [2, 97]))

    def _build_eval_set(self):
        cfg = self.settings
        out = []
        for i in range(cfg.n_instances):
            inst = binpacking.generate_instance(cfg.n_items, cfg.capacity,
                                                cfg.instance_seed + i)
            out.append((inst, binpacking.l2_lower_bound(inst.items, inst.capacity)))
        return out

    def evaluate(self, fn, eval_seed: int) -> tuple[float, float]:
        cfg = self.settings
        ratios = []
        for index, (inst, lb) in enumerate(self.eval_set()):
            result = fn.eval_driver(
                "binpack_online",
                {"items": inst.items, "capacity": inst.capacity,
                 "strict_rest": cfg.strict_rest},
                seed=_instance_seed(eval_seed, index),
                timeout_ms=cfg.timeout_ms)
            if not result.ok:
                raise EvalFailure(result.error_text())
            ratios.append(lb / int(result.value["bins_used"]))
        raw = float(np.mean(ratios))
        return -raw, raw


class TspProblem(ProblemHandle):
    name = "tsp"

    def _build_probes(self) -> tuple[ProbeCase, ...]:
        n = 5
        coords = np.random.default_rng(11).random((n, 2))
        dist = tsp.distance_matrix(coords)
        order = np.arange(n)
        # Tour edges marked once so usage-normalizing candidates see a
        # nonzero maximum, as they would after a real perturbation.
        used = np.zeros((n, n), dtype=np.int64)
        used[order, np.roll(order, -1)] = 1
        used[np.roll(order, -1), order] = 1

        def validate(value) -> str | None:
            try:
                arr = np.asarray(value, dtype=np.float64)
            except (TypeError, ValueError):
                return "updated matrix is not numeric"
            if arr.shape != (n, n):
                return "updated matrix has shape %r, wanted (%d, %d)" % (arr.shape, n, n)
            if not np.all(np.isfinite(arr)):
                return "updated matrix has non-finite entries"
            return None

        return (ProbeCase(args={"edge_distance": dist, "local_opt_tour": order,
                                "edge_n_used": used}, validate=validate),)

    def _build_eval_set(self):
        cfg = self.settings
        return [tsp.generate(cfg.n_cities, cfg.instance_seed + i)
                for i in range(cfg.n_instances)]

    def evaluate(self, fn, eval_seed: int) -> tuple[float, float]:
        cfg = self.settings

        def update_fn(guide, order, used, seed):
            result = fn.call({"edge_distance": guide, "local_opt_tour": order,
                              "edge_n_used": used},
                             seed=seed, timeout_ms=cfg.call_timeout_ms)
            if not result.ok:
                raise EvalFailure(result.error_text())
            try:
                return np.asarray(result.value, dtype=np.float64)
            except (TypeError, ValueError):
                raise EvalFailure("guide update result is not numeric")

        gaps = []
        for index, inst in enumerate(self.eval_set()):
            try:
                state = tsp.guided_local_search(
                    inst, update_fn, max_ls_calls=cfg.max_ls_calls,
                    max_seconds=cfg.max_seconds, run_seed=eval_seed,
                    instance_id=index, guide_from_true=cfg.guide_from_true)
            except (tsp.UpdateShapeMismatch, tsp.UpdateNonFinite) as exc:
                raise EvalFailure(str(exc))
            gaps.append(100.0 * (state.best_length - inst.reference_length)
                        / inst.reference_length)
        raw = float(np.mean(gaps))
        return raw, raw


class FsspProblem(ProblemHandle):
    name = "fssp"

    def _build_probes(self) -> tuple[ProbeCase, ...]:
        n, m = 4, 3
        matrix = np.random.default_rng(17).random((n, m)) + 0.05

        def validate(value) -> str | None:
            if not isinstance(value, (tuple, list)) or len(value) != 2:
                return "result must be a (new_matrix, perturb_jobs) pair"
            try:
                arr = np.asarray(value[0], dtype=np.float64)
                jobs = np.atleast_1d(np.asarray(value[1], dtype=np.int64))
            except (TypeError, ValueError):
                return "result parts are not numeric"
            if arr.shape != (n, m):
                return "new matrix has shape %r, wanted (%d, %d)" % (arr.shape, n, m)
            if not np.all(np.isfinite(arr)):
                return "new matrix has non-finite entries"
            if jobs.size == 0 or jobs.min() < 0 or jobs.max() >= n:
                return "perturb_jobs must name jobs in 0..%d" % (n - 1)
            return None

        return (ProbeCase(args={"current_sequence": np.arange(n),
                                "time_matrix": matrix, "m": m, "n": n},
                          validate=validate),)

    def _build_eval_set(self):
        cfg = self.settings
        return [fssp.generate(cfg.n_jobs,
                              cfg.machine_counts[i % len(cfg.machine_counts)],
                              cfg.instance_seed + i)
                for i in range(cfg.n_instances)]

    def evaluate(self, fn, eval_seed: int) -> tuple[float, float]:
        cfg = self.settings

        def heuristic_fn(sequence, matrix, m, n, seed):
            result = fn.call({"current_sequence": sequence, "time_matrix": matrix,
                              "m": m, "n": n},
                             seed=seed, timeout_ms=cfg.call_timeout_ms)
            if not result.ok:
                raise EvalFailure(result.error_text())
            value = result.value
            if not isinstance(value, (tuple, list)) or len(value) != 2:
                raise EvalFailure("heuristic must return (new_matrix, perturb_jobs)")
            return value[0], value[1]

        makespans = []
        for index, inst in enumerate(self.eval_set()):
            try:
                state = fssp.guided_local_search(
                    inst, heuristic_fn, max_ls_calls=cfg.max_ls_calls,
                    max_seconds=cfg.max_seconds, run_seed=eval_seed,
                    instance_id=index, perturb_cap=cfg.perturb_cap)
            except (fssp.HeuristicShapeMismatch, fssp.InvalidJobIndex,
                    ValueError) as exc:
                raise EvalFailure(str(exc))
            makespans.append(state.best_makespan)
        raw = float(np.mean(makespans))
        return raw, raw


_HANDLE_TYPES = {"binpacking": BinPackingProblem, "tsp": TspProblem,
                 "fssp": FsspProblem}
SETTINGS_TYPES = {"binpacking": BinPackingEvalSettings, "tsp": TspEvalSettings,
                  "fssp": FsspEvalSettings}


def make_problem(name: str, settings=None) -> ProblemHandle:
    if name not in PROBLEMS:
        raise ValueError("unknown problem %r, expected one of %s"
                         % (name, ", ".join(PROBLEMS)))
    if settings is None:
        settings = SETTINGS_TYPES[name]()
    return _HANDLE_TYPES[name](settings)
