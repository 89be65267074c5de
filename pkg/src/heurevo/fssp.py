"""Permutation flow shop: makespan, constructive baselines, guided search loop.

The guided loop runs plain local search on the true processing-time matrix,
then asks the candidate heuristic for a perturbed matrix and a set of jobs to
shake: ``heuristic_fn(current_sequence, time_matrix, m, n, seed) ->
(new_matrix, perturb_jobs)``. The perturbation phase is a restricted local
search under the perturbed matrix touching only those jobs.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .tsp import NotAPermutation, perturbation_seed

EPS = 1e-10
PERTURB_MOVE_CAP = 20


class HeuristicShapeMismatch(ValueError):
    pass


class InvalidJobIndex(ValueError):
    pass


@dataclass
class FsspInstance:
    time_matrix: np.ndarray

    def __post_init__(self):
        self.time_matrix = np.asarray(self.time_matrix, dtype=np.float64)
        if self.time_matrix.ndim != 2 or (self.time_matrix < 0).any():
            raise ValueError("time matrix must be 2-d and nonnegative")

    @property
    def n(self) -> int:
        return self.time_matrix.shape[0]

    @property
    def m(self) -> int:
        return self.time_matrix.shape[1]


@dataclass
class FsspGlsState:
    best_sequence: np.ndarray
    best_makespan: float
    ls_calls: int = 0
    elapsed: float = 0.0


PerturbFn = Callable[[np.ndarray, np.ndarray, int, int, int],
                     tuple[np.ndarray, np.ndarray]]


def generate(n: int, m: int, seed: int) -> FsspInstance:
    """Uniform [0, 1) processing times, deterministic per seed."""
    if n < 1 or m < 1:
        raise ValueError("need at least one job and one machine")
    return FsspInstance(np.random.default_rng(seed).random((n, m)))


def _check_sequence(sequence, n: int) -> np.ndarray:
    seq = np.asarray(sequence, dtype=np.int64)
    if seq.shape != (n,) or not np.array_equal(np.sort(seq), np.arange(n)):
        raise NotAPermutation("sequence is not a permutation of 0..%d" % (n - 1))
    return seq


def _makespan_rows(seq: Iterable[int], rows: list[list[float]], m: int) -> float:
    # Hot path: plain floats beat numpy at these sizes.
    comp = [0.0] * m
    for j in seq:
        row = rows[j]
        prev = 0.0
        for k in range(m):
            v = comp[k]
            if prev > v:
                v = prev
            prev = v + row[k]
            comp[k] = prev
    return comp[m - 1]


def makespan(sequence: Sequence[int], time_matrix: np.ndarray) -> float:
    """Completion time of the last job on the last machine."""
    matrix = np.asarray(time_matrix, dtype=np.float64)
    seq = _check_sequence(sequence, matrix.shape[0])
    return _makespan_rows(seq.tolist(), matrix.tolist(), matrix.shape[1])


def johnson(p_first: Sequence[float], p_second: Sequence[float]) -> np.ndarray:
    """Optimal two-machine sequence: short-first-times up front, short-second last."""
    if len(p_first) != len(p_second):
        raise ValueError("per-machine time lists differ in length")
    front = sorted((j for j in range(len(p_first)) if p_first[j] < p_second[j]),
                   key=lambda j: (p_first[j], j))
    back = sorted((j for j in range(len(p_first)) if p_first[j] >= p_second[j]),
                  key=lambda j: (-p_second[j], j))
    return np.array(front + back, dtype=np.int64)


def gupta(instance: FsspInstance) -> np.ndarray:
    p = instance.time_matrix
    n, m = instance.n, instance.m
    if m == 1:
        return np.arange(n, dtype=np.int64)
    sign = np.where(p[:, 0] < p[:, m - 1], 1.0, -1.0)
    slope = sign / (p[:, :-1] + p[:, 1:]).min(axis=1)
    return np.array(sorted(range(n), key=lambda j: (-slope[j], j)), dtype=np.int64)


def cds(instance: FsspInstance) -> np.ndarray:
    p = instance.time_matrix
    n, m = instance.n, instance.m
    if m == 1:
        return np.arange(n, dtype=np.int64)
    best_seq, best_mk = None, np.inf
    for k in range(1, m):
        surrogate_first = p[:, :k].sum(axis=1)
        surrogate_second = p[:, m - k:].sum(axis=1)
        seq = johnson(surrogate_first, surrogate_second)
        mk = makespan(seq, p)
        if mk < best_mk - EPS:
            best_seq, best_mk = seq, mk
    return best_seq


def _insertion_order(p: np.ndarray) -> list[int]:
    totals = p.sum(axis=1)
    return sorted(range(len(p)), key=lambda j: (-totals[j], j))


def _idle_time(seq: list[int], rows: list[list[float]], m: int) -> float:
    comp = [0.0] * m
    for j in seq:
        row = rows[j]
        prev = 0.0
        for k in range(m):
            v = comp[k]
            if prev > v:
                v = prev
            prev = v + row[k]
            comp[k] = prev
    busy = [sum(rows[j][k] for j in seq) for k in range(m)]
    return sum(comp[k] - busy[k] for k in range(m))


def _neh_build(p: np.ndarray, idle_tie_break: bool) -> np.ndarray:
    rows = p.tolist()
    m = p.shape[1]
    seq: list[int] = []
    for job in _insertion_order(p):
        best_pos, best_mk, best_idle = 0, np.inf, np.inf
        for pos in range(len(seq) + 1):
            trial = seq[:pos] + [job] + seq[pos:]
            mk = _makespan_rows(trial, rows, m)
            if mk < best_mk - EPS:
                best_pos, best_mk = pos, mk
                best_idle = _idle_time(trial, rows, m) if idle_tie_break else np.inf
            elif idle_tie_break and abs(mk - best_mk) <= EPS:
                idle = _idle_time(trial, rows, m)
                if idle < best_idle - EPS:
                    best_pos, best_idle = pos, idle
        seq.insert(best_pos, job)
    return np.array(seq, dtype=np.int64)


def neh(instance: FsspInstance) -> np.ndarray:
    """Insert jobs in decreasing total time at the makespan-minimizing position."""
    return _neh_build(instance.time_matrix, idle_tie_break=False)


def nehff(instance: FsspInstance) -> np.ndarray:
    """NEH with equal-makespan insertion ties broken by least machine idle time."""
    return _neh_build(instance.time_matrix, idle_tie_break=True)


BUILTIN_SEQUENCERS: dict[str, Callable[[FsspInstance], np.ndarray]] = {
    "gupta": gupta,
    "cds": cds,
    "neh": neh,
    "nehff": nehff,
}


def _best_swap(seq: list[int], rows, m, base: float, allowed: set[int] | None):
    best_delta, best_move = -EPS, None
    n = len(seq)
    for i in range(n - 1):
        for j in range(i + 1, n):
            if allowed is not None and seq[i] not in allowed and seq[j] not in allowed:
                continue
            seq[i], seq[j] = seq[j], seq[i]
            delta = base - _makespan_rows(seq, rows, m)
            seq[i], seq[j] = seq[j], seq[i]
            if delta > best_delta + EPS:
                best_delta, best_move = delta, (i, j)
    return best_move


def _best_relocate(seq: list[int], rows, m, base: float, allowed: set[int] | None):
    best_delta, best_move = -EPS, None
    n = len(seq)
    for i in range(n):
        if allowed is not None and seq[i] not in allowed:
            continue
        job = seq.pop(i)
        for pos in range(n):
            if pos == i:
                continue
            seq.insert(pos, job)
            delta = base - _makespan_rows(seq, rows, m)
            seq.pop(pos)
            if delta > best_delta + EPS:
                best_delta, best_move = delta, (i, pos)
        seq.insert(i, job)
    return best_move


def local_search(sequence: Sequence[int], time_matrix: np.ndarray,
                 allowed_jobs: Iterable[int] | None = None,
                 max_accepted: int | None = None) -> np.ndarray:
    """Best-improvement descent alternating job swaps and single-job relocations.

    allowed_jobs restricts to moves touching those jobs; max_accepted caps the
    number of applied moves. Both are used by the perturbation phase.
    """
    matrix = np.asarray(time_matrix, dtype=np.float64)
    seq = _check_sequence(sequence, matrix.shape[0]).tolist()
    rows = matrix.tolist()
    m = matrix.shape[1]
    allowed = set(int(j) for j in allowed_jobs) if allowed_jobs is not None else None
    accepted = 0
    budget_left = lambda: max_accepted is None or accepted < max_accepted

    improved = True
    while improved and budget_left():
        improved = False
        while budget_left():
            base = _makespan_rows(seq, rows, m)
            move = _best_swap(seq, rows, m, base, allowed)
            if move is None:
                break
            i, j = move
            seq[i], seq[j] = seq[j], seq[i]
            accepted += 1
            improved = True
        while budget_left():
            base = _makespan_rows(seq, rows, m)
            move = _best_relocate(seq, rows, m, base, allowed)
            if move is None:
                break
            i, pos = move
            seq.insert(pos, seq.pop(i))
            accepted += 1
            improved = True
    return np.array(seq, dtype=np.int64)


def guided_local_search(instance: FsspInstance, heuristic_fn: PerturbFn,
                        max_ls_calls: int = 100, max_seconds: float = 10.0,
                        run_seed: int = 0, instance_id: int = 0,
                        perturb_cap: int = PERTURB_MOVE_CAP) -> FsspGlsState:
    """Alternate true-matrix local search with candidate-driven perturbation."""
    true = instance.time_matrix
    n, m = instance.n, instance.m
    seq = neh(instance)
    state = FsspGlsState(best_sequence=seq.copy(), best_makespan=np.inf)
    started = time.perf_counter()
    while state.ls_calls < max_ls_calls:
        seq = local_search(seq, true)
        state.ls_calls += 1
        mk = makespan(seq, true)
        if mk < state.best_makespan:
            state.best_makespan = mk
            state.best_sequence = seq.copy()
        state.elapsed = time.perf_counter() - started
        if state.ls_calls >= max_ls_calls or state.elapsed > max_seconds:
            break
        seed = perturbation_seed(run_seed, instance_id, state.ls_calls)
        new_matrix, perturb_jobs = heuristic_fn(seq.copy(), true, m, n, seed)
        new_matrix = np.asarray(new_matrix, dtype=np.float64)
        if new_matrix.shape != (n, m):
            raise HeuristicShapeMismatch(
                "perturbed matrix has shape %r, wanted %r" % (new_matrix.shape, (n, m)))
        if not np.all(np.isfinite(new_matrix)):
            raise ValueError("perturbed matrix contains non-finite entries")
        jobs = np.atleast_1d(np.asarray(perturb_jobs, dtype=np.int64))
        if jobs.size == 0:
            raise InvalidJobIndex("perturb_jobs is empty")
        if jobs.min() < 0 or jobs.max() >= n:
            raise InvalidJobIndex("perturb_jobs outside 0..%d" % (n - 1))
        seq = local_search(seq, new_matrix, allowed_jobs=jobs.tolist(),
                           max_accepted=perturb_cap)
    state.elapsed = time.perf_counter() - started
    return state


def mean_makespan(values: Sequence[float]) -> float:
    if len(values) == 0:
        raise ValueError("no makespans to average")
    return float(np.mean(np.asarray(values, dtype=np.float64)))


# ---------------------------------------------------------------------------
# Native twins of the perturbation sources in sources.py. The stochastic one
# must consume the global numpy RNG in exactly the order the source text does.
# ---------------------------------------------------------------------------

def identity_perturbation(current_sequence, time_matrix, m, n):
    return time_matrix.copy(), np.arange(n)


def scale_longest_perturbation(current_sequence, time_matrix, m, n):
    totals = time_matrix.sum(axis=1)
    k = max(1, int(0.3 * n))
    perturb_jobs = np.argsort(totals)[-k:]
    new_matrix = time_matrix.copy()
    new_matrix[perturb_jobs] *= 1.1
    return new_matrix, perturb_jobs


def evolved_perturbation(current_sequence, time_matrix, m, n):
    machine_subset = np.random.choice(m, max(1, int(0.3*m)), replace=False)
    weighted_avg_execution_time = np.average(time_matrix[:, machine_subset], axis=1, weights=np.random.rand(len(machine_subset)))
    perturb_jobs = np.argsort(weighted_avg_execution_time)[-int(0.3*n):]
    new_matrix = time_matrix.copy()
    perturbation_factors = np.random.uniform(0.8, 1.2, size=(len(perturb_jobs), len(machine_subset)))
    new_matrix[perturb_jobs[:, np.newaxis], machine_subset] *= perturbation_factors
    return new_matrix, perturb_jobs


def save_instances(path: str | Path, instances: Sequence[FsspInstance]) -> None:
    payload = [{"n": inst.n, "m": inst.m,
                "times": [[float(v) for v in row] for row in inst.time_matrix]}
               for inst in instances]
    Path(path).write_text(json.dumps(payload))


def load_instances(path: str | Path) -> list[FsspInstance]:
    out = []
    for rec in json.loads(Path(path).read_text()):
        matrix = np.asarray(rec["times"], dtype=np.float64)
        if matrix.shape != (int(rec["n"]), int(rec["m"])):
            raise ValueError("times matrix does not match declared n, m")
        out.append(FsspInstance(matrix))
    return out
