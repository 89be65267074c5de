"""Euclidean TSP: instances, 2-opt + relocate local search, guided search loop.

The guided loop alternates local search on a working "guide" matrix with a
guide-update step. The update step is the part candidates are asked to write:
``update_fn(guide, local_opt_tour, edge_n_used, seed) -> new guide``.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

EXACT_REFERENCE_MAX_N = 12
MULTISTART_RUNS = 10
EPS = 1e-10


class NotAPermutation(ValueError):
    pass


class UpdateShapeMismatch(ValueError):
    pass


class UpdateNonFinite(ValueError):
    pass


@dataclass
class TspInstance:
    coords: np.ndarray
    dist: np.ndarray
    reference_length: float | None = None
    reference_exact: bool = False

    @property
    def n(self) -> int:
        return len(self.coords)


@dataclass
class GlsState:
    guide: np.ndarray
    edge_n_used: np.ndarray
    best_order: np.ndarray
    best_length: float
    ls_calls: int = 0
    elapsed: float = 0.0


UpdateFn = Callable[[np.ndarray, np.ndarray, np.ndarray, int], np.ndarray]


def distance_matrix(coords: np.ndarray) -> np.ndarray:
    diff = coords[:, None, :] - coords[None, :, :]
    return np.sqrt((diff ** 2).sum(-1))


def generate(n: int, seed: int, reference: bool = True) -> TspInstance:
    """Uniform coordinates in the unit square; optionally attach a reference length."""
    if n < 3:
        raise ValueError("need at least 3 cities")
    coords = np.random.default_rng(seed).random((n, 2))
    inst = TspInstance(coords=coords, dist=distance_matrix(coords))
    if reference:
        inst.reference_length, inst.reference_exact = reference_optimum(inst)
    return inst


def _check_permutation(order: np.ndarray, n: int) -> np.ndarray:
    order = np.asarray(order, dtype=np.int64)
    if order.shape != (n,) or not np.array_equal(np.sort(order), np.arange(n)):
        raise NotAPermutation("order is not a permutation of 0..%d" % (n - 1))
    return order


def tour_length(order: Sequence[int], matrix: np.ndarray) -> float:
    order = _check_permutation(order, len(matrix))
    return float(matrix[order, np.roll(order, -1)].sum())


def nearest_neighbor(matrix: np.ndarray, start: int = 0) -> np.ndarray:
    n = len(matrix)
    unvisited = set(range(n))
    unvisited.remove(start)
    order = [start]
    while unvisited:
        last = order[-1]
        order.append(min(unvisited, key=lambda j: (matrix[last, j], j)))
        unvisited.remove(order[-1])
    return np.array(order, dtype=np.int64)


def _two_opt_move(order: np.ndarray, matrix: np.ndarray) -> bool:
    """Apply the single best improving 2-opt move in place. True if one was applied.

    Guide matrices are not necessarily symmetric (candidate updates may write
    the two directions independently), so the delta includes the cost change
    of traversing the reversed segment backwards.
    """
    t = order
    n = len(t)
    t1 = np.roll(t, -1)
    fwd = matrix[t, t1]
    rev = matrix[t1, t]
    run = np.concatenate(([0.0], np.cumsum(rev - fwd)))
    delta = (matrix[t[:, None], t[None, :]] + matrix[t1[:, None], t1[None, :]]
             - fwd[:, None] - fwd[None, :])
    # reversing order[i+1..j] flips arcs i+1..j-1: add run[j] - run[i+1]
    delta += run[np.arange(n)][None, :] - run[np.arange(n) + 1][:, None]
    iu = np.triu_indices(n, k=1)
    vals = delta[iu]
    k = int(np.argmin(vals))
    if vals[k] < -EPS:
        i, j = int(iu[0][k]), int(iu[1][k])
        order[i + 1:j + 1] = order[i + 1:j + 1][::-1]
        return True
    return False


def _relocate_move(order: np.ndarray, matrix: np.ndarray) -> tuple[np.ndarray, bool]:
    """Apply the single best improving city relocation. Returns (order, applied)."""
    n = len(order)
    t = order
    prv = np.roll(t, 1)
    nxt = np.roll(t, -1)
    closing = matrix[t, nxt]
    gain = matrix[prv, t] + closing - matrix[prv, nxt]
    delta = np.empty((n, n))
    for i in range(n):
        city = t[i]
        delta[i] = matrix[t, city] + matrix[city, nxt] - closing - gain[i]
        delta[i, i] = np.inf
        delta[i, (i - 1) % n] = np.inf  # reinserting before itself is a no-op
    k = int(np.argmin(delta))
    i, j = divmod(k, n)
    if delta[i, j] < -EPS:
        city = order[i]
        rest = np.delete(order, i)
        pos = int(np.where(rest == t[j])[0][0])
        return np.insert(rest, pos + 1, city), True
    return order, False


def local_search(order: Sequence[int], matrix: np.ndarray,
                 max_passes: int = 10_000) -> np.ndarray:
    """Best-improvement descent alternating 2-opt and relocate until stable."""
    order = _check_permutation(order, len(matrix)).copy()
    for _ in range(max_passes):
        improved = False
        while _two_opt_move(order, matrix):
            improved = True
        order, moved = _relocate_move(order, matrix)
        while moved:
            improved = True
            order, moved = _relocate_move(order, matrix)
        if not improved:
            break
    return order


def _insertion(matrix: np.ndarray, farthest: bool) -> np.ndarray:
    n = len(matrix)
    if farthest:
        i, j = np.unravel_index(int(np.argmax(matrix)), matrix.shape)
    else:
        offdiag = matrix + np.where(np.eye(n) > 0, np.inf, 0)
        i, j = np.unravel_index(int(np.argmin(offdiag)), offdiag.shape)
    order = [int(i), int(j)]
    left = [k for k in range(n) if k not in order]
    while left:
        to_tour = np.array([min(matrix[k, m] for m in order) for k in left])
        # np.arg{min,max} both break ties at the lowest candidate index
        pick = int(np.argmax(to_tour)) if farthest else int(np.argmin(to_tour))
        city = left.pop(pick)
        best_inc, best_pos = np.inf, 0
        for p in range(len(order)):
            a, b = order[p], order[(p + 1) % len(order)]
            inc = matrix[a, city] + matrix[city, b] - matrix[a, b]
            if inc < best_inc - 1e-12:
                best_inc, best_pos = inc, p
        order.insert(best_pos + 1, city)
    return np.array(order, dtype=np.int64)


def nearest_insertion(instance: TspInstance) -> np.ndarray:
    return _insertion(instance.dist, farthest=False)


def farthest_insertion(instance: TspInstance) -> np.ndarray:
    return _insertion(instance.dist, farthest=True)


def perturbation_seed(run_seed: int, instance_id: int, ls_call: int) -> int:
    """Stable per-perturbation seed, independent of scheduling order."""
    return int(np.random.SeedSequence([run_seed, instance_id, ls_call]).generate_state(1)[0])


def guided_local_search(instance: TspInstance, update_fn: UpdateFn,
                        max_ls_calls: int = 200, max_seconds: float = 10.0,
                        run_seed: int = 0, instance_id: int = 0,
                        guide_from_true: bool = False) -> GlsState:
    """Alternate local search on the guide matrix with candidate guide updates.

    The guide starts as the true matrix and accumulates updates unless
    guide_from_true is set, in which case the update always sees the true
    matrix. Tours are always evaluated against the true matrix. Edge usage
    counts both directions of every local-optimum edge, closing edge
    included.
    """
    dist = instance.dist
    n = instance.n
    state = GlsState(guide=dist.copy(),
                     edge_n_used=np.zeros((n, n), dtype=np.int64),
                     best_order=np.arange(n), best_length=np.inf)
    order = nearest_neighbor(dist)
    started = time.perf_counter()
    while state.ls_calls < max_ls_calls:
        order = local_search(order, state.guide)
        state.ls_calls += 1
        length = tour_length(order, dist)
        if length < state.best_length:
            state.best_length = length
            state.best_order = order.copy()
        state.elapsed = time.perf_counter() - started
        if state.ls_calls >= max_ls_calls or state.elapsed > max_seconds:
            break
        a, b = order, np.roll(order, -1)
        state.edge_n_used[a, b] += 1
        state.edge_n_used[b, a] += 1
        seed = perturbation_seed(run_seed, instance_id, state.ls_calls)
        source = dist if guide_from_true else state.guide
        guide = np.asarray(update_fn(source, order, state.edge_n_used, seed),
                           dtype=np.float64)
        if guide.shape != (n, n):
            raise UpdateShapeMismatch(
                "guide update returned shape %r, wanted %r" % (guide.shape, (n, n)))
        if not np.all(np.isfinite(guide)):
            raise UpdateNonFinite("guide update produced non-finite entries")
        state.guide = guide
    state.elapsed = time.perf_counter() - started
    return state


def held_karp(matrix: np.ndarray) -> float:
    """Exact tour length by subset dynamic programming. Exponential: keep n small."""
    n = len(matrix)
    full = (1 << n) - 1
    cost = {(1, 0): 0.0}
    for mask in range(1, full + 1, 2):
        for last in range(1, n):
            if not mask & (1 << last):
                continue
            pmask = mask ^ (1 << last)
            best = np.inf
            for k in range(n):
                if pmask & (1 << k) and (pmask, k) in cost:
                    v = cost[(pmask, k)] + matrix[k, last]
                    if v < best:
                        best = v
            if np.isfinite(best):
                cost[(mask, last)] = best
    return min(cost[(full, last)] + matrix[last, 0] for last in range(1, n))


def reference_optimum(instance: TspInstance) -> tuple[float, bool]:
    """Exact DP for small n, otherwise the best of several descent runs."""
    if instance.n <= EXACT_REFERENCE_MAX_N:
        return held_karp(instance.dist), True
    starts = [nearest_neighbor(instance.dist), farthest_insertion(instance)]
    starts += [np.random.default_rng(s).permutation(instance.n)
               for s in range(MULTISTART_RUNS - len(starts))]
    best = min(tour_length(local_search(s, instance.dist), instance.dist)
               for s in starts)
    return best, False


def mean_gap_percent(lengths: Sequence[float], references: Sequence[float]) -> float:
    lengths = np.asarray(lengths, dtype=float)
    references = np.asarray(references, dtype=float)
    return float(np.mean((lengths - references) / references * 100.0))


# ---------------------------------------------------------------------------
# Native twins of the guide-update sources in sources.py. The stochastic one
# must consume the global numpy RNG in exactly the order the source text does.
# ---------------------------------------------------------------------------

def identity_update(edge_distance, local_opt_tour, edge_n_used):
    return np.copy(edge_distance)


def tour_edge_scale_update(edge_distance, local_opt_tour, edge_n_used):
    updated_edge_distance = np.copy(edge_distance)
    for i in range(len(local_opt_tour) - 1):
        start = local_opt_tour[i]
        end = local_opt_tour[i + 1]
        updated_edge_distance[start][end] *= 1.1
        updated_edge_distance[end][start] *= 1.1
    return updated_edge_distance


def usage_scaled_update(edge_distance, local_opt_tour, edge_n_used):
    return edge_distance + 0.05 * np.mean(edge_distance) * edge_n_used


def evolved_update(edge_distance, local_opt_tour, edge_n_used):
    updated_edge_distance = np.copy(edge_distance)
    edge_count = np.zeros_like(edge_distance)
    for i in range(len(local_opt_tour) - 1):
        start = local_opt_tour[i]
        end = local_opt_tour[i + 1]
        edge_count[start][end] += 1
        edge_count[end][start] += 1
    edge_n_used_max = np.max(edge_n_used)
    decay_factor = 0.1
    mean_distance = np.mean(edge_distance)
    for i in range(edge_distance.shape[0]):
        for j in range(edge_distance.shape[1]):
            if edge_count[i][j] > 0:
                noise_factor = (np.random.uniform(0.7, 1.3) / edge_count[i][j]) + (edge_distance[i][j] / mean_distance) - (0.3 / edge_n_used_max) * edge_n_used[i][j]
                updated_edge_distance[i][j] += noise_factor * (1 + edge_count[i][j]) - decay_factor * updated_edge_distance[i][j]
    return updated_edge_distance


def save_instances(path: str | Path, instances: Sequence[TspInstance]) -> None:
    payload = []
    for inst in instances:
        payload.append({"coords": [[float(x), float(y)] for x, y in inst.coords],
                        "reference_length": inst.reference_length,
                        "reference_exact": inst.reference_exact})
    Path(path).write_text(json.dumps(payload))


def load_instances(path: str | Path) -> list[TspInstance]:
    out = []
    for rec in json.loads(Path(path).read_text()):
        coords = np.asarray(rec["coords"], dtype=np.float64)
        out.append(TspInstance(coords=coords, dist=distance_matrix(coords),
                               reference_length=rec.get("reference_length"),
                               reference_exact=bool(rec.get("reference_exact", False))))
    return out
