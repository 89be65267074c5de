"""Canonical candidate code texts and their in-process native twins.

Each entry pairs the exact text a generated candidate would carry with a
callable that reproduces it bit for bit (the stochastic ones consume the
global numpy RNG in the same order). The registry is keyed by the exact
code text; anything unknown is refused, which keeps native evaluation
honest: it can only ever claim results for code it truly mirrors.
"""

from __future__ import annotations

from dataclasses import dataclass
from textwrap import dedent
from typing import Callable

import numpy as np

from . import binpacking, fssp, tsp
from .prompts import FunctionSpec

PROBLEMS = ("binpacking", "tsp", "fssp")

FUNCTION_SPECS: dict[str, FunctionSpec] = {
    "binpacking": FunctionSpec(
        function_name="score",
        inputs=(("item", "size of the current item"),
                ("bins", "rest capacities of feasible bins")),
        outputs=(("scores", "scores for the bins for assignment"),)),
    "tsp": FunctionSpec(
        function_name="update_edge_distance",
        inputs=(("edge_distance", "edge distance matrix"),
                ("local_opt_tour", "local optimal tour of IDs"),
                ("edge_n_used", "number of times each edge was used")),
        outputs=(("updated_edge_distance", "updated edge distance matrix"),)),
    "fssp": FunctionSpec(
        function_name="get_matrix_and_jobs",
        inputs=(("current_sequence", "current sequence of jobs"),
                ("time_matrix", "execution time matrix"),
                ("m", "number of machines"),
                ("n", "number of jobs")),
        outputs=(("new_matrix", "updated time matrix"),
                 ("perturb_jobs", "jobs selected for perturbation"))),
}


class UnknownCode(KeyError):
    """Code text with no registered native twin."""


@dataclass(frozen=True)
class SourceEntry:
    name: str
    problem: str
    thought: str
    code: str
    native: Callable
    braced_reply: bool = True


def _text(code: str) -> str:
    return dedent(code).strip("\n")


def _worst_fit_native(item, bins):
    return (bins - item).astype(float)


def _ratio_native(item, bins):
    return item / bins


def _indexed_best_fit_native(item, bins):
    return (item - bins).astype(float) - 0.01 * np.arange(len(bins))


SOURCE_ENTRIES: tuple[SourceEntry, ...] = (
    SourceEntry(
        name="first_fit", problem="binpacking",
        thought="Assign the item to the first feasible bin by giving earlier bins strictly higher scores.",
        code=_text("""
            def score(item, bins):
                return -np.arange(len(bins))
        """),
        native=binpacking.first_fit_scores),
    SourceEntry(
        name="best_fit", problem="binpacking",
        thought="Prefer the bin whose remaining capacity is closest to the item size so bins are filled as tightly as possible.",
        code=_text("""
            def score(item, bins):
                return item - bins
        """),
        native=binpacking.best_fit_scores),
    SourceEntry(
        name="slack_decay", problem="binpacking",
        thought="Blend an exponential decay of the remaining slack with a utilization bonus so near-full bins win unless the slack is very large.",
        code=_text("""
            def score(item, bins):
                diff = bins - item
                exp = np.exp(diff)
                sqrt = np.sqrt(diff)
                ulti = 1 - diff / bins
                comb = ulti * sqrt
                adjust = np.where(diff > (item * 3), comb + 0.8, comb + 0.3)
                hybrid_exp = bins / ((exp + 0.7) * exp)
                scores = hybrid_exp + adjust
                return scores
        """),
        native=binpacking.evolved_scores),
    SourceEntry(
        name="differenced_quadratic", problem="binpacking",
        thought="Score bins by penalized squared distances from the fullest bin, then difference adjacent scores to favor earlier near-full bins.",
        code=_text("""
            def score(item, bins):
                max_bin_cap = max(bins)
                score = (bins - max_bin_cap) ** 2 / item + bins ** 2 / (item ** 2)
                score += bins ** 2 / item ** 3
                score[bins > item] = -score[bins > item]
                score[1:] -= score[:-1]
                return score
        """),
        native=binpacking.program_search_scores,
        braced_reply=False),
    SourceEntry(
        name="refuse_empty", problem="binpacking",
        thought="Score bins by a logarithmic utilization ratio while refusing to open the emptiest bins.",
        code=_text("""
            def score(item, bins):
                scores = np.log(item) * (bins ** 2) / (item * np.sqrt(bins - item)) + (bins / item) ** 3
                scores[bins == bins.max()] = -np.inf
                return scores
        """),
        native=binpacking.excluded_max_scores),
    SourceEntry(
        name="worst_fit", problem="binpacking",
        thought="Spread items by assigning each item to the bin with the largest remaining capacity.",
        code=_text("""
            def score(item, bins):
                return (bins - item).astype(float)
        """),
        native=_worst_fit_native),
    SourceEntry(
        name="fill_ratio", problem="binpacking",
        thought="Score each bin by the ratio of item size to remaining capacity so fuller bins are preferred.",
        code=_text("""
            def score(item, bins):
                return item / bins
        """),
        native=_ratio_native,
        braced_reply=False),
    SourceEntry(
        name="indexed_best_fit", problem="binpacking",
        thought="Pick the tightest-fitting bin and break ties toward earlier bins with a small index penalty.",
        code=_text("""
            def score(item, bins):
                return (item - bins).astype(float) - 0.01 * np.arange(len(bins))
        """),
        native=_indexed_best_fit_native),
    SourceEntry(
        name="identity_matrix", problem="tsp",
        thought="Keep the distance matrix unchanged so the search restarts from the same landscape.",
        code=_text("""
            def update_edge_distance(edge_distance, local_opt_tour, edge_n_used):
                return np.copy(edge_distance)
        """),
        native=tsp.identity_update),
    SourceEntry(
        name="tour_edge_scale", problem="tsp",
        thought="Inflate the distances of all edges on the current locally optimal tour by ten percent to push the search away from it.",
        code=_text("""
            def update_edge_distance(edge_distance, local_opt_tour, edge_n_used):
                updated_edge_distance = np.copy(edge_distance)
                for i in range(len(local_opt_tour) - 1):
                    start = local_opt_tour[i]
                    end = local_opt_tour[i + 1]
                    updated_edge_distance[start][end] *= 1.1
                    updated_edge_distance[end][start] *= 1.1
                return updated_edge_distance
        """),
        native=tsp.tour_edge_scale_update),
    SourceEntry(
        name="usage_penalty", problem="tsp",
        thought="Add a penalty proportional to how often each edge has been used during perturbation, scaled by the mean edge distance.",
        code=_text("""
            def update_edge_distance(edge_distance, local_opt_tour, edge_n_used):
                return edge_distance + 0.05 * np.mean(edge_distance) * edge_n_used
        """),
        native=tsp.usage_scaled_update),
    SourceEntry(
        name="noisy_tour_penalty", problem="tsp",
        thought="Perturb the edges of the local optimal tour with usage-aware random noise while decaying previous updates.",
        code=_text("""
            def update_edge_distance(edge_distance, local_opt_tour, edge_n_used):
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
        """),
        native=tsp.evolved_update),
    SourceEntry(
        name="identity_times", problem="fssp",
        thought="Leave the execution times unchanged and mark every job as perturbable.",
        code=_text("""
            def get_matrix_and_jobs(current_sequence, time_matrix, m, n):
                return time_matrix.copy(), np.arange(n)
        """),
        native=fssp.identity_perturbation),
    SourceEntry(
        name="scale_longest_jobs", problem="fssp",
        thought="Select the jobs with the largest total processing time and inflate their execution times by ten percent.",
        code=_text("""
            def get_matrix_and_jobs(current_sequence, time_matrix, m, n):
                totals = time_matrix.sum(axis=1)
                k = max(1, int(0.3 * n))
                perturb_jobs = np.argsort(totals)[-k:]
                new_matrix = time_matrix.copy()
                new_matrix[perturb_jobs] *= 1.1
                return new_matrix, perturb_jobs
        """),
        native=fssp.scale_longest_perturbation),
    SourceEntry(
        name="weighted_machine_noise", problem="fssp",
        thought="Weight a random subset of machines, pick the jobs with the highest weighted average execution time, and randomly scale their times on those machines.",
        code=_text("""
            def get_matrix_and_jobs(current_sequence, time_matrix, m, n):
                machine_subset = np.random.choice(m, max(1, int(0.3*m)), replace=False)
                weighted_avg_execution_time = np.average(time_matrix[:, machine_subset], axis=1, weights=np.random.rand(len(machine_subset)))
                perturb_jobs = np.argsort(weighted_avg_execution_time)[-int(0.3*n):]
                new_matrix = time_matrix.copy()
                perturbation_factors = np.random.uniform(0.8, 1.2, size=(len(perturb_jobs), len(machine_subset)))
                new_matrix[perturb_jobs[:, np.newaxis], machine_subset] *= perturbation_factors
                return new_matrix, perturb_jobs
        """),
        native=fssp.evolved_perturbation),
)

_BY_CODE: dict[str, SourceEntry] = {}
for _entry in SOURCE_ENTRIES:
    if _entry.code in _BY_CODE:
        raise AssertionError("duplicate source code text: %s" % _entry.name)
    _BY_CODE[_entry.code] = _entry

_BY_NAME: dict[str, SourceEntry] = {e.name: e for e in SOURCE_ENTRIES}


def entries_for(problem: str) -> tuple[SourceEntry, ...]:
    if problem not in PROBLEMS:
        raise ValueError("unknown problem %r" % problem)
    return tuple(e for e in SOURCE_ENTRIES if e.problem == problem)


def entry_named(name: str) -> SourceEntry:
    return _BY_NAME[name]


def native_for(code: str) -> Callable:
    """Exact-text lookup; raises UnknownCode for anything unregistered."""
    entry = _BY_CODE.get(code)
    if entry is None:
        raise UnknownCode("no native twin registered for this code text")
    return entry.native


def native_registry() -> dict[str, Callable]:
    return {entry.code: entry.native for entry in SOURCE_ENTRIES}
