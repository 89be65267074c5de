"""Online bin packing: instance generation, simulation, lower bound, baseline scorers.

A scorer is any callable ``scorer(item, rests) -> scores`` where ``item`` is a
python int, ``rests`` holds the residual capacities of the feasible bins only,
and ``scores`` is one float per feasible bin. The simulator places each item in
the feasible bin with the highest score.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

# Item size distribution. Sizes are independent of bin capacity.
WEIBULL_SHAPE = 3.0
WEIBULL_SCALE = 45.0
MIN_ITEM = 1
MAX_ITEM = 100

Scorer = Callable[[int, np.ndarray], np.ndarray]


@dataclass
class BinPackingInstance:
    capacity: int
    items: np.ndarray

    def __post_init__(self):
        self.items = np.asarray(self.items, dtype=np.int64)
        if self.items.size and int(self.items.max()) > self.capacity:
            raise ValueError("item larger than bin capacity")


def generate_items(n_items: int, seed: int) -> np.ndarray:
    """Weibull(3) item sizes scaled by 45, rounded up, clipped to [1, 100]."""
    rng = np.random.default_rng(seed)
    sizes = np.ceil(rng.weibull(WEIBULL_SHAPE, n_items) * WEIBULL_SCALE)
    return np.clip(sizes, MIN_ITEM, MAX_ITEM).astype(np.int64)


def generate_instance(n_items: int, capacity: int, seed: int) -> BinPackingInstance:
    if capacity < MAX_ITEM:
        raise ValueError("capacity below the maximum item size")
    return BinPackingInstance(capacity=capacity, items=generate_items(n_items, seed))


def simulate_online(items: Sequence[int], capacity: int, scorer: Scorer,
                    strict_rest: bool = False, return_rests: bool = False):
    """Place items one at a time into the highest-scoring feasible bin.

    One empty bin per item is available up front, so a placement always
    exists under the default rule (rest >= item). Non-finite scores are
    treated as -inf; ties go to the lowest feasible bin index. Returns the
    number of bins actually opened, plus the final rest capacities when
    return_rests is set.
    """
    items = np.asarray(items, dtype=np.int64)
    rests = np.full(len(items), capacity, dtype=np.int64)
    for raw in items:
        item = int(raw)
        if strict_rest:
            feasible = np.flatnonzero(rests > item)
        else:
            feasible = np.flatnonzero(rests >= item)
        if feasible.size == 0:
            raise ValueError("no feasible bin for item of size %d" % item)
        scores = np.asarray(scorer(item, rests[feasible]), dtype=np.float64)
        if scores.shape != feasible.shape:
            raise ValueError(
                "scorer returned shape %r for %d feasible bins"
                % (scores.shape, feasible.size))
        scores = np.where(np.isfinite(scores), scores, -np.inf)
        rests[feasible[int(np.argmax(scores))]] -= item
    used = int(np.sum(rests < capacity))
    if return_rests:
        return used, rests
    return used


def l2_lower_bound(items: Sequence[int], capacity: int) -> int:
    """Capacity-cut lower bound on the optimal number of bins.

    For each threshold a, items above c - a need private bins, items above
    c/2 need a bin each, and the remaining volume at least a is packed into
    the slack of the half-full bins first. Taking the max over thresholds
    dominates the plain ceil(total/capacity) bound (the a = 0 case).
    """
    s = np.asarray(items, dtype=np.int64)
    c = capacity
    best = 0
    for a in {0} | {int(v) for v in s if v <= c / 2}:
        j1 = s[s > c - a]
        j2 = s[(s <= c - a) & (s > c / 2)]
        j3 = s[(s <= c / 2) & (s >= a)]
        slack = len(j2) * c - int(j2.sum())
        extra = int(np.ceil(max(0, int(j3.sum()) - slack) / c))
        best = max(best, len(j1) + len(j2) + extra)
    return best


def evaluate_scorer(scorer: Scorer, instances: Sequence[BinPackingInstance],
                    strict_rest: bool = False) -> tuple[float, float]:
    """Run the simulator over instances.

    Returns (raw_score, mean_gap_percent). raw_score is the mean ratio of
    the lower bound to bins used, in (0, 1], higher is better; the gap is
    the mean percentage excess over the lower bound.
    """
    ratios = []
    gaps = []
    for inst in instances:
        used = simulate_online(inst.items, inst.capacity, scorer, strict_rest)
        lb = l2_lower_bound(inst.items, inst.capacity)
        ratios.append(lb / used)
        gaps.append((used - lb) / lb * 100.0)
    return float(np.mean(ratios)), float(np.mean(gaps))


# ---------------------------------------------------------------------------
# Baseline scorers. These are native twins of the canonical code texts in
# sources.py: operation order and dtypes must match a worker executing the
# text, so edits here require re-checking the parity tests.
# ---------------------------------------------------------------------------

def first_fit_scores(item: int, bins: np.ndarray) -> np.ndarray:
    return -np.arange(len(bins))


def best_fit_scores(item: int, bins: np.ndarray) -> np.ndarray:
    return item - bins


def evolved_scores(item: int, bins: np.ndarray) -> np.ndarray:
    """Scorer evolved by the system; blends slack utilization with an exponential decay."""
    with np.errstate(all="ignore"):
        diff = bins - item
        exp = np.exp(diff)
        sqrt = np.sqrt(diff)
        ulti = 1 - diff / bins
        comb = ulti * sqrt
        adjust = np.where(diff > (item * 3), comb + 0.8, comb + 0.3)
        hybrid_exp = bins / ((exp + 0.7) * exp)
        scores = hybrid_exp + adjust
    return scores


def program_search_scores(item: int, bins: np.ndarray) -> np.ndarray:
    """Published program-search scorer, reimplemented for comparison runs."""
    with np.errstate(all="ignore"):
        max_bin_cap = max(bins)
        score = (bins - max_bin_cap) ** 2 / item + bins ** 2 / (item ** 2)
        score += bins ** 2 / item ** 3
        score[bins > item] = -score[bins > item]
        score[1:] -= score[:-1]
    return score


def excluded_max_scores(item: int, bins: np.ndarray) -> np.ndarray:
    """Comparison scorer that refuses the emptiest bins outright.

    Pins every max-rest bin to -inf, so it fails any finiteness probe; the
    simulator still accepts it because non-finite scores degrade to -inf.
    """
    with np.errstate(all="ignore"):
        scores = np.log(item) * (bins ** 2) / (item * np.sqrt(bins - item)) + (bins / item) ** 3
        scores[bins == bins.max()] = -np.inf
    return scores


BUILTIN_SCORERS: dict[str, Scorer] = {
    "first_fit": first_fit_scores,
    "best_fit": best_fit_scores,
    "evolved": evolved_scores,
    "program_search": program_search_scores,
    "excluded_max": excluded_max_scores,
    # Short literature aliases, kept stable for scripting.
    "eoh": evolved_scores,
    "funsearch": program_search_scores,
    "eoc": excluded_max_scores,
}


def builtin_scorer(name: str, item: int, rests: np.ndarray) -> np.ndarray:
    try:
        fn = BUILTIN_SCORERS[name]
    except KeyError:
        raise KeyError("unknown builtin scorer %r" % name) from None
    return fn(item, np.asarray(rests, dtype=np.int64))


def save_instances(path: str | Path, instances: Sequence[BinPackingInstance]) -> None:
    payload = [{"capacity": inst.capacity, "items": [int(v) for v in inst.items]}
               for inst in instances]
    Path(path).write_text(json.dumps(payload))


def load_instances(path: str | Path) -> list[BinPackingInstance]:
    payload = json.loads(Path(path).read_text())
    return [BinPackingInstance(capacity=int(rec["capacity"]), items=rec["items"])
            for rec in payload]
