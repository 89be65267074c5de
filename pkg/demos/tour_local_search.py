"""
Tour construction and guided local search
=========================================

The tour domain evolves a guide-matrix update: local search runs on a
guide copy of the distance matrix, and between runs a candidate function
inflates the entries of edges the search keeps using, pushing it off
local optima. Tours are always scored against the true distances.
"""

import numpy as np

from heurevo import tsp

# Small instances first, where dynamic programming gives the exact
# optimum to compare against.
print("10 cities, exact optimum via dynamic programming:")
for seed in range(3):
    instance = tsp.generate(n=10, seed=seed)
    exact = tsp.held_karp(instance.dist)
    greedy = tsp.tour_length(tsp.nearest_neighbor(instance.dist), instance.dist)
    state = tsp.guided_local_search(
        instance, lambda g, order, used, seed: tsp.identity_update(g, order, used),
        max_ls_calls=50, run_seed=0, instance_id=seed)
    print("  seed %d  exact %.4f  nearest neighbor %.4f  GLS %.4f"
          % (seed, exact, greedy, state.best_length))
print()

# At n=100 the yardsticks are the insertion constructions; the classic
# used-edge scaling update beats them by a clear margin.
print("100 cities, insertion baselines vs guided search:")
gls_lengths, fi_lengths = [], []
for seed in range(5):
    instance = tsp.generate(n=100, seed=200 + seed)
    ni = tsp.tour_length(tsp.nearest_insertion(instance), instance.dist)
    fi = tsp.tour_length(tsp.farthest_insertion(instance), instance.dist)
    state = tsp.guided_local_search(
        instance,
        lambda g, order, used, seed: tsp.tour_edge_scale_update(g, order, used),
        max_ls_calls=120, run_seed=0, instance_id=seed)
    gls_lengths.append(state.best_length)
    fi_lengths.append(fi)
    print("  seed %d  nearest ins %.4f  farthest ins %.4f  GLS %.4f  (%d LS calls)"
          % (200 + seed, ni, fi, state.best_length, state.ls_calls))
print("mean: farthest insertion %.4f, GLS %.4f"
      % (np.mean(fi_lengths), np.mean(gls_lengths)))
