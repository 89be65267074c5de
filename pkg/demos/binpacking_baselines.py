"""
Online bin packing with scoring heuristics
==========================================

Items arrive one at a time and must be placed immediately; a scoring
function looks at the current item and the remaining capacities of the
feasible bins, and the item goes wherever the score is highest. This
script packs one Weibull instance with the built-in scorers and compares
them against the L2 lower bound on the optimal bin count.
"""

import numpy as np

from heurevo import binpacking

# A single instance from the evaluation distribution: 5000 items drawn
# from Weibull(3, 45), rounded up and clipped to [1, 100], capacity 100.
instance = binpacking.generate_instance(n_items=5000, capacity=100, seed=0)
lb = binpacking.l2_lower_bound(instance.items, instance.capacity)
print("instance: %d items, capacity %d, mean item %.1f"
      % (len(instance.items), instance.capacity, np.mean(instance.items)))
print("L2 lower bound: %d bins" % lb)
print()

# first_fit and best_fit are the classical online rules expressed as
# scoring functions; evolved and program_search are published
# machine-designed scorers ported verbatim.
for name in ("first_fit", "best_fit", "evolved", "program_search"):
    scorer = binpacking.BUILTIN_SCORERS[name]
    used = binpacking.simulate_online(instance.items, instance.capacity, scorer)
    gap = 100.0 * (used - lb) / lb
    print("%-22s %4d bins  gap %6.3f%%" % (name, used, gap))

print()

# The headline number is the mean gap over five held-out 5k instances;
# evaluate_scorer aggregates exactly that (and the lb/bins ratio used as
# fitness during evolution).
instances = [binpacking.generate_instance(5000, 100, seed) for seed in range(5)]
for name in ("best_fit", "evolved"):
    scorer = binpacking.BUILTIN_SCORERS[name]
    ratio, mean_gap = binpacking.evaluate_scorer(scorer, instances)
    print("%-22s mean ratio %.4f  mean gap over %d instances: %.3f%%"
          % (name, ratio, len(instances), mean_gap))
