"""
Evolving a bin packing scorer end to end
========================================

The full loop: a population of (thought, code) candidates, five prompt
strategies asking a language model for new designs, evaluation on
training instances, and rank-based survival. Here the model is the
scripted mock backend and evaluation runs in process, so the run is
deterministic and finishes in seconds; switching backend to "http"
points the same loop at a real chat-completion endpoint.
"""

import json
from pathlib import Path

from heurevo import orchestrator

spec = orchestrator.make_spec({
    "problem": "binpacking",
    "pop_size": 4,
    "generations": 5,
    "seed": 0,
    "evaluator": "native",
    "eval": {"n_instances": 3, "n_items": 500},
})
code, run_dir = orchestrator.cmd_run(spec, out="runs/demo_binpacking")
print("run finished with exit code %d in %s" % (code, run_dir))
print()

# convergence.csv has one row per generation: the best and mean fitness
# of the population after that generation's selection. Fitness is the
# negated mean lb/bins ratio, so closer to -1 is better.
print(Path(run_dir, "convergence.csv").read_text().strip())
print()

# Every attempted candidate lands in candidates.jsonl, feasible or not,
# with the strategy that proposed it and the hashes of the exchange.
records = [json.loads(line)
           for line in Path(run_dir, "candidates.jsonl").read_text().splitlines()]
by_strategy = {}
for rec in records:
    by_strategy.setdefault(rec["strategy"], []).append(rec)
print("%d candidates over %d generations:" % (len(records), spec.generations))
for strategy, group in sorted(by_strategy.items()):
    feasible = sum(1 for rec in group if rec["feasible"])
    print("  %-4s %2d proposed, %2d feasible" % (strategy, len(group), feasible))
print("LLM queries: %s" % Path(run_dir, "queries.txt").read_text().strip())
print()

# best.json is the champion; its code is a complete scoring function.
best = json.loads(Path(run_dir, "best.json").read_text())
print("best fitness %.4f, designed by %s in generation %d"
      % (best["fitness"], best["strategy"], best["generation"]))
print("thought: %s" % best["thought"])
print()
print(best["code"])
