"""
Running untrusted candidate code in a worker
============================================

Generated code cannot be trusted with the host process: it can loop
forever, crash, or print garbage. Every candidate therefore runs in a
separate worker speaking newline-delimited JSON over stdio, and the
host turns anything that goes wrong into a structured error while the
worker (or its replacement) stays usable.
"""

from heurevo import sandbox, sources

evaluator = sandbox.SandboxEvaluator(pool_size=1)

# A published scorer straight from the canonical source registry.
best_fit = next(e for e in sources.entries_for("binpacking")
                if e.name == "best_fit")
with evaluator.open(best_fit.code, "score") as fn:
    result = fn.call({"item": 4, "bins": [10, 7]}, seed=0)
    print("best_fit scores for item 4 in bins [10, 7]: %s" % result.value)
    result = fn.eval_driver("binpack_online",
                            {"items": [30, 30, 40], "capacity": 100}, seed=0)
    print("packing [30, 30, 40] into capacity 100: %s" % result.value)
print()

# Code that does not even compile comes back as a CompileError reply,
# never as a host exception.
with evaluator.open("def score(item, bins:\n    return bins", "score") as fn:
    result = fn.call({"item": 1, "bins": [1]}, seed=0)
    print("broken candidate: ok=%s kind=%s" % (result.ok, result.error.kind))

# An infinite loop is killed at the deadline; the pool replaces the
# dead worker transparently.
loop = "def score(item, bins):\n    while True:\n        pass"
with evaluator.open(loop, "score") as fn:
    result = fn.call({"item": 1, "bins": [1]}, seed=0, timeout_ms=300)
    print("looping candidate: ok=%s kind=%s after %d ms"
          % (result.ok, result.error.kind, result.elapsed_ms))

# The same pool keeps working afterwards.
with evaluator.open(best_fit.code, "score") as fn:
    result = fn.call({"item": 4, "bins": [10, 7]}, seed=0)
    print("pool recovered: %s" % result.value)
evaluator.close()
