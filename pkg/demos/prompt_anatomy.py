"""
What the language model actually sees
=====================================

Five strategies turn the current population into design requests: two
that cross over existing designs (E1 ignores the parent code, E2 reasons
about it) and three that mutate a single parent. Each prompt is plain
text assembled from per-problem templates; the reply must contain a
brace-wrapped description and a fenced code block.
"""

from heurevo import core, prompts, sources

templates = prompts.load_template_set("binpacking")
spec = sources.FUNCTION_SPECS["binpacking"]

# Use two published scorers as stand-in parents.
entries = {e.name: e for e in sources.entries_for("binpacking")}
parents = [
    core.Heuristic(id="p1", thought=entries["first_fit"].thought,
                   code=entries["first_fit"].code, fitness=-0.95,
                   raw_score=0.95, generation=1, strategy="INIT"),
    core.Heuristic(id="p2", thought=entries["best_fit"].thought,
                   code=entries["best_fit"].code, fitness=-0.96,
                   raw_score=0.96, generation=1, strategy="INIT"),
]

print("=" * 72)
print("E1 crossover prompt (two parents, FULL representation):")
print("=" * 72)
print(prompts.build_prompt(templates, spec, "E1", parents))
print()

print("=" * 72)
print("M2 parameter-tuning prompt (one parent):")
print("=" * 72)
print(prompts.build_prompt(templates, spec, "M2", parents[:1]))
print()

# Replies are parsed back into (thought, code); the brace block carries
# the description and the fenced block the implementation.
reply = """{Put the item wherever the leftover space stays smallest.}
```python
def score(item, bins):
    return item - bins
```"""
parsed = prompts.parse_response(reply, spec)
print("parsed thought: %s" % parsed.thought)
print("parsed code:\n%s" % parsed.code)
