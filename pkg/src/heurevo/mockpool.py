"""Canned reply pools for the mock backend, built from the source entries.

Replies look like real model output: a one-sentence description (braced
for most entries, a bare leading line for some, to exercise both parse
paths) followed by a fenced code block.
"""

from __future__ import annotations

from .sources import SourceEntry, entries_for


def reply_text(entry: SourceEntry) -> str:
    if entry.braced_reply:
        head = "{%s}" % entry.thought
    else:
        head = entry.thought
    return "%s\n```python\n%s\n```" % (head, entry.code)


def pool_for(problem: str) -> list[str]:
    return [reply_text(entry) for entry in entries_for(problem)]
