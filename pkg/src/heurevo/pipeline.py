"""One design attempt end to end: prompt, query, parse, probe, evaluate.

Implements the attempt interface the generational loop drives. Scoring
results are cached by exact code text for the lifetime of the pipeline
(one run), so a repeated candidate costs a backend query but never a
re-evaluation. Auth failures propagate; everything else a candidate or
the backend does wrong becomes an infeasible record.
"""

from __future__ import annotations

import threading
import time
from typing import Sequence

from .backend import AuthError, Backend, BackendError, ChatRequest, stable_hash
from .core import Heuristic
from .problems import EvalFailure, ProblemHandle
from .prompts import (ParseError, build_code_prompt, build_prompt,
                      parse_code_response, parse_response)
from .sandbox import probe_feasibility

TWO_CALL_MODES = ("T2T2C", "TC2T2C")


def _joined_hash(texts: Sequence[str]) -> int:
    if not texts:
        return 0
    return stable_hash("\x00".join(texts))


class DesignPipeline:
    """Glue between the backend, the prompt engine and one evaluator."""

    def __init__(self, problem: ProblemHandle, backend: Backend, evaluator,
                 mode: str = "FULL", eval_seed: int = 0) -> None:
        self.problem = problem
        self.backend = backend
        self.evaluator = evaluator
        self.mode = mode
        self.eval_seed = eval_seed
        self._cache: dict[str, tuple] = {}
        self._cache_lock = threading.Lock()

    def _deterministic_timing(self) -> bool:
        return self.backend.config.kind == "mock"

    def _score(self, code: str) -> tuple:
        """(feasible, fitness, raw_score, error, wall_ms), cached per code."""
        with self._cache_lock:
            hit = self._cache.get(code)
        if hit is None:
            hit = self._score_uncached(code)
            with self._cache_lock:
                hit = self._cache.setdefault(code, hit)
        return hit

    def _score_uncached(self, code: str) -> tuple:
        started = time.perf_counter()
        feasible, fitness, raw, error = False, None, None, None
        spec = self.problem.spec
        ok, detail = probe_feasibility(self.evaluator, code, spec.function_name,
                                       self.problem.probes, seed=self.eval_seed)
        if not ok:
            error = "probe failed: %s" % detail
        else:
            with self.evaluator.open(code, spec.function_name) as fn:
                if fn.load_error is not None:
                    error = fn.load_error.error_text()
                else:
                    try:
                        fitness, raw = self.problem.evaluate(fn, self.eval_seed)
                        feasible = True
                    except EvalFailure as exc:
                        error = str(exc)
        wall_ms = (0 if self._deterministic_timing()
                   else int((time.perf_counter() - started) * 1000))
        return feasible, fitness, raw, error, wall_ms

    def _meta(self, prompts: Sequence[str], replies: Sequence[str],
              wall_ms: int) -> dict:
        return {"prompt_hash": _joined_hash(prompts),
                "reply_hash": _joined_hash(replies),
                "representation_mode": self.mode,
                "eval_wall_ms": wall_ms}

    def run_attempt(self, strategy: str, parents: Sequence[Heuristic],
                    seed: int) -> Heuristic:
        prompt = build_prompt(self.problem.templates, self.problem.spec,
                              strategy, parents, self.mode)
        prompts, replies = [prompt], []
        thought, code, error = "", "", None
        try:
            reply = self.backend.complete(ChatRequest(prompt=prompt))
            replies.append(reply)
            parsed = parse_response(reply, self.problem.spec, self.mode)
            # Code-only individuals carry no description even when the
            # reply volunteers one.
            thought = "" if self.mode == "C2C" else (parsed.thought or "")
            if self.mode in TWO_CALL_MODES:
                # The first reply carries only the description; a second
                # query materializes it, whatever else the reply contained.
                code_prompt = build_code_prompt(self.problem.templates,
                                                self.problem.spec, thought)
                prompts.append(code_prompt)
                code_reply = self.backend.complete(ChatRequest(prompt=code_prompt))
                replies.append(code_reply)
                code = parse_code_response(code_reply, self.problem.spec)
            else:
                code = parsed.code or ""
        except AuthError:
            raise
        except (BackendError, ParseError) as exc:
            error = "%s: %s" % (type(exc).__name__, exc)

        if error is not None:
            return Heuristic(id="", thought=thought, code=code, fitness=None,
                             raw_score=None, generation=0, strategy=strategy,
                             feasible=False, error=error,
                             meta=self._meta(prompts, replies, 0))
        feasible, fitness, raw, error, wall_ms = self._score(code)
        return Heuristic(id="", thought=thought, code=code, fitness=fitness,
                         raw_score=raw, generation=0, strategy=strategy,
                         feasible=feasible, error=error,
                         meta=self._meta(prompts, replies, wall_ms))

    def evaluate_seed(self, code: str, seed: int) -> Heuristic:
        feasible, fitness, raw, error, wall_ms = self._score(code)
        return Heuristic(id="", thought="", code=code, fitness=fitness,
                         raw_score=raw, generation=0, strategy="INIT",
                         feasible=feasible, error=error,
                         meta=self._meta((), (), wall_ms))
