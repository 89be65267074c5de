"""Attempt pipeline: prompt round trips, caching, failure recording.

Everything runs against the mock backend and the native registry, so
expected replies and scores can be recomputed independently in the test.
"""

import dataclasses

import numpy as np
import pytest

from heurevo import core
from heurevo.backend import (AuthError, Backend, BackendConfig, ChatRequest,
                             mock_complete, stable_hash)
from heurevo.mockpool import pool_for
from heurevo.pipeline import DesignPipeline
from heurevo.problems import BinPackingEvalSettings, make_problem
from heurevo.prompts import build_prompt, parse_response
from heurevo.sandbox import NativeRegistryEvaluator
from heurevo.sources import entry_named, native_registry

SETTINGS = BinPackingEvalSettings(n_instances=2, n_items=60)


def make_pipeline(mode="FULL", pool=None, rng_seed=0, registry=None,
                  eval_seed=0):
    problem = make_problem("binpacking", SETTINGS)
    backend = Backend(BackendConfig(kind="mock"),
                      pool=pool or pool_for("binpacking"), rng_seed=rng_seed)
    evaluator = NativeRegistryEvaluator(registry)
    return DesignPipeline(problem, backend, evaluator, mode=mode,
                          eval_seed=eval_seed), backend


def parent_from(entry_name, id_="p0"):
    entry = entry_named(entry_name)
    return core.Heuristic(id=id_, thought=entry.thought, code=entry.code,
                          fitness=-0.9, raw_score=0.9, generation=0,
                          strategy="INIT", feasible=True)


def test_init_attempt_is_feasible_and_hashed():
    pipe, backend = make_pipeline()
    h = pipe.run_attempt("INIT", [], seed=123)
    assert h.feasible and h.error is None
    assert h.code in native_registry()
    assert h.thought
    assert h.fitness == -h.raw_score
    assert 0 < h.raw_score <= 1

    prompt = build_prompt(pipe.problem.templates, pipe.problem.spec,
                          "INIT", [], "FULL")
    reply = mock_complete(pipe.backend.pool, ChatRequest(prompt=prompt), 0)
    assert h.meta["prompt_hash"] == stable_hash(prompt)
    assert h.meta["reply_hash"] == stable_hash(reply)
    assert h.meta["eval_wall_ms"] == 0
    assert h.meta["representation_mode"] == "FULL"
    assert h.code == parse_response(reply, pipe.problem.spec).code
    assert backend.query_count == 1


def test_attempts_are_deterministic():
    pipe, _ = make_pipeline()
    parents = [parent_from("first_fit")]
    first = pipe.run_attempt("M1", parents, seed=5)
    second = pipe.run_attempt("M1", parents, seed=5)
    assert dataclasses.asdict(first) == dataclasses.asdict(second)


def test_repeated_code_is_evaluated_once():
    pipe, backend = make_pipeline()
    first = pipe.run_attempt("INIT", [], seed=1)
    cached = dict(pipe._cache)
    second = pipe.run_attempt("INIT", [], seed=1)
    assert backend.query_count == 2
    assert dict(pipe._cache) == cached
    assert second.fitness == first.fitness


def test_c2c_attempt_drops_the_thought():
    pipe, backend = make_pipeline(mode="C2C")
    h = pipe.run_attempt("E1", [parent_from("best_fit")], seed=2)
    assert h.feasible
    assert h.thought == ""
    assert h.meta["representation_mode"] == "C2C"
    assert backend.query_count == 1


def test_two_call_mode_queries_twice_and_materializes():
    pipe, backend = make_pipeline(mode="T2T2C")
    h = pipe.run_attempt("E1", [parent_from("best_fit")], seed=2)
    assert backend.query_count == 2
    assert h.feasible
    assert h.thought
    assert h.code in native_registry()
    # Hashes cover both queries of the exchange.
    prompt1 = build_prompt(pipe.problem.templates, pipe.problem.spec, "E1",
                           [parent_from("best_fit")], "T2T2C")
    assert h.meta["prompt_hash"] != stable_hash(prompt1)


def test_unparseable_reply_is_recorded_not_raised():
    pipe, backend = make_pipeline(pool=["thinking, but no code at all"])
    h = pipe.run_attempt("INIT", [], seed=9)
    assert not h.feasible
    assert "MissingCode" in h.error
    assert h.code == ""
    assert h.meta["reply_hash"] == stable_hash("thinking, but no code at all")
    assert backend.query_count == 1


def test_unknown_code_text_is_refused_by_native_registry():
    pool = ["{A scorer nobody registered.}\n```python\ndef score(item, bins):\n    return bins * 0\n```"]
    pipe, _ = make_pipeline(pool=pool)
    h = pipe.run_attempt("INIT", [], seed=4)
    assert not h.feasible
    assert "CompileError" in h.error


def test_probe_failure_marks_attempt_infeasible():
    code = "def score(item, bins):\n    return 1.0"
    registry = {code: lambda item, bins: np.float64(1.0)}
    pool = ["{Scalar score.}\n```python\n%s\n```" % code]
    pipe, _ = make_pipeline(pool=pool, registry=registry)
    h = pipe.run_attempt("INIT", [], seed=4)
    assert not h.feasible
    assert h.error.startswith("probe failed")


def test_evaluation_crash_marks_attempt_infeasible():
    code = "def score(item, bins):\n    return crash_later(bins)"

    def sometimes(item, bins):
        if len(bins) > 10:
            raise RuntimeError("big input breaks")
        return np.zeros(len(bins))

    pipe, _ = make_pipeline(
        pool=["{Breaks on real instances.}\n```python\n%s\n```" % code],
        registry={code: sometimes})
    h = pipe.run_attempt("INIT", [], seed=4)
    assert not h.feasible
    assert "RuntimeError" in h.error


def test_evaluate_seed_scores_code_directly():
    pipe, backend = make_pipeline()
    entry = entry_named("best_fit")
    h = pipe.evaluate_seed(entry.code, seed=11)
    assert h.feasible and h.thought == ""
    assert h.fitness == -h.raw_score
    assert backend.query_count == 0
    assert h.meta["prompt_hash"] == 0 and h.meta["reply_hash"] == 0


def test_auth_error_aborts_the_generation():
    problem = make_problem("binpacking", SETTINGS)
    config = BackendConfig(kind="http", endpoint_url="https://example.invalid",
                           model_id="m", api_key_env="HEUREVO_TEST_NO_SUCH_KEY")
    pipe = DesignPipeline(problem, Backend(config), NativeRegistryEvaluator())
    with pytest.raises(AuthError):
        pipe.run_attempt("INIT", [], seed=0)

    population = core.Population(
        members=[parent_from("best_fit")], capacity=2)
    run_config = core.RunConfig(pop_size=2, generations=1, max_concurrent=1,
                                enabled_strategies=("M1",))
    with pytest.raises(AuthError):
        core.evolve_generation(population, run_config, 1, pipe)


def test_full_run_replays_identically():
    def one_run():
        pipe, backend = make_pipeline()
        config = core.RunConfig(pop_size=3, generations=2, rng_seed=0)
        result = core.run(config, pipe)
        return result, backend

    first, backend_a = one_run()
    second, backend_b = one_run()
    assert [dataclasses.asdict(r) for r in first.records] \
        == [dataclasses.asdict(r) for r in second.records]
    assert backend_a.query_count == backend_b.query_count
    assert first.best_series == second.best_series
    assert [h.id for h in first.population.members] \
        == [h.id for h in second.population.members]
