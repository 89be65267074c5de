from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heurevo import fssp
from heurevo.tsp import NotAPermutation


def exhaustive_optimum(matrix):
    n = len(matrix)
    best, best_seq = np.inf, None
    for perm in itertools.permutations(range(n)):
        mk = fssp.makespan(np.array(perm), matrix)
        if mk < best:
            best, best_seq = mk, perm
    return best, best_seq


def test_generate_deterministic_uniform():
    a = fssp.generate(20, 10, seed=1)
    b = fssp.generate(20, 10, seed=1)
    assert np.array_equal(a.time_matrix, b.time_matrix)
    assert a.time_matrix.min() >= 0.0 and a.time_matrix.max() < 1.0
    big = fssp.generate(1000, 1000, seed=0)
    assert 0.499 <= big.time_matrix.mean() <= 0.501


def test_generate_rejects_empty():
    with pytest.raises(ValueError):
        fssp.generate(0, 3, seed=0)


def test_makespan_two_jobs():
    p = np.array([[1.0, 2.0], [2.0, 1.0]])
    assert fssp.makespan([0, 1], p) == pytest.approx(4.0)
    assert fssp.makespan([1, 0], p) == pytest.approx(5.0)


def test_makespan_single_job_chains():
    assert fssp.makespan([0], np.array([[3.0, 4.0]])) == pytest.approx(7.0)


def test_makespan_rejects_bad_sequence():
    p = np.array([[1.0], [2.0]])
    with pytest.raises(NotAPermutation):
        fssp.makespan([0, 0], p)


@given(st.integers(min_value=1, max_value=6), st.integers(min_value=1, max_value=4),
       st.integers(min_value=0, max_value=10 ** 6))
@settings(max_examples=60, deadline=None)
def test_makespan_dominates_load_bounds(n, m, seed):
    rng = np.random.default_rng(seed)
    p = rng.random((n, m))
    seq = rng.permutation(n)
    mk = fssp.makespan(seq, p)
    assert mk >= p.sum(axis=0).max() - 1e-12  # machine load
    assert mk >= p.sum(axis=1).max() - 1e-12  # job chain


def test_johnson_examples():
    seq = fssp.johnson([3, 1], [2, 4])
    assert seq.tolist() == [1, 0]
    p = np.array([[3.0, 2.0], [1.0, 4.0]])
    assert fssp.makespan(seq, p) == pytest.approx(7.0)
    assert fssp.johnson([2, 2, 2], [2, 2, 2]).tolist() == [0, 1, 2]
    assert fssp.johnson([5], [1]).tolist() == [0]


@given(st.integers(min_value=1, max_value=6), st.integers(min_value=0, max_value=10 ** 6))
@settings(max_examples=60, deadline=None)
def test_johnson_is_optimal_for_two_machines(n, seed):
    rng = np.random.default_rng(seed)
    p = rng.random((n, 2)) + 0.01
    seq = fssp.johnson(p[:, 0], p[:, 1])
    opt, _ = exhaustive_optimum(p)
    assert fssp.makespan(seq, p) == pytest.approx(opt)


def test_gupta_example():
    inst = fssp.FsspInstance(np.array([[1.0, 4.0], [4.0, 1.0]]))
    seq = fssp.gupta(inst)
    assert seq.tolist() == [0, 1]
    assert fssp.makespan(seq, inst.time_matrix) == pytest.approx(6.0)


def test_cds_example():
    inst = fssp.FsspInstance(np.array([[1.0, 2.0, 3.0], [3.0, 2.0, 1.0]]))
    seq = fssp.cds(inst)
    assert seq.tolist() == [0, 1]
    assert fssp.makespan(seq, inst.time_matrix) == pytest.approx(7.0)


def test_neh_example():
    inst = fssp.FsspInstance(np.array([[3.0, 4.0], [2.0, 2.0], [5.0, 1.0]]))
    seq = fssp.neh(inst)
    assert seq.tolist() == [1, 0, 2]
    assert fssp.makespan(seq, inst.time_matrix) == pytest.approx(11.0)
    opt, _ = exhaustive_optimum(inst.time_matrix)
    assert opt == pytest.approx(11.0)


def test_constructives_return_permutations():
    inst = fssp.generate(12, 6, seed=4)
    for name, fn in fssp.BUILTIN_SEQUENCERS.items():
        seq = fn(inst)
        assert sorted(seq.tolist()) == list(range(12)), name


def test_neh_close_to_optimum_small():
    worst = 0.0
    for seed in range(100):
        inst = fssp.generate(6, 3, seed=seed)
        opt, _ = exhaustive_optimum(inst.time_matrix)
        ratio = fssp.makespan(fssp.neh(inst), inst.time_matrix) / opt
        worst = max(worst, ratio)
    assert worst <= 1.2


def test_constructive_mean_ordering():
    insts = [fssp.generate(20, 10, seed=s) for s in range(10)]
    means = {}
    for name in ("neh", "cds", "gupta"):
        fn = fssp.BUILTIN_SEQUENCERS[name]
        means[name] = np.mean([fssp.makespan(fn(i), i.time_matrix) for i in insts])
    assert means["neh"] <= means["cds"] <= means["gupta"]


def test_nehff_never_much_worse_than_neh():
    for seed in range(20):
        inst = fssp.generate(10, 5, seed=seed)
        a = fssp.makespan(fssp.neh(inst), inst.time_matrix)
        b = fssp.makespan(fssp.nehff(inst), inst.time_matrix)
        assert b <= a * 1.1


def test_local_search_descends():
    inst = fssp.generate(12, 5, seed=7)
    start = np.random.default_rng(0).permutation(12)
    out = fssp.local_search(start, inst.time_matrix)
    assert fssp.makespan(out, inst.time_matrix) <= fssp.makespan(start, inst.time_matrix)
    again = fssp.local_search(out, inst.time_matrix)
    assert fssp.makespan(again, inst.time_matrix) == pytest.approx(
        fssp.makespan(out, inst.time_matrix))


def test_local_search_usually_finds_small_optimum():
    hits = 0
    for seed in range(100):
        inst = fssp.generate(5, 3, seed=seed)
        opt, _ = exhaustive_optimum(inst.time_matrix)
        start = np.random.default_rng(seed + 1000).permutation(5)
        mk = fssp.makespan(fssp.local_search(start, inst.time_matrix), inst.time_matrix)
        hits += mk <= opt + 1e-9
    assert hits >= 90


def test_restricted_local_search_honors_allowed_jobs():
    # Every improving move rearranges jobs 0 and 2; no move touching job 1
    # changes the makespan, so restricting to job 1 must return the start.
    p = np.array([[5.0, 1.0, 1.0],
                  [0.1, 0.1, 0.1],
                  [1.0, 1.0, 5.0]])
    start = [0, 1, 2]
    full = fssp.local_search(start, p)
    assert fssp.makespan(full, p) < fssp.makespan(start, p)
    frozen = fssp.local_search(start, p, allowed_jobs=[1])
    assert frozen.tolist() == start
    capped = fssp.local_search(start, p, max_accepted=0)
    assert capped.tolist() == start


def test_gls_identity_improves_on_neh():
    inst = fssp.generate(10, 4, seed=3)
    neh_mk = fssp.makespan(fssp.neh(inst), inst.time_matrix)

    def heur(seq, matrix, m, n, seed):
        return fssp.identity_perturbation(seq, matrix, m, n)

    state = fssp.guided_local_search(inst, heur, max_ls_calls=5)
    assert state.best_makespan <= neh_mk + 1e-12
    assert state.ls_calls == 5


def test_gls_with_evolved_perturbation_finds_small_optimum():
    inst = fssp.generate(8, 3, seed=0)
    opt, _ = exhaustive_optimum(inst.time_matrix)

    def heur(seq, matrix, m, n, seed):
        np.random.seed(seed % 2 ** 32)
        return fssp.evolved_perturbation(seq, matrix, m, n)

    state = fssp.guided_local_search(inst, heur, max_ls_calls=50, run_seed=0)
    assert state.best_makespan == pytest.approx(opt, abs=1e-9)


def test_gls_rejects_bad_heuristics():
    inst = fssp.generate(6, 3, seed=1)
    with pytest.raises(fssp.HeuristicShapeMismatch):
        fssp.guided_local_search(
            inst, lambda s, p, m, n, seed: (np.zeros((2, 2)), np.array([0])),
            max_ls_calls=3)
    with pytest.raises(fssp.InvalidJobIndex):
        fssp.guided_local_search(
            inst, lambda s, p, m, n, seed: (p.copy(), np.array([99])),
            max_ls_calls=3)
    with pytest.raises(fssp.InvalidJobIndex):
        fssp.guided_local_search(
            inst, lambda s, p, m, n, seed: (p.copy(), np.array([], dtype=int)),
            max_ls_calls=3)
    with pytest.raises(ValueError):
        fssp.guided_local_search(
            inst, lambda s, p, m, n, seed: (p * np.nan, np.array([0])),
            max_ls_calls=3)


def test_mean_makespan():
    assert fssp.mean_makespan([7.0]) == 7.0
    assert fssp.mean_makespan([4.0, 6.0]) == 5.0
    with pytest.raises(ValueError):
        fssp.mean_makespan([])


def test_instance_files_round_trip(tmp_path):
    insts = [fssp.generate(5, 3, seed=s) for s in range(3)]
    path = tmp_path / "fssp.json"
    fssp.save_instances(path, insts)
    back = fssp.load_instances(path)
    for a, b in zip(insts, back):
        assert np.allclose(a.time_matrix, b.time_matrix)
