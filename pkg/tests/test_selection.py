import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from featsel import numerics as nx
from featsel import selection as sel
from featsel import simenv
from featsel.errors import InvalidInputError, NotPositiveDefiniteError
from featsel.selection import CandidateSet, Measure

from conftest import random_spd


def test_maximal_information_trivial():
    c = CandidateSet(np.eye(3), np.zeros((0, 3, 3)))
    np.testing.assert_array_equal(sel.maximal_information(c), np.eye(3))
    c = CandidateSet(np.eye(3), [np.eye(3)])
    np.testing.assert_array_equal(sel.maximal_information(c), 2 * np.eye(3))


def test_maximal_dominates_every_subset():
    c = simenv.random_candidates(3, 5, 2)
    Hmax = sel.maximal_information(c)
    for k in range(6):
        for sub in itertools.combinations(range(5), k):
            H = c.fused(list(sub))
            assert nx.loewner_geq(Hmax, H)
            assert nx.loewner_geq(H, c.prior_H)


def test_candidate_ids_sorted_and_unique():
    c = CandidateSet(np.eye(2), [np.eye(2), 2 * np.eye(2)], ids=[9, 4])
    np.testing.assert_array_equal(c.ids, [4, 9])
    np.testing.assert_array_equal(c.Hf[0], 2 * np.eye(2))
    with pytest.raises(InvalidInputError):
        CandidateSet(np.eye(2), [np.eye(2), np.eye(2)], ids=[1, 1])


def test_leverage_single_feature():
    c = CandidateSet(np.eye(4), [random_spd(np.random.default_rng(0), 4)])
    s = sel.leverage_scores(c)
    np.testing.assert_allclose(s.r, [4.0])
    np.testing.assert_allclose(s.pi, [1.0])


def test_leverage_identical_features():
    Hf = random_spd(np.random.default_rng(1), 6, ridge=0.0)
    s = sel.leverage_scores(CandidateSet(np.eye(6), [Hf, Hf]))
    np.testing.assert_allclose(s.pi, [0.5, 0.5], atol=1e-14)


def test_leverage_solve_then_trace():
    c = simenv.random_candidates(4, 3, 2)
    s = sel.leverage_scores(c)
    Hmax = c.prior_H + c.Hf.sum(axis=0)
    for f in range(3):
        X = np.linalg.solve(Hmax, c.prior_H / 3 + c.Hf[f])
        assert s.r[f] == pytest.approx(np.trace(X), abs=1e-10)


@given(st.integers(0, 10_000), st.integers(1, 12), st.integers(1, 3))
def test_probabilities_sum_to_one(seed, N, T):
    c = simenv.random_candidates(seed, N, T)
    assert abs(sel.leverage_scores(c).pi.sum() - 1.0) < 1e-10


def test_leverage_requires_pd():
    c = CandidateSet(np.zeros((2, 2)), [np.diag([1.0, 0.0])])
    with pytest.raises(NotPositiveDefiniteError):
        sel.leverage_scores(c)


def test_sampler_zero_budget(small_candidates):
    c = small_candidates
    res = sel.sample_subset(c, sel.leverage_scores(c), 0, seed=1)
    assert res.selected == ()
    np.testing.assert_array_equal(res.H, c.prior_H)


def test_sampler_degenerate_probability(small_candidates):
    c = small_candidates
    s = sel.leverage_scores(c)
    pi = np.zeros(c.N)
    pi[2] = 1.0
    s = sel.ScoreTable(s.ids, s.r, pi, s.n)
    for q in (1, 5):
        assert sel.sample_subset(c, s, q, seed=q).selected == (int(c.ids[2]),)


def _frequency_check(draws, p):
    n = draws.size
    counts = np.bincount(draws, minlength=p.size)
    se = np.sqrt(n * p * (1 - p))
    assert np.all(np.abs(counts - n * p) <= 3 * se + 1e-9)


def test_sampler_draw_frequencies(small_candidates):
    c = small_candidates
    s = sel.leverage_scores(c)
    res = sel.sample_subset(c, s, 100_000, seed=3)
    _frequency_check(res.draws, s.pi / s.pi.sum())


def test_uniform_select():
    c = simenv.random_candidates(5, 8, 2)
    assert sel.uniform_select(c, 0, seed=0).selected == ()
    single = CandidateSet(np.eye(3), [np.eye(3)], ids=[42])
    assert sel.uniform_select(single, 3, seed=0).selected == (42,)
    _frequency_check(sel.uniform_select(c, 100_000, seed=4).draws, np.full(8, 1 / 8))


def test_sampler_keeps_first_occurrences(small_candidates):
    c = small_candidates
    res = sel.sample_subset(c, sel.leverage_scores(c), 12, seed=5)
    _, first = np.unique(res.draws, return_index=True)
    expect = tuple(int(c.ids[res.draws[i]]) for i in sorted(first))
    assert res.selected == expect
    assert len(res.selected) <= 12


def test_analysis_single_draw(small_candidates):
    c = small_candidates
    s, ref = sel.leverage_scores(c), sel.refine_scores(c)
    run = sel.sample_subset_analysis(c, s, 1, seed=9, refined=ref)
    assert len(run.weights) == 1
    (f, i), w = next(iter(run.weights.items()))
    assert w == pytest.approx(1.0 / ref.pi[f, i])
    # feature draws coincide with the plain sampler on the same seed
    assert run.result.selected == sel.sample_subset(c, s, 1, seed=9).selected


def test_refined_scores_sum_to_coarse():
    for seed in range(5):
        c = simenv.random_candidates(seed, 7, 2)
        np.testing.assert_allclose(sel.refine_scores(c).r.sum(axis=1), sel.leverage_scores(c).r, atol=1e-10)


def test_greedy_edges():
    c = simenv.random_candidates(6, 6, 2)
    assert sel.greedy_select(c, 0).selected == ()
    full = sel.greedy_select(c, c.N)
    assert sorted(full.selected) == sorted(int(i) for i in c.ids)
    np.testing.assert_allclose(full.H, sel.maximal_information(c))


def test_greedy_tie_breaks_to_lowest_id():
    c = CandidateSet(np.eye(2), [np.eye(2)] * 3, ids=[7, 3, 5])
    assert sel.greedy_select(c, 2).selected == (3, 5)


def test_greedy_not_better_than_brute_force():
    c = simenv.random_candidates(8, 10, 2)
    best = min(sel.evaluate_measure("rho_v", c.fused(list(s)))
               for s in itertools.combinations(range(10), 3))
    g = sel.greedy_select(c, 3)
    assert g.value >= best - 1e-12


def test_measures_trivial():
    n = 5
    assert sel.evaluate_measure(Measure.RHO_V, np.eye(n)) == pytest.approx(n)
    assert sel.evaluate_measure(Measure.RHO_E, np.eye(n)) == 0.0
    assert sel.evaluate_measure(Measure.RHO_LAMBDA, 2 * np.eye(n)) == pytest.approx(0.5)
    assert sel.evaluate_measure("rho_e", np.diag([2.0, 2.0])) == pytest.approx(-2 * math.log(2))
    with pytest.raises(NotPositiveDefiniteError):
        sel.evaluate_measure("rho_v", np.diag([1.0, -1.0]))


@given(st.integers(0, 10_000))
def test_measures_match_eigenvalues(seed):
    H = random_spd(np.random.default_rng(seed), 7, ridge=0.1)
    lam = np.linalg.eigvalsh(H)
    for m, expect in ((Measure.RHO_V, np.sum(1 / lam)), (Measure.RHO_E, -np.sum(np.log(lam))),
                      (Measure.RHO_LAMBDA, 1 / lam[0])):
        assert sel.evaluate_measure(m, H) == pytest.approx(expect, rel=1e-8, abs=1e-12)
        assert sel.batch_measure(m, H[None])[0] == pytest.approx(expect, rel=1e-8, abs=1e-12)


def test_best_of_restarts_properties(small_candidates):
    c = small_candidates
    one = sel.best_of_restarts(c, 3, p=1, seed=11)
    direct = sel.sample_subset(c, sel.leverage_scores(c), 3, seed=sel.restart_seed(11, 0))
    assert one.selected == direct.selected
    many = sel.best_of_restarts(c, 3, p=20, seed=11)
    assert many.value <= min(many.restart_values) + 0.0
    threaded = sel.best_of_restarts(c, 3, p=20, seed=11, workers=4)
    assert threaded.selected == many.selected and threaded.restart == many.restart


def test_certificate_full_selection_passes(small_candidates):
    c = small_candidates
    H = sel.maximal_information(c)
    full = sel.SelectionResult("all", tuple(c.ids), H, Measure.RHO_V, sel.evaluate_measure("rho_v", H))
    eps = 0.5
    for chi_bar in ((1 - eps) / 4, 1.0, 30.0):
        cert = sel.certify_bounds(c, full, eps, chi_bar)
        assert cert.loewner and cert.measures_pass


def test_certificate_implication_single_run():
    c = simenv.random_candidates(2024, 60, 1)
    q = math.ceil(c.n * math.log(c.n) / 0.25)
    run = sel.sample_subset_analysis(c, sel.leverage_scores(c), q, seed=0)
    cert = sel.certify_bounds(c, run.result, 0.5, run.chi, q=q)
    if cert.loewner:
        assert cert.measures_pass
    # direct evaluation of the measure-loss forms
    Hmax = sel.maximal_information(c)
    factor = 4 * run.chi / 0.5
    if cert.loewner:
        for m in Measure:
            if m is Measure.RHO_E:
                assert (sel.evaluate_measure(m, run.result.H) - sel.evaluate_measure(m, Hmax)
                        <= c.n * math.log(factor) + 1e-9)
            else:
                assert sel.evaluate_measure(m, run.result.H) <= factor * sel.evaluate_measure(m, Hmax) * (1 + 1e-9)


def test_certificate_rejects_bad_eps(small_candidates):
    c = small_candidates
    res = sel.greedy_select(c, 2)
    with pytest.raises(InvalidInputError):
        sel.certify_bounds(c, res, eps=1.0)
