import math

import numpy as np
import pytest
from scipy import stats

from qfacts.channels import CycleConfig, build_nd_model, nd_dynamics
from qfacts.errors import InsufficientResolvedCycles, TooLarge
from qfacts.jumps import (
    classify_windows,
    default_epsilon,
    history_sets_probability,
    markov_limit_comparison,
    run_cycles,
    theorem43_check,
    theoretical_transition_matrix,
)
from qfacts.models import SIGMA_X, SIGMA_Y, fact_state, qd2_model, qd2_psi, random_nd_model
from qfacts.qcore import ProjectorFamily, diagonal_projectors, random_unitary


def cfg(h, M=50, lambda1=0.001, lambda2=1.0, model=None):
    return CycleConfig(lambda1, lambda2, M, h, model or qd2_model())


def test_no_hamiltonian_no_jumps():
    m = qd2_model()
    jt, rec = run_cycles(cfg(np.zeros((2, 2))), fact_state(m.projectors, 0), 30, seed=1)
    assert len(jt.cycles) == 30
    assert np.all(jt.nu_hat == 0)
    assert len(rec.protocol) == 30 * 50
    assert rec.state_steps == tuple(50 * (i + 1) for i in range(30))


def test_full_flip_alternates():
    m = qd2_model()
    c = cfg(np.pi / 2 * SIGMA_X, M=100)
    jt, _ = run_cycles(c, fact_state(m.projectors, 0), 10, seed=2)
    np.testing.assert_array_equal(jt.nu_hat, [0, 1] * 5)
    assert np.all(jt.resolved)


def test_run_cycles_deterministic():
    c = cfg(0.3 * SIGMA_X, M=20)
    a, ra = run_cycles(c, qd2_psi(), 15, seed=9)
    b, rb = run_cycles(c, qd2_psi(), 15, seed=9)
    assert a.to_tsv() == b.to_tsv()
    assert ra.protocol == rb.protocol


def test_ties_are_counted_and_censored():
    c = cfg(0.785 * SIGMA_X, M=20)
    mc = markov_limit_comparison(c, qd2_psi(), 500, seed=3, n_runs=2, min_transitions=1)
    assert mc.n_censored > 0
    assert mc.n_transitions + mc.n_censored == 2 * 499
    jt, _ = run_cycles(c, qd2_psi(), 500, seed=3)
    assert np.any(jt.tie)
    assert not np.any(jt.resolved[jt.tie])


def test_jump_tsv_layout():
    jt, _ = run_cycles(cfg(np.zeros((2, 2))), qd2_psi(), 3, seed=1)
    lines = jt.to_tsv().splitlines()
    assert lines[0] == "cycle\tnu_hat\ttie\tmax_weight\tblock_distance"
    assert len(lines) == 4


def test_theorem43_nd_limit():
    rep = theorem43_check(cfg(np.zeros((2, 2))), qd2_psi(), 100, 0.05, seed=4, n_runs=5)
    assert rep.fraction >= 0.95 and rep.passed
    assert 2 * math.sqrt(0.21) ** 50 < 0.05 or (0.9165 ** 50) < 0.05


def test_theorem43_tiny_burst_fails():
    rep = theorem43_check(cfg(np.zeros((2, 2)), M=1), qd2_psi(), 50, 0.05, seed=4, n_runs=4)
    assert not rep.passed
    with pytest.raises(ValueError):
        theorem43_check(cfg(np.zeros((2, 2))), qd2_psi(), 5, 0.0, seed=1)


def test_theorem43_improves_with_burst_length():
    fr = []
    for M in (1, 5, 20, 50):
        rep = theorem43_check(cfg(0.2 * SIGMA_X, M=M), qd2_psi(), 60, 0.05, seed=5, n_runs=10)
        fr.append(rep.fraction)
    assert all(b >= a - 0.02 for a, b in zip(fr, fr[1:]))
    assert fr[-1] > fr[0]


def test_theoretical_matrix_values():
    m = qd2_model()
    omega = np.pi / 2
    t = theoretical_transition_matrix(m.projectors, omega / 2 * SIGMA_X, 1.0)
    np.testing.assert_allclose(t, [[0.5, 0.5], [0.5, 0.5]], atol=1e-12)
    np.testing.assert_allclose(theoretical_transition_matrix(m.projectors, np.zeros((2, 2)), 1.0),
                               np.eye(2), atol=1e-15)
    t = theoretical_transition_matrix(m.projectors, 0.3 * SIGMA_X, 1.0)
    np.testing.assert_allclose(t[0, 1], math.sin(0.3) ** 2, atol=1e-12)


def test_theoretical_matrix_row_stochastic_and_rotation_invariant():
    rng = np.random.default_rng(8)
    proj = diagonal_projectors(4, [[0], [1, 2], [3]])
    a = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    h = a + a.conj().T
    t = theoretical_transition_matrix(proj, h, 0.7)
    np.testing.assert_allclose(t.sum(axis=1), 1.0, atol=1e-10)
    u = random_unitary(4, rng)
    rot = ProjectorFamily(proj.labels, tuple(u @ p @ u.conj().T for p in proj.projectors))
    t2 = theoretical_transition_matrix(rot, u @ h @ u.conj().T, 0.7)
    np.testing.assert_allclose(t2, t, atol=1e-10)


def test_nd_limit_transitions_are_identity():
    c = cfg(np.zeros((2, 2)))
    mc = markov_limit_comparison(c, qd2_psi(), 100, seed=6, n_runs=4)
    fail = 1 - theorem43_check(c, qd2_psi(), 100, 0.05, seed=6, n_runs=4).fraction
    # a misread burst adds up to two off-diagonal transitions even when the state is pure
    misread = max(stats.binom.sf(25, 50, 0.3), stats.binom.cdf(25, 50, 0.7))
    rate = 2 * misread + fail
    off = mc.counts[0, 1] + mc.counts[1, 0]
    assert off / mc.n_transitions <= rate + 4 * math.sqrt(rate / mc.n_transitions)
    np.testing.assert_array_equal(mc.theoretical, np.eye(2))


def test_full_flip_transitions_are_permutation():
    c = cfg(np.pi / 2 * SIGMA_X, M=100)
    mc = markov_limit_comparison(c, qd2_psi(), 100, seed=7, n_runs=3)
    np.testing.assert_allclose(mc.theoretical, [[0, 1], [1, 0]], atol=1e-12)
    for i in range(2):
        n = mc.counts[i].sum()
        p = 1 - 1e-3
        assert abs(mc.empirical[i, 1 - i] - 1) <= 4 * math.sqrt(p * (1 - p) / n) + 1e-3


def test_too_few_transitions():
    with pytest.raises(InsufficientResolvedCycles):
        markov_limit_comparison(cfg(np.zeros((2, 2))), qd2_psi(), 20, seed=1)


def test_markov_report_rows():
    c = cfg(np.pi / 4 * SIGMA_Y, M=60)
    mc = markov_limit_comparison(c, qd2_psi(), 150, seed=2, n_runs=2)
    np.testing.assert_allclose(np.nansum(mc.empirical, axis=1), 1.0, atol=1e-10)
    assert mc.max_abs_deviation == pytest.approx(np.nanmax(np.abs(mc.empirical - mc.theoretical)))
    d = mc.to_dict()
    assert d["n_transitions"] == mc.n_transitions


def test_default_epsilon():
    assert default_epsilon(8) == pytest.approx(0.5)
    assert math.sqrt(1000) * default_epsilon(1000) > math.sqrt(10) * default_epsilon(10)


def test_classify_windows():
    m = qd2_model()
    out = np.array([[0, 0, 0, 1, 1, 0, 1, 1, 1, 1]])  # windows of 5: f_L 0.6 then 0.2
    np.testing.assert_array_equal(classify_windows(out, m, 5, 2, 0.2), [[1, 0]])
    np.testing.assert_array_equal(classify_windows(out, m, 5, 2, 0.55), [[-1, -1]])


def test_histories_nd_concentrate_on_constant():
    m = qd2_model()
    rep = history_sets_probability(nd_dynamics(m), qd2_psi(), 6, 3, epsilon=0.15, method="exact")
    total = sum(rep.masses.values()) + rep.uncovered
    assert total == pytest.approx(1.0, abs=1e-12)
    assert rep.coverage == pytest.approx(sum(rep.masses.values()))
    big = history_sets_probability(nd_dynamics(m), qd2_psi(), 200, 2, method="montecarlo",
                                   budget=4000, seed=1)
    const = {h: w for h, w in big.masses.items() if len(set(h)) == 1}
    assert sum(const.values()) == pytest.approx(sum(big.masses.values()))
    for nu, w in zip(m.labels, (0.4, 0.6)):
        assert const[(nu, nu)] == pytest.approx(w, abs=4 * math.sqrt(w * (1 - w) / 4000) + big.uncovered)


def test_histories_exact_matches_monte_carlo():
    m = qd2_model()
    ex = history_sets_probability(nd_dynamics(m), qd2_psi(), 5, 2, epsilon=0.25)
    assert ex.method == "exact"
    mc = history_sets_probability(nd_dynamics(m), qd2_psi(), 5, 2, epsilon=0.25,
                                  method="montecarlo", budget=40_000, seed=3)
    assert abs(mc.uncovered - ex.uncovered) <= 4 * mc.uncovered_stderr
    for h, w in ex.masses.items():
        assert abs(mc.masses.get(h, 0.0) - w) <= 4 * math.sqrt(w * (1 - w) / 40_000) + 1e-12


def test_histories_wide_epsilon():
    m = qd2_model()
    rep = history_sets_probability(nd_dynamics(m), qd2_psi(), 4, 2, epsilon=1.0)
    assert rep.uncovered == pytest.approx(1.0)
    proj = diagonal_projectors(2, [[0, 1]])
    one = build_nd_model(proj, {"a": [np.sqrt(0.5)], "b": [np.sqrt(0.5)]})
    rep = history_sets_probability(nd_dynamics(one), np.eye(2) / 2, 4, 2, epsilon=1.0)
    assert rep.uncovered == 0.0
    assert rep.masses == {(0, 0): pytest.approx(1.0)}


def test_uncovered_grows_at_most_linearly():
    m = qd2_model()
    n = 20_000
    vals = {}
    for p in (1, 2, 4, 8):
        rep = history_sets_probability(nd_dynamics(m), qd2_psi(), 30, p, method="montecarlo",
                                       budget=n, seed=11)
        vals[p] = rep
    base = vals[1].uncovered
    for p, rep in vals.items():
        assert rep.uncovered <= p * base + 4 * rep.uncovered_stderr * p


def test_histories_exact_budget():
    m = qd2_model()
    with pytest.raises(TooLarge):
        history_sets_probability(nd_dynamics(m), qd2_psi(), 30, 2, method="exact")


def test_histories_random_model_sums_to_one():
    rng = np.random.default_rng(2)
    m = random_nd_model(3, 2, 2, rng)
    rep = history_sets_probability(nd_dynamics(m), np.eye(3) / 3, 4, 3, epsilon=0.3)
    assert sum(rep.masses.values()) + rep.uncovered == pytest.approx(1.0, abs=1e-12)
