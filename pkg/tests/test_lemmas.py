import math

import numpy as np
import pytest

from ricciflat_end.lemmas import (
    SUITES,
    InfeasibleSample,
    LemmaReport,
    check_sqrteps,
    extremal_tuple,
    hermitian_entry_bound,
    operator_norm,
    pinch_constant,
    pinch_from_laplacian,
    run_suite,
    sample_hermitian,
    sample_pinch,
    sample_sqrteps,
    sqrteps_constant,
    sqrteps_proof_inequality,
)

# mpmath: max(x_max - 1, 1/x_min - 1) with x + (n-1) x^(-1/(n-1)) = 2n
SHARP = {
    2: 2.7320508075688773,
    3: 7.6567871095974072,
    4: 17.582860856129813,
    5: 37.659899897990133,
    6: 78.208254999538832,
    7: 159.95484990411088,
    8: 324.51412502064995,
}


# -- sqrt(eps) lemma ----------------------------------------------------------

@pytest.mark.parametrize("n", sorted(SHARP))
def test_sharp_constant(n):
    assert sqrteps_constant(n) == pytest.approx(SHARP[n], rel=1e-11)


def test_sharp_constant_n2_closed_form():
    # x + 1/x = 4 gives x = 2 + sqrt 3
    assert sqrteps_constant(2) == pytest.approx(1 + math.sqrt(3), rel=1e-11)


def test_ones_pass_trivially():
    for n in (2, 5):
        rep = check_sqrteps(np.ones(n), 0.3)
        assert rep.worst_ratio == 0.0 and rep.passed


def test_two_half_example():
    a = np.array([2.0, 0.5])
    # sum 2.5 = 2(1 + 0.25); deviation max(1, 1) against C sqrt(0.25)
    assert check_sqrteps(a, 0.25, C=3 * math.sqrt(2)).worst_ratio == pytest.approx(1 / (1.5 * math.sqrt(2)))
    assert check_sqrteps(a, 0.25).worst_ratio == pytest.approx(2 / SHARP[2], rel=1e-11)


@pytest.mark.parametrize("n", [2, 3, 5, 8])
@pytest.mark.parametrize("which", ["max", "min"])
def test_extremal_tuples_are_feasible(n, which):
    a = extremal_tuple(n, 0.4, which)
    assert abs(np.sum(np.log(a))) <= 1e-12
    assert a.sum() == pytest.approx(n * 1.4, rel=1e-13)


@pytest.mark.parametrize("n", [2, 3, 4, 6, 8])
def test_extremal_tuple_attains_the_constant(n):
    eps = 1.0 - 1e-9
    a = extremal_tuple(n, eps, "max" if n > 2 else "min")
    ratio = max(check_sqrteps(extremal_tuple(n, eps, w), eps).worst_ratio for w in ("max", "min"))
    assert 0.9999 <= ratio <= 1.0
    assert check_sqrteps(a, eps).passed


def test_three_root_n_fails_at_extremal_tuple():
    n, eps = 5, 0.5
    a = extremal_tuple(n, eps, "min")
    np.testing.assert_allclose(a, [0.0847, *[1.8538] * 4], rtol=1e-3)
    rep = check_sqrteps(a, eps, C=3 * math.sqrt(n))
    assert not rep.passed and rep.worst_ratio > 2.2
    assert check_sqrteps(a, eps).passed


def test_three_root_n_holds_for_n2():
    # for n = 2 the sharp constant 1 + sqrt 3 is below 3 sqrt 2
    assert SHARP[2] < 3 * math.sqrt(2)
    assert SHARP[3] > 3 * math.sqrt(3)


def test_check_sqrteps_rejects_infeasible():
    with pytest.raises(InfeasibleSample):
        check_sqrteps([3.0, 1 / 3.0], 0.1)
    with pytest.raises(InfeasibleSample):
        check_sqrteps([2.0, 2.0], 0.9)
    with pytest.raises(InfeasibleSample):
        check_sqrteps([1.0, 1.0], 1.0)
    with pytest.raises(InfeasibleSample):
        check_sqrteps([-1.0, -1.0], 0.5)


@pytest.mark.parametrize("n", [2, 3, 5])
def test_sampler_is_feasible_and_seeded(n):
    a, eps = sample_sqrteps(n, 10_000, np.random.default_rng(7))
    assert a.shape == (10_000, n)
    assert np.all(np.abs(np.log(a).sum(axis=1)) <= 1e-12)
    assert np.all(a.sum(axis=1) <= n * (1 + eps))
    assert np.all((eps > 0) & (eps < 1))
    a2, _ = sample_sqrteps(n, 10_000, np.random.default_rng(7))
    assert np.array_equal(a, a2)


# -- the inequality inside the proof ---------------------------------------

def test_proof_inequality_ones():
    assert sqrteps_proof_inequality(np.ones(4), 0.2) == pytest.approx(-0.8)


def test_proof_inequality_two_half_is_tight():
    # (sqrt2 - 1)^2 + (1/sqrt2 - 1)^2 + 2(sqrt2 + 1/sqrt2 - 2) - 0.5 = 0 exactly
    assert abs(sqrteps_proof_inequality(np.array([2.0, 0.5]), 0.25)) <= 1e-15


def test_proof_lhs_equals_sum_minus_n_on_unit_product():
    rng = np.random.default_rng(3)
    for n in (2, 4, 7):
        a, eps = sample_sqrteps(n, 200, rng)
        lhs = np.array([sqrteps_proof_inequality(x, e) for x, e in zip(a, eps)]) + n * eps
        np.testing.assert_allclose(lhs, a.sum(axis=1) - n, atol=1e-13)


# -- pinch from a Laplacian bound ------------------------------------------

def test_pinch_trivial():
    rep = pinch_from_laplacian(np.zeros(3), 0.0, 1.0, 1.0, 100.0)
    assert rep.worst_ratio == 0.0 and rep.passed


def test_pinch_example_n2():
    t, beta, C = 1e4, 1.0, 1.0
    # mu = (m, -m + r) with (1+m)(1-m+r) = 1, i.e. r = m^2/(1+m); r <= 1e-4
    m = 0.01
    r = m * m / (1 + m)
    rep = pinch_from_laplacian(np.array([m, -m + r]), 0.0, C, beta, t)
    assert rep.passed
    cp = pinch_constant(2, 0.0, C, beta, t)
    assert m <= cp * t ** (-beta / 2)
    assert 0.5 < cp < 5.0


def test_pinch_rejects_infeasible():
    with pytest.raises(InfeasibleSample):
        pinch_from_laplacian(np.array([0.1, 0.1]), 0.0, 1.0, 1.0, 100.0)
    with pytest.raises(InfeasibleSample):
        pinch_from_laplacian(np.array([-1.5, 2.0]), 0.0, 1.0, 1.0, 100.0)
    with pytest.raises(InfeasibleSample):
        # |f| = 1e-5 exceeds t^-N = 1e-6
        pinch_from_laplacian(np.full(2, math.expm1(5e-6)), 1e-5, 1.0, 1.0, 100.0, N=3.0)
    mu = np.array([0.5, 1 / 1.5 - 1])
    with pytest.raises(InfeasibleSample):
        pinch_from_laplacian(mu, 0.0, 1.0, 1.0, 100.0)


def test_pinch_sampler_feasible():
    mu, f, C, beta, t = sample_pinch(3, 2000, np.random.default_rng(1))
    assert np.all(1 + mu > 0)
    np.testing.assert_allclose(np.log1p(mu).sum(axis=1), f, atol=1e-12)
    assert np.all(mu.sum(axis=1) <= C * t ** (-beta))
    for i in range(0, 2000, 97):
        assert pinch_from_laplacian(mu[i], f[i], C[i], beta[i], t[i], N=3.0).passed


# -- Hermitian entries ------------------------------------------------------

def test_hermitian_identity():
    rep = hermitian_entry_bound(np.eye(4))
    assert rep.worst_ratio == pytest.approx(1 / 4)


def test_hermitian_swap():
    A = np.array([[0, 1], [1, 0]], dtype=float)
    assert operator_norm(A)[0] == pytest.approx(1.0, rel=1e-12)
    assert hermitian_entry_bound(A).worst_ratio == pytest.approx(0.5, rel=1e-12)


def test_hermitian_rejects_non_hermitian():
    with pytest.raises(ValueError):
        hermitian_entry_bound(np.array([[0, 1], [0, 0]]))


@pytest.mark.parametrize("n", [2, 5, 8])
def test_operator_norm_against_eigenvalues(n):
    rng = np.random.default_rng(n)
    A = sample_hermitian(n, 300, rng)
    est = operator_norm(A, rng)
    exact = np.abs(np.linalg.eigvalsh(A)).max(axis=1)
    assert np.all(est <= exact * (1 + 1e-12))
    # power iteration stalls on near-degenerate |eigenvalues|; still a lower bound
    np.testing.assert_allclose(est, exact, rtol=1e-6)


# -- reports and suites -----------------------------------------------------

def test_report_invariants():
    with pytest.raises(ValueError):
        LemmaReport("x", 0, 0.0)
    assert LemmaReport("x", 1, 1.0).passed
    assert not LemmaReport("x", 1, 1.0 + 1e-15).passed
    assert not LemmaReport("x", 1, math.nan).passed


@pytest.mark.parametrize("name", SUITES)
def test_suites_are_reproducible(name):
    a = run_suite(name, 3, 500, seed=11)
    b = run_suite(name, 3, 500, seed=11)
    c = run_suite(name, 3, 500, seed=12)
    assert a == b
    assert a.worst_ratio != c.worst_ratio
    assert a.passed and a.samples == 500 and a.seed == 11


def test_suite_unknown():
    with pytest.raises(ValueError):
        run_suite("cauchy_schwarz", 2, 10, 0)
