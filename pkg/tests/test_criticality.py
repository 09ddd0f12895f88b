import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pks.criticality import (Regime, blowup_time_bound, classify, lambda_subset, lambda_weighted,
                             second_moment_slope, two_species_curve, two_species_map)
from pks.errors import ConfigurationError

PI = np.pi
ONES = np.ones((2, 2))


def test_lambda_subset_examples():
    assert lambda_subset([[1.0]], [8 * PI], [0]) == 0.0
    assert abs(lambda_subset(ONES, [4 * PI, 4 * PI], [0]) - 16 * PI ** 2) < 1e-12
    assert abs(lambda_subset(ONES, [4 * PI, 4 * PI], [0, 1])) < 1e-12
    with pytest.raises(ConfigurationError):
        lambda_subset(ONES, [1, 1], [])


def test_lambda_weighted_examples():
    assert abs(lambda_weighted([[1.0]], [8 * PI], [0.5], [0]) + 32 * PI ** 2) < 1e-10
    A = np.array([[2.0, 0.5], [0.5, 1.0]])
    beta = [3.0, 5.0]
    for J in ([0], [1], [0, 1]):
        assert abs(lambda_weighted(A, beta, [1, 1], J) - lambda_subset(A, beta, J)) < 1e-12
    assert abs(lambda_weighted(A, beta, [0.3, 2], [1]) - (8 * PI * 2 * 5 - 1.0 * 25)) < 1e-12


def test_classify_examples():
    r = classify(ONES, [4 * PI, 4 * PI])
    assert r.regime is Regime.CRITICAL and r.witness == (0, 1)
    assert len(r.lambda_values) == 3
    r = classify([[2, 0], [0, 2]], [2 * PI, 2 * PI])
    assert r.regime is Regime.SUB_CRITICAL
    assert abs(r.lambda_values[(0,)] - 8 * PI ** 2) < 1e-10
    assert abs(r.lambda_values[(0, 1)] - 16 * PI ** 2) < 1e-10
    r = classify([[1.0]], [12 * PI])
    assert r.regime is Regime.SUPER_CRITICAL
    assert abs(r.lambda_total + 48 * PI ** 2) < 1e-9
    assert classify([[1.0]], [8 * PI]).regime is Regime.CRITICAL


def test_inadmissible_and_guards():
    # Lambda_I = 0 while a proper subset has Lambda = 0 as well
    A = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert classify(A, [8 * PI, 8 * PI]).regime is Regime.INADMISSIBLE
    with pytest.raises(ConfigurationError):
        classify(np.eye(21), np.ones(21))
    with pytest.raises(ConfigurationError):
        classify([[1, 2], [3, 1]], [1, 1])
    with pytest.raises(ConfigurationError):
        classify([[0.0]], [1.0])


def test_lambda_table_has_all_subsets():
    rng = np.random.default_rng(1)
    B = rng.random((4, 4))
    r = classify(B + B.T + np.eye(4), rng.random(4) * 5)
    assert len(r.lambda_values) == 2 ** 4 - 1


def test_two_species_map():
    A, beta = two_species_map(1.0, 1.0, [4 * PI, 4 * PI])
    assert np.array_equal(A, ONES) and np.allclose(beta, [4 * PI] * 2)
    assert classify(A, beta).regime is Regime.CRITICAL
    A, beta = two_species_map(2.0, 1.5, [1.0, 2.0])
    assert np.allclose(A, [[4, 3], [3, 2.25]]) and np.allclose(beta, [0.5, 2 / 1.5])
    with pytest.raises(ConfigurationError):
        two_species_map(0.0, 1.0, [1, 1])
    A, beta = two_species_map(2.0, 1.0, [16 * PI + 1e-3, 1e-9])
    assert lambda_subset(A, beta, [0]) < 0
    assert classify(A, beta).regime is Regime.SUPER_CRITICAL


def test_two_species_sign_agreement_random():
    """Full-set Lambda against the closed-form two-population curve, 1000 samples."""
    rng = np.random.default_rng(20240501)
    agree = 0
    for _ in range(1000):
        chi1 = rng.uniform(0.2, 5.0)
        chi2 = chi1 * np.exp(rng.uniform(np.log(0.5), np.log(2.0)))
        bt = rng.uniform(0.1, 16 * PI, size=2)
        A, beta = two_species_map(chi1, chi2, bt)
        lam = lambda_subset(A, beta, [0, 1])
        curve = two_species_curve(chi1, chi2, bt)
        assert abs(lam - curve) <= 1e-9 * (8 * PI * beta.sum()) ** 2 / 64
        agree += np.sign(lam) == np.sign(curve)
    assert agree == 1000


def test_blowup_bound():
    assert abs(blowup_time_bound([[1.0]], [12 * PI], 1.0) - 1 / (24 * PI)) < 1e-15
    assert blowup_time_bound(ONES, [4 * PI, 4 * PI], 1.0) is None
    assert blowup_time_bound([[1.0]], [12 * PI], 2.0) == 2 * blowup_time_bound([[1.0]], [12 * PI], 1.0)


def test_second_moment_slope():
    assert abs(second_moment_slope([[0.0]], [1.0]) - 4.0) < 1e-15
    assert abs(second_moment_slope([[1.0]], [4 * PI]) - 8 * PI) < 1e-12
    assert abs(second_moment_slope([[1.0]], [8 * PI])) < 1e-12


sym = st.integers(2, 4).flatmap(lambda n: st.tuples(
    st.lists(st.floats(0.0, 3.0), min_size=n * n, max_size=n * n),
    st.lists(st.floats(0.1, 30.0), min_size=n, max_size=n)))


@given(sym, st.randoms(use_true_random=False))
def test_classify_permutation_invariant(data, rnd):
    flat, beta = data
    n = len(beta)
    B = np.array(flat).reshape(n, n)
    A = B + B.T + 0.5 * np.eye(n)
    perm = list(range(n))
    rnd.shuffle(perm)
    r1 = classify(A, beta)
    r2 = classify(A[np.ix_(perm, perm)], np.array(beta)[perm])
    assert r1.regime is r2.regime


@given(sym, st.floats(0.1, 3.0), st.floats(0.1, 30.0))
def test_decoupled_species_adds(data, a, b):
    flat, beta = data
    n = len(beta)
    B = np.array(flat).reshape(n, n)
    A = B + B.T + 0.5 * np.eye(n)
    big = np.zeros((n + 1, n + 1))
    big[:n, :n] = A
    big[n, n] = a
    beta2 = list(beta) + [b]
    for k in range(1, n + 1):
        for J in itertools.combinations(range(n), k):
            lhs = lambda_subset(big, beta2, list(J) + [n])
            rhs = lambda_subset(A, beta, J) + b * (8 * PI - a * b)
            assert abs(lhs - rhs) <= 1e-9 * (1 + abs(rhs))


@given(st.floats(0.05, 10.0), st.floats(-1.0, 1.0))
def test_single_species_threshold(a, rel):
    beta = 8 * PI / a * (1 + rel * 1e-3)
    r = classify([[a]], [beta])
    if abs(a * beta - 8 * PI) <= 1e-10 * 8 * PI:
        assert r.regime is Regime.CRITICAL
    elif a * beta < 8 * PI:
        assert r.regime is Regime.SUB_CRITICAL
    else:
        assert r.regime is Regime.SUPER_CRITICAL
