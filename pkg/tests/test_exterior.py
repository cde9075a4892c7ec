import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bvloc.errors import InvalidOperandError
from bvloc.exterior import (
    FORM,
    VECTOR,
    GradedCoefficients,
    InhomogeneousElement,
    combos,
    contract_left,
    contract_right,
    exp_nilpotent,
    pair,
    pfaffian,
    reversal_sign,
    symplectic_inverse,
    wedge,
)


def full_tensor(g):
    """Reduced coefficients -> dense antisymmetric tensor (oracle representation)."""
    T = np.zeros((g.n,) * g.k)
    for c, I in zip(g.coeffs, combos(g.n, g.k)):
        for perm in itertools.permutations(range(g.k)):
            idx = tuple(I[p] for p in perm)
            T[idx] = c * _sign(perm)
    return T


def _sign(perm):
    s = 1
    p = list(perm)
    for i in range(len(p)):
        for j in range(i + 1, len(p)):
            if p[i] > p[j]:
                s = -s
    return s


def oracle_wedge(a, b):
    """Wedge through full antisymmetrization: (a^b)_I = sum over shuffles."""
    A, B = full_tensor(a), full_tensor(b)
    k, l, n = a.k, b.k, a.n
    out = []
    for I in combos(n, k + l):
        total = 0.0
        for perm in itertools.permutations(range(k + l)):
            idx = [I[p] for p in perm]
            total += _sign(perm) * A[tuple(idx[:k])] * B[tuple(idx[k:])]
        out.append(total / (math.factorial(k) * math.factorial(l)))
    return np.array(out)


def dx(n, *idx):
    return GradedCoefficients.basis(n, idx, FORM)


def d(n, *idx):
    return GradedCoefficients.basis(n, idx, VECTOR)


def rand(rng, n, k, variance=FORM):
    return GradedCoefficients(n, k, variance, rng.normal(size=math.comb(n, k)))


def test_wedge_basics():
    assert np.all(wedge(dx(3, 0), dx(3, 0)).coeffs == 0)
    assert wedge(dx(3, 0), dx(3, 1))[0, 1] == 1
    assert wedge(dx(3, 1), dx(3, 0))[0, 1] == -1


def test_wedge_top_vector_matches_antisymmetrization():
    a, b = d(4, 0, 1), d(4, 2, 3)
    assert wedge(a, b).coeffs.tolist() == [1.0]
    assert np.allclose(oracle_wedge(a, b), [1.0])


@pytest.mark.parametrize("n,k,l", [(3, 1, 1), (4, 2, 1), (4, 2, 2), (5, 2, 3), (6, 3, 2)])
def test_wedge_against_oracle(rng, n, k, l):
    a, b = rand(rng, n, k), rand(rng, n, l)
    assert np.allclose(wedge(a, b).coeffs, oracle_wedge(a, b), atol=1e-12)


def test_wedge_errors():
    with pytest.raises(InvalidOperandError):
        wedge(dx(3, 0), dx(4, 0))
    with pytest.raises(InvalidOperandError):
        wedge(dx(3, 0), d(3, 0))
    with pytest.raises(InvalidOperandError):
        wedge(dx(2, 0, 1), dx(2, 0))


def test_pair():
    assert pair(dx(3, 0, 1), d(3, 0, 1)) == 1
    assert pair(dx(3, 0, 1), d(3, 0, 2)) == 0
    with pytest.raises(InvalidOperandError):
        pair(dx(3, 0, 1), d(3, 0))


def test_symplectic_inverse_pairs_to_minus_one():
    # pi = omega^{-1} as a matrix inverse: <omega, pi> = -1 (see the ledger)
    omega = np.array([0.7])
    pi = symplectic_inverse(omega, 2)
    M = np.array([[0, 0.7], [-0.7, 0]])
    assert np.isclose(pi[0], np.linalg.inv(M)[0, 1])
    assert np.isclose(pair(GradedCoefficients(2, 2, FORM, omega), GradedCoefficients(2, 2, VECTOR, pi)), -1.0)


def test_contractions():
    assert np.allclose(contract_left(d(2, 0), dx(2, 0, 1)).coeffs, dx(2, 1).coeffs)
    r = contract_left(d(3, 0, 1), dx(3, 0, 1, 2))
    # the adjunction fixes the sign: <P |_ a, Q> = (-1)^{k(k-1)/2} <a, P ^ Q>
    assert r.coeffs.tolist() == [0.0, 0.0, -1.0]
    assert pair(dx(3, 0, 1, 2), wedge(d(3, 0, 1), d(3, 2))) == 1
    with pytest.raises(InvalidOperandError):
        contract_left(d(3, 0, 1), dx(3, 0))


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_adjunction_exhaustive(n):
    for ka in range(n + 1):
        for kp in range(ka + 1):
            for I in combos(n, ka):
                for J in combos(n, kp):
                    a, P = dx(n, *I), d(n, *J)
                    right, left = contract_right(a, P), contract_left(P, a)
                    for K in combos(n, ka - kp):
                        Q = d(n, *K)
                        rhs = pair(a, wedge(P, Q))
                        assert pair(right, Q) == rhs
                        assert pair(left, Q) == reversal_sign(kp) * rhs


def test_pfaffian():
    assert pfaffian([[0, 3.0], [-3.0, 0]]) == 3.0
    A = np.zeros((4, 4))
    A[0, 1], A[2, 3] = 2.0, 5.0
    assert pfaffian(A - A.T) == 10.0
    with pytest.raises(InvalidOperandError):
        pfaffian(np.zeros((3, 3)))
    with pytest.raises(InvalidOperandError):
        pfaffian([[0, 1.0], [1.0, 0]])


@settings(max_examples=60, deadline=None)
@given(st.sampled_from([2, 4, 6]), st.integers(0, 2**31 - 1))
def test_pfaffian_squared_is_det(size, seed):
    B = np.random.default_rng(seed).normal(size=(size, size))
    A = B - B.T
    det = np.linalg.det(A)
    assert abs(pfaffian(A) ** 2 - det) <= 1e-10 * max(1.0, abs(det))


def test_exp_nilpotent(rng):
    zero = InhomogeneousElement(2, FORM, {})
    e = exp_nilpotent(zero, 0.5)
    assert np.isclose(e.part(0).coeffs[0], math.exp(0.5)) and set(e.parts) == {0}
    B = GradedCoefficients(2, 2, FORM, np.array([1.5]))
    e = exp_nilpotent(InhomogeneousElement(2, FORM, {2: B}))
    assert e.part(0).coeffs[0] == 1 and e.part(2).coeffs[0] == 1.5
    B4 = rand(rng, 4, 2)
    e = exp_nilpotent(InhomogeneousElement(4, FORM, {2: B4}))
    M = np.zeros((4, 4))
    for c, (i, j) in zip(B4.coeffs, combos(4, 2)):
        M[i, j], M[j, i] = c, -c
    # B ^ B / 2 = pf(B) on the top form, six-term expansion
    assert np.isclose(e.part(4).coeffs[0], M[0, 1] * M[2, 3] - M[0, 2] * M[1, 3] + M[0, 3] * M[1, 2])
    assert np.allclose(e.part(2).coeffs, B4.coeffs)
    with pytest.raises(InvalidOperandError):
        exp_nilpotent(InhomogeneousElement(2, FORM, {0: GradedCoefficients(2, 0, FORM, np.ones(1))}))


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**31 - 1))
def test_exp_inverse_for_even_elements(n, seed):
    rng = np.random.default_rng(seed)
    parts = {k: rand(rng, n, k) for k in range(2, n + 1, 2)}
    x = InhomogeneousElement(n, FORM, parts)
    prod = wedge(exp_nilpotent(x), exp_nilpotent(x * -1.0))
    assert abs(prod.part(0).coeffs[0] - 1) < 1e-9
    assert all(np.max(np.abs(prod.part(k).coeffs)) < 1e-9 for k in prod.parts if k)


@settings(max_examples=80, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_graded_commutativity(n, seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(0, n + 1))
    l = int(rng.integers(0, n - k + 1))
    a, b = rand(rng, n, k), rand(rng, n, l)
    assert np.allclose(wedge(a, b).coeffs, (-1) ** (k * l) * wedge(b, a).coeffs, atol=1e-12)


@settings(max_examples=80, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**31 - 1))
def test_contraction_composition(n, seed):
    rng = np.random.default_rng(seed)
    kp = int(rng.integers(0, n // 2 + 1))
    kq = int(rng.integers(0, n - kp + 1))
    ka = int(rng.integers(kp + kq, n + 1))
    P, Q, a = rand(rng, n, kp, VECTOR), rand(rng, n, kq, VECTOR), rand(rng, n, ka)
    lhs = contract_left(wedge(P, Q), a).coeffs
    rhs = contract_left(P, contract_left(Q, a)).coeffs
    assert np.allclose(lhs, rhs, atol=1e-11)


def test_coefficient_validation():
    with pytest.raises(InvalidOperandError):
        GradedCoefficients(3, 2, FORM, np.zeros(2))
    with pytest.raises(InvalidOperandError):
        GradedCoefficients(7, 1, FORM, np.zeros(7))
