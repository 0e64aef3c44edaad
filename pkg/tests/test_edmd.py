import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from koopmatch.dynsys import SamplePairs, get_system
from koopmatch.edmd import (
    ClosureError,
    KoopmanMatrix,
    SpectrumError,
    cantor_pair,
    cantor_unpair,
    complex_from_json,
    complex_to_json,
    discrete_to_generator,
    edmd_fit,
    left_eigens,
    matrix_log,
    monomial_dictionary,
    multinomial_dictionary,
    pair_spectra,
    project_generator,
)

LIN = multinomial_dictionary(2, 2)


def pairs_from_flow(sys, X, dt, seed=0):
    return SamplePairs(X, sys.analytic_flow(X, dt), dt, seed)


# dictionaries --------------------------------------------------------------


def test_cantor_values():
    assert (cantor_pair(1, 0), cantor_pair(0, 1), cantor_pair(2, 0)) == (1, 2, 3)


@given(m=st.integers(0, 200), n=st.integers(0, 200))
def test_cantor_roundtrip(m, n):
    assert cantor_unpair(cantor_pair(m, n)) == (m, n)


def test_multinomial_first_nine():
    d = multinomial_dictionary(2, 9)
    assert d.exponents == ((1, 0), (0, 1), (2, 0), (1, 1), (0, 2), (3, 0), (2, 1), (1, 2), (0, 3))
    z = np.array([2.0, 3.0])
    np.testing.assert_array_equal(d(z), [2, 3, 4, 6, 9, 8, 12, 18, 27])


def test_multinomial_ones():
    np.testing.assert_array_equal(multinomial_dictionary(2, 14)([1.0, 1.0]), np.ones(14))


def test_multinomial_errors():
    with pytest.raises(ValueError):
        multinomial_dictionary(3, 5)
    with pytest.raises(ValueError):
        multinomial_dictionary(2, 1)


def test_dictionary_invariants():
    d = multinomial_dictionary(2, 14)
    assert d.gram_min_singular() > 1e-10
    Z = np.random.default_rng(0).uniform(-1, 1, (10, 2))
    np.testing.assert_array_equal(d(Z) @ d.selection_matrix().T, Z)
    assert d.fixed_prefix == 2


def test_custom_dictionary_needs_coordinates():
    with pytest.raises(ValueError):
        monomial_dictionary([(0, 0), (2, 0), (0, 1)])
    d = monomial_dictionary([(0, 0), (1, 0), (0, 1), (1, 1)])
    assert d.fixed_prefix == 3 and d.names[0] == "1"


# generator projection ------------------------------------------------------


def test_example5_generators():
    k1 = project_generator(get_system("lin2d"), LIN)
    k2 = project_generator(get_system("lin2d", {"a11": 1, "a12": 0, "a21": 0, "a22": -1}), LIN)
    np.testing.assert_array_equal(k1.k, [[0, 1], [1, 0]])
    np.testing.assert_array_equal(k2.k, np.diag([1, -1]))
    assert k1.mode == "generator" and k1.provenance == "analytic"


def test_diagonal_generator_eigenvalues():
    a1, a2 = 0.7, -1.3
    d = multinomial_dictionary(2, 9)
    k = project_generator(get_system("lindiag", {"a1": a1, "a2": a2}), d)
    want = [m * a1 + n * a2 for m, n in (cantor_unpair(j) for j in range(1, 10))]
    np.testing.assert_allclose(k.k, np.diag(want), atol=1e-15)


def test_closure_violation():
    with pytest.raises(ClosureError):
        project_generator(get_system("quad2d"), multinomial_dictionary(2, 14))
    # the truncated projection drops the overflow terms instead
    project_generator(get_system("quad2d"), multinomial_dictionary(2, 14), truncate=True)


def test_generator_needs_polynomial():
    with pytest.raises(ValueError):
        project_generator(get_system("tvdp"), LIN)


def test_generator_matches_field_action():
    # oracle: (F . grad) psi by central differences equals K psi, row by row
    sys = get_system("lin2d", {"a11": 0.3, "a12": -1.0, "a21": 2.0, "a22": 0.5})
    d = multinomial_dictionary(2, 9)
    k = project_generator(sys, d).k
    Z = np.random.default_rng(1).uniform(-1, 1, (15, 2))
    h = 1e-6
    F = sys.field(Z)
    dpsi = (d(Z + h * F) - d(Z - h * F)) / (2 * h)
    np.testing.assert_allclose(dpsi, d(Z) @ k.T, atol=1e-7)


# least squares --------------------------------------------------------------


def test_edmd_fit_linear_flow():
    sys = get_system("lindiag", {"a1": 1.0, "a2": -1.0})
    X = np.random.default_rng(0).uniform(-1, 1, (200, 2))
    k = edmd_fit(pairs_from_flow(sys, X, 0.1), LIN, ridge=0.0)
    np.testing.assert_allclose(k.k, np.diag([math.exp(0.1), math.exp(-0.1)]), atol=1e-8)
    assert k.mode == "discrete" and k.dt == 0.1


def test_edmd_fit_zero_dt_identity():
    X = np.random.default_rng(0).uniform(-1, 1, (50, 2))
    k = edmd_fit(SamplePairs(X, X.copy(), 0.0, 0), multinomial_dictionary(2, 5), ridge=0.0)
    np.testing.assert_allclose(k.k, np.eye(5), atol=1e-12)


def test_edmd_fit_errors():
    empty = SamplePairs(np.zeros((0, 2)), np.zeros((0, 2)), 0.1, 0)
    with pytest.raises(ValueError):
        edmd_fit(empty, LIN)
    X = np.random.default_rng(0).uniform(-1, 1, (5, 2))
    with pytest.raises(ValueError):
        edmd_fit(SamplePairs(X, X, 0.1, 0), LIN, ridge=-1.0)
    X[:, 1] = X[:, 0]
    with pytest.raises(np.linalg.LinAlgError):
        edmd_fit(SamplePairs(X, X, 0.1, 0), LIN, ridge=0.0)


def test_edmd_fit_ridge_formula():
    # oracle: explicit normal equations (G + rI)^-1 A, then the Psi' = K Psi convention
    rng = np.random.default_rng(3)
    X, Y = rng.normal(size=(40, 2)), rng.normal(size=(40, 2))
    d = multinomial_dictionary(2, 5)
    PX, PY = d(X), d(Y)
    G, A = PX.T @ PX / 40, PX.T @ PY / 40
    want = np.linalg.solve(G + 0.1 * np.eye(5), A).T
    np.testing.assert_allclose(edmd_fit(SamplePairs(X, Y, 0.1, 0), d, ridge=0.1).k, want, atol=1e-12)


@pytest.mark.parametrize("params", [{}, {"a11": 1, "a12": 0, "a21": 0, "a22": -1}])
def test_analytic_vs_data(params):
    sys = get_system("lin2d", params)
    dt = 0.01
    X = np.random.default_rng(2).uniform(-1, 1, (500, 2))
    kd = edmd_fit(pairs_from_flow(sys, X, dt), LIN)
    kg = project_generator(sys, LIN)
    assert np.linalg.norm(matrix_log(kd.k) / dt - kg.k) <= 1e-4


def test_discrete_to_generator_principal_branch():
    lam = np.array([0.3 + 2.0j, -1.0])
    np.testing.assert_allclose(discrete_to_generator(np.exp(lam * 0.5), 0.5), lam)


def test_koopman_matrix_validation():
    with pytest.raises(ValueError):
        KoopmanMatrix(np.array([[np.nan]]), "generator", "analytic")
    with pytest.raises(ValueError):
        KoopmanMatrix(np.eye(2), "discrete", "least_squares", None)


# left eigenvectors ----------------------------------------------------------


def proportional(u, v):
    u, v = np.asarray(u, complex), np.asarray(v, complex)
    return abs(abs(np.vdot(u, v)) - np.linalg.norm(u) * np.linalg.norm(v)) <= 1e-12


def test_left_eigens_swap_matrix():
    s = left_eigens(np.array([[0.0, 1.0], [1.0, 0.0]]))
    byval = {round(l.real): v for l, v in zip(s.eigenvalues, s.left_vectors)}
    assert proportional(byval[-1], [-1, 1]) and proportional(byval[1], [1, 1])


def test_left_eigens_diagonal():
    s = left_eigens(np.diag([1.0, -1.0]))
    byval = {round(l.real): v for l, v in zip(s.eigenvalues, s.left_vectors)}
    assert proportional(byval[-1], [0, 1]) and proportional(byval[1], [1, 0])


def test_left_eigens_scalar():
    s = left_eigens(np.array([[3.0]]))
    assert s.eigenvalues[0] == 3 and s.left_vectors[0, 0] == 1


def test_left_eigens_canonical_form():
    s = left_eigens(np.random.default_rng(0).normal(size=(6, 6)))
    for v in s.left_vectors:
        assert abs(np.linalg.norm(v) - 1) <= 1e-12
        first = v[np.flatnonzero(np.abs(v) > 1e-12)[0]]
        assert abs(first.imag) <= 1e-12 and first.real > 0


def test_left_eigens_max_normalisation():
    s = left_eigens(np.array([[0.0, 1.0], [1.0, 0.0]]), normalize="max")
    assert np.allclose(np.max(np.abs(s.left_vectors), axis=1), 1.0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 10))
def test_left_eigen_residual_bound(seed, n):
    K = np.random.default_rng(seed).normal(size=(n, n))
    s = left_eigens(K)
    assert s.residual(K) <= 1e-8 * np.linalg.norm(K)


def test_left_eigens_repeated_eigenvalue():
    s = left_eigens(np.eye(3))
    assert not s.distinct
    np.testing.assert_allclose(np.abs(s.left_vectors), np.eye(3))
    with pytest.raises(SpectrumError):
        left_eigens(np.array([[1.0, 1.0], [0.0, 1.0]]))  # Jordan block
    with pytest.raises(SpectrumError):
        left_eigens(np.array([[np.inf]]))


@pytest.mark.parametrize("n_modes", [2, 14])
def test_generator_similarity(n_modes):
    if n_modes == 2:
        k1 = project_generator(get_system("lin2d"), LIN).k
        k2 = project_generator(get_system("lin2d", {"a11": 1, "a12": 0, "a21": 0, "a22": -1}), LIN).k
    else:
        d = multinomial_dictionary(2, 14)
        k1 = project_generator(get_system("quad2d"), d, truncate=True).k
        k2 = project_generator(get_system("lindiag"), d).k
    e1 = np.sort_complex(np.linalg.eigvals(k1))
    e2 = np.sort_complex(np.linalg.eigvals(k2))
    assert np.max(np.abs(e1 - e2)) <= 1e-10


def test_spectral_json_roundtrip():
    s = left_eigens(np.array([[0.0, -2.0], [2.0, 0.0]]))
    back = complex_from_json(complex_to_json(s.left_vectors))
    np.testing.assert_array_equal(back, s.left_vectors)
    assert s.to_json()["eigenvalues"] == complex_to_json(s.eigenvalues)


# pairing -------------------------------------------------------------------


def test_pair_identical():
    s = left_eigens(np.diag([1.0, 2.0, 3.0]))
    np.testing.assert_array_equal(pair_spectra(s, s, 1e-8), [0, 1, 2])


def test_pair_swap_exhaustive_oracle():
    s1 = left_eigens(np.diag([1.0, -1.0]))
    s2 = left_eigens(np.diag([-1.0, 1.0]))
    perm = pair_spectra(s1, s2, 1e-8)
    # oracle: the permutation with the smaller total cost among both candidates
    costs = {p: sum(abs(s1.eigenvalues[j] - s2.eigenvalues[p[j]]) for j in range(2)) for p in [(0, 1), (1, 0)]}
    assert tuple(perm) == min(costs, key=costs.get)
    np.testing.assert_array_equal(s2.eigenvalues[perm], s1.eigenvalues)


def test_pair_far_spectra():
    with pytest.raises(SpectrumError):
        pair_spectra(left_eigens(np.diag([1.0, 2.0])), left_eigens(np.diag([5.0, 6.0])), 0.1)


def test_pair_size_mismatch():
    with pytest.raises(SpectrumError):
        pair_spectra(left_eigens(np.eye(1)), left_eigens(np.diag([1.0, 2.0])), 0.1)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_pair_random_permutation(seed):
    rng = np.random.default_rng(seed)
    lam = rng.normal(size=6) + 1j * rng.normal(size=6)
    p = rng.permutation(6)
    s1 = left_eigens(np.diag(lam))
    s2 = left_eigens(np.diag(lam[p]))
    perm = pair_spectra(s1, s2, 1e-8)
    np.testing.assert_allclose(s2.eigenvalues[perm], s1.eigenvalues, atol=1e-12)
