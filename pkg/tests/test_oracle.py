import numpy as np
import pytest

from timeop.operators import build_bank
from timeop.oracle import (check_dirichlet, check_mixture_decomposition, check_polynomial_equivalence,
                           check_spectral_response, eig, poly_response, random_bipartite_view, run_suite)


def bank_for(seed, n, scales=(0.5, 4.0)):
    return build_bank(random_bipartite_view(np.random.default_rng(seed), n), scales)


def test_eig_identity_and_swap():
    s = eig(np.eye(5))
    np.testing.assert_allclose(s.eigenvalues, 1.0)
    np.testing.assert_allclose(s.reconstruct(), np.eye(5), atol=1e-12)
    np.testing.assert_allclose(eig(np.array([[0.0, 1.0], [1.0, 0.0]])).eigenvalues, [-1.0, 1.0])


def test_eig_errors():
    with pytest.raises(ValueError, match="symmetric"):
        eig(np.array([[0.0, 1.0], [0.5, 0.0]]))
    with pytest.raises(ValueError):
        eig(np.eye(65))


def test_bipartite_spectrum_symmetric_and_matches_lapack():
    bank = bank_for(3, 40)
    s = eig(bank.dense(0))
    np.testing.assert_allclose(s.eigenvalues, -s.eigenvalues[::-1], atol=1e-10)
    np.testing.assert_allclose(s.eigenvalues, np.linalg.eigvalsh(bank.dense(0)), atol=1e-10)
    assert np.all(np.abs(s.eigenvalues) <= 1 + 1e-8)


def test_polynomial_equivalence():
    bank = bank_for(1, 32)
    x = np.random.default_rng(0).normal(size=(32, 3))
    assert check_polynomial_equivalence(bank, x, 0) <= 1e-12
    assert check_polynomial_equivalence(bank, x, 1) <= 1e-10
    assert check_polynomial_equivalence(bank, x, 3) <= 1e-8


def test_gains():
    np.testing.assert_allclose(poly_response([1.0, 0.0, -1.0], 2), [3.0, 1.0, 1.0])
    bank = bank_for(2, 20)
    r = check_spectral_response(eig(bank.dense(1)), np.random.default_rng(1).normal(size=(20, 2)), 3)
    assert r.deviation <= 1e-8 and r.low_pass


def test_dirichlet_cases():
    for w in (0.3, 2.0):
        A = w * np.array([[0.0, 1.0], [1.0, 0.0]])
        S = np.array([[0.0, 1.0], [1.0, 0.0]])
        tr, edge = check_dirichlet(S, A, A.sum(axis=1), np.array([[1.0], [-1.0]]))
        assert tr == pytest.approx(4.0) and edge == pytest.approx(4.0)
    bank = bank_for(5, 24)
    deg = bank.degrees[0]
    c = np.sqrt(deg)[:, None] * np.array([[1.5, -2.0]])
    tr, edge = check_dirichlet(bank.dense(0), bank.raw_dense(0), deg, c)
    assert abs(tr) <= 1e-10 and abs(edge) <= 1e-10


def test_mixture_decomposition():
    bank = bank_for(4, 30)
    x = np.random.default_rng(2).normal(size=(30, 2))
    assert check_mixture_decomposition(bank, np.array([1.0, 0.0]), x, 2) <= 1e-10
    assert check_mixture_decomposition(bank, np.array([0.5, 0.5]), x, 2) <= 1e-10
    with pytest.raises(ValueError, match="simplex"):
        check_mixture_decomposition(bank, np.array([0.7, 0.7]), x, 2)


def test_suite_passes():
    rows = run_suite(n_graphs=10, seed=3)
    assert all(r.passed for r in rows)
