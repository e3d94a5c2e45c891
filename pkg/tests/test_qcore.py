import numpy as np
import pytest

from qfacts.errors import InvalidProjectors, NotHermitian, NotPositive, ZeroTrace
from qfacts.models import SIGMA_X, SIGMA_Z
from qfacts.qcore import (
    ProjectorFamily,
    diagonal_projectors,
    herm_eigendecompose,
    matrix_exponential_unitary,
    op_norm,
    pure_state,
    random_unitary,
    trace_norm,
    validate_density,
)


def test_maximally_mixed_is_unchanged():
    rho = validate_density(np.eye(2) / 2)
    np.testing.assert_allclose(rho.matrix, np.eye(2) / 2, atol=1e-15)


def test_negative_eigenvalue_rejected():
    with pytest.raises(NotPositive):
        validate_density(np.diag([1.0, -0.2, 0.2]))


def test_non_hermitian_and_zero_trace_rejected():
    with pytest.raises(NotHermitian):
        validate_density(np.array([[0.5, 1.0], [0.0, 0.5]]))
    with pytest.raises(ZeroTrace):
        validate_density(np.zeros((2, 2)))


def test_tiny_negative_eigenvalue_clamped():
    rho = validate_density(np.diag([1.0, -1e-12]))
    w = np.linalg.eigvalsh(rho.matrix)
    assert w.min() >= 0.0
    assert abs(np.trace(rho.matrix) - 1) < 1e-14


def test_psi_state_weight():
    psi = pure_state([np.sqrt(0.4), np.sqrt(0.6)])
    assert psi.expect(np.diag([1.0, 0.0])) == pytest.approx(0.4, abs=1e-14)


def test_eigendecompose_identity_merges():
    sd = herm_eigendecompose(np.eye(3))
    assert len(sd.eigenvalues) == 1
    np.testing.assert_allclose(sd.eigenprojectors[0], np.eye(3), atol=1e-12)


def test_eigendecompose_diagonal():
    sd = herm_eigendecompose(np.diag([0.3, 0.7]))
    np.testing.assert_allclose(sd.eigenvalues, [0.3, 0.7])
    np.testing.assert_allclose(sd.eigenprojectors[0], np.diag([1, 0]), atol=1e-14)
    np.testing.assert_allclose(sd.eigenprojectors[1], np.diag([0, 1]), atol=1e-14)


def test_eigendecompose_sigma_x():
    sd = herm_eigendecompose(SIGMA_X)
    np.testing.assert_allclose(sd.eigenvalues, [-1, 1], atol=1e-14)
    for sign, p in zip((-1, 1), sd.eigenprojectors):
        np.testing.assert_allclose(p, 0.5 * (np.eye(2) + sign * SIGMA_X), atol=1e-14)
        np.testing.assert_allclose(p @ p, p, atol=1e-14)
    np.testing.assert_allclose(sd.reconstruct(), SIGMA_X, atol=1e-14)


def test_eigendecompose_resolution_of_identity():
    rng = np.random.default_rng(5)
    a = rng.standard_normal((5, 5)) + 1j * rng.standard_normal((5, 5))
    sd = herm_eigendecompose(a + a.conj().T)
    np.testing.assert_allclose(sum(sd.eigenprojectors), np.eye(5), atol=1e-9)
    for i, p in enumerate(sd.eigenprojectors):
        for j, q in enumerate(sd.eigenprojectors):
            np.testing.assert_allclose(p @ q, p if i == j else 0 * p, atol=1e-9)


def test_norms():
    assert trace_norm(np.zeros((3, 3))) == 0.0
    assert trace_norm(pure_state([1, 1j]).matrix) == pytest.approx(1.0)
    assert trace_norm(np.diag([0.5, -0.5])) == pytest.approx(1.0)
    assert op_norm(np.eye(4)) == pytest.approx(1.0)
    assert op_norm(np.diag([0.2, 0.9])) == pytest.approx(0.9)
    assert op_norm(np.array([[0, 1], [0, 0]])) == pytest.approx(1.0)


def test_trace_norm_dominates_trace():
    rng = np.random.default_rng(1)
    for _ in range(20):
        a = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
        assert trace_norm(a) >= abs(np.trace(a)) - 1e-12


def test_unitary_exponential():
    np.testing.assert_allclose(matrix_exponential_unitary(SIGMA_Z, 0.0), np.eye(2), atol=1e-15)
    u = matrix_exponential_unitary(SIGMA_X * np.pi / 2, 1.0)
    np.testing.assert_allclose(u, -1j * SIGMA_X, atol=1e-14)
    # truncated power series as an independent check
    h = 0.7 * SIGMA_X + 0.2 * SIGMA_Z
    series, term = np.eye(2, dtype=complex), np.eye(2, dtype=complex)
    for n in range(1, 30):
        term = term @ (-1j * h) / n
        series = series + term
    np.testing.assert_allclose(matrix_exponential_unitary(h), series, atol=1e-13)


def test_unitary_properties():
    rng = np.random.default_rng(2)
    a = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    h = a + a.conj().T
    u = matrix_exponential_unitary(h, 0.37)
    np.testing.assert_allclose(u.conj().T @ u, np.eye(4), atol=1e-9)
    np.testing.assert_allclose(u @ matrix_exponential_unitary(h, -0.37), np.eye(4), atol=1e-9)
    v = random_unitary(4, rng)
    np.testing.assert_allclose(v.conj().T @ v, np.eye(4), atol=1e-12)


def test_projector_family_validation():
    fam = diagonal_projectors(3, [[0], [1, 2]], labels=("a", "b"))
    np.testing.assert_array_equal(fam.ranks(), [1, 2])
    np.testing.assert_allclose(fam.weights(np.eye(3) / 3), [1 / 3, 2 / 3])
    with pytest.raises(InvalidProjectors):
        ProjectorFamily((0, 1), (np.diag([1, 0]), np.diag([1, 1])))
    with pytest.raises(InvalidProjectors):
        ProjectorFamily((0,), (np.diag([1, 0]),))
    with pytest.raises(InvalidProjectors):
        ProjectorFamily((0, 0), (np.diag([1, 0]), np.diag([0, 1])))
