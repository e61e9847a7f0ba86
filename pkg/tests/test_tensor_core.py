import numpy as np
import pytest

from sosenergy.config import Settings
from sosenergy.tensor_core import (
    KronCoeff,
    build_basis,
    eval_basis,
    eval_basis_batch,
    kron_power,
    kron_power_batch,
    kron_power_jacobian_batch,
    kron_to_monomial,
    kway_lyapunov_apply,
    kway_lyapunov_matrix,
    monomial_count,
    monomial_to_kron,
    symmetrize,
)


# ============================================================================
# Kronecker powers
# ============================================================================

def test_kron_power_examples():
    assert kron_power([1, 2], 2).tolist() == [1, 2, 2, 4]
    assert kron_power([3], 3).tolist() == [27]
    e1 = np.zeros(8)
    e1[0] = 1
    assert np.array_equal(kron_power([1, 0], 3), e1)


def test_kron_power_rejects_zero_degree():
    with pytest.raises(ValueError):
        kron_power([1, 2], 0)


def test_kron_power_batch_matches_rows(rng):
    X = rng.normal(size=(5, 3))
    batch = kron_power_batch(X, 3)
    for row, x in zip(batch, X):
        assert np.allclose(row, kron_power(x, 3), rtol=1e-14)
    assert np.array_equal(kron_power_batch(X, 0), np.ones((5, 1)))


def test_kron_power_jacobian_matches_finite_differences(rng):
    x = rng.normal(size=3)
    D = kron_power_jacobian_batch(x[None, :], 3)[0]
    h = 1e-6
    for j in range(3):
        step = np.zeros(3)
        step[j] = h
        fd = (kron_power(x + step, 3) - kron_power(x - step, 3)) / (2 * h)
        assert np.allclose(D[:, j], fd, atol=1e-7)


# ============================================================================
# k-way Lyapunov operator
# ============================================================================

def test_kway_lyapunov_scalar():
    assert kway_lyapunov_apply([[2.0]], 2, np.array([1.0])).tolist() == [4.0]


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_kway_lyapunov_identity_scales_by_k(k, rng):
    v = rng.normal(size=2**k)
    assert np.allclose(kway_lyapunov_apply(np.eye(2), k, v), k * v)


def test_kway_lyapunov_diagonal_by_hand():
    a, b = 3.0, -5.0
    e1 = np.array([1.0, 0.0, 0.0, 0.0])
    assert np.allclose(kway_lyapunov_apply(np.diag([a, b]), 2, e1), 2 * a * e1)


def test_kway_lyapunov_apply_matches_assembled_rectangular(rng):
    M = rng.normal(size=(2, 3))
    v = rng.normal(size=27)
    dense = kway_lyapunov_matrix(M, 3, Settings())
    assert dense.shape == (2 * 9, 27)
    assert np.allclose(kway_lyapunov_apply(M, 3, v), dense @ v, rtol=1e-13, atol=1e-13)


def test_kway_lyapunov_matrix_respects_dense_cap():
    tiny = Settings().merged({"kron.dense_cap": 8})
    with pytest.raises(ValueError):
        kway_lyapunov_matrix(np.eye(3), 2, tiny)


def test_kway_lyapunov_length_mismatch():
    with pytest.raises(ValueError):
        kway_lyapunov_apply(np.eye(2), 2, np.ones(3))


# ============================================================================
# Monomial bases
# ============================================================================

@pytest.mark.parametrize(("n", "d", "expected"), [(1, 2, 2), (2, 2, 5), (12, 2, 90), (6, 2, 27)])
def test_monomial_count(n, d, expected):
    assert monomial_count(n, d) == expected


@pytest.mark.parametrize("n", range(1, 9))
def test_monomial_count_matches_enumeration(n):
    degrees = np.indices((6,) * n, dtype=np.int8).reshape(n, -1).sum(axis=0)
    for d in range(1, 6):
        expected = int(np.count_nonzero((degrees >= 1) & (degrees <= d)))
        assert monomial_count(n, d) == expected
        assert build_basis(n, d).size == expected


def test_build_basis_blocks():
    basis = build_basis(2, 2)
    assert basis.block_sizes == (2, 3)
    assert basis.size == 5
    # graded lex: x1, x2, x1^2, x1 x2, x2^2
    assert basis.exponents.tolist() == [[1, 0], [0, 1], [2, 0], [1, 1], [0, 2]]
    assert build_basis(1, 4).exponents.ravel().tolist() == [1, 2, 3, 4]
    assert build_basis(6, 2).size == 27


def test_eval_basis_examples():
    z, Jz = eval_basis(build_basis(1, 2), np.array([2.0]))
    assert z.tolist() == [2.0, 4.0]
    assert Jz.ravel().tolist() == [1.0, 4.0]

    z, _ = eval_basis(build_basis(2, 2), np.array([1.0, 1.0]))
    assert z.tolist() == [1.0] * 5

    z, Jz = eval_basis(build_basis(3, 3), np.zeros(3))
    assert not np.any(z)


def test_eval_basis_jacobian_matches_finite_differences(rng):
    basis = build_basis(3, 3)
    x = rng.normal(size=3)
    _, Jz = eval_basis(basis, x)
    h = 1e-6
    for j in range(3):
        step = np.zeros(3)
        step[j] = h
        fd = (eval_basis(basis, x + step)[0] - eval_basis(basis, x - step)[0]) / (2 * h)
        assert np.allclose(Jz[:, j], fd, atol=1e-7)


def test_eval_basis_batch_shapes(rng):
    basis = build_basis(2, 3)
    Z, JZ = eval_basis_batch(basis, rng.normal(size=(7, 2)))
    assert Z.shape == (7, basis.size)
    assert JZ.shape == (7, basis.size, 2)


# ============================================================================
# Symmetrization and conversions
# ============================================================================

def test_symmetrize_examples(rng):
    assert symmetrize(KronCoeff(2, 2, [0, 2, 0, 0])).c.tolist() == [0, 1, 1, 0]

    c = symmetrize(KronCoeff(2, 3, rng.normal(size=8)))
    assert np.allclose(symmetrize(c).c, c.c)


def test_symmetrize_preserves_values(rng):
    c = KronCoeff(3, 3, rng.normal(size=27))
    s = symmetrize(c)
    for x in rng.normal(size=(5, 3)):
        assert s.evaluate(x) == pytest.approx(c.evaluate(x), rel=1e-12, abs=1e-12)


def test_kron_to_monomial_example():
    basis = build_basis(2, 2)
    coeffs = kron_to_monomial(KronCoeff(2, 2, [1, 1, 1, 1]), basis)
    assert coeffs.tolist() == [0, 0, 1, 2, 1]


def test_kron_to_monomial_scalar_is_identity():
    basis = build_basis(1, 4)
    coeffs = kron_to_monomial(KronCoeff(1, 3, [2.5]), basis)
    assert coeffs.tolist() == [0, 0, 2.5, 0]


def test_kron_to_monomial_matches_direct_evaluation(rng):
    basis = build_basis(2, 3)
    c = KronCoeff(2, 3, rng.normal(size=8))
    coeffs = kron_to_monomial(c, basis)
    for x in rng.normal(size=(10, 2)):
        z, _ = eval_basis(basis, x)
        assert coeffs @ z == pytest.approx(c.evaluate(x), rel=1e-12, abs=1e-12)


def test_monomial_to_kron_inverts_kron_to_monomial(rng):
    basis = build_basis(3, 3)
    coeffs = np.zeros(basis.size)
    coeffs[basis.block_slice(3)] = rng.normal(size=basis.block_sizes[2])
    back = kron_to_monomial(monomial_to_kron(coeffs, basis, 3), basis)
    assert np.allclose(back, coeffs, atol=1e-13)
