import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import optimize

from rankforge.core_linalg import (
    EstimatedMatrix,
    inverse_sqrt_factor,
    nearest_rank_frobenius,
    projectors,
    pseudo_inverse,
    restrict_columns,
    sandwich,
    svd_split,
    unvec,
    vec,
)
from rankforge.exceptions import DegenerateSpectrum, InvalidInput, SingularGamma

finite_floats = st.floats(-5.0, 5.0, allow_nan=False, allow_infinity=False, allow_subnormal=False)


def random_orthogonal(rng, k):
    q, r = np.linalg.qr(rng.standard_normal((k, k)))
    return q * np.sign(np.diag(r))


def test_vec_is_column_major():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(vec(a), [1.0, 3.0, 2.0, 4.0])
    np.testing.assert_array_equal(unvec(vec(a), 2, 2), a)


class TestSvdSplit:
    def test_diagonal(self):
        parts = svd_split(np.diag([3.0, 2.0, 1.0]), 2)
        np.testing.assert_allclose(parts.singular_values, [3.0, 2.0, 1.0])
        assert parts.m == 2

    def test_zero_matrix(self):
        parts = svd_split(np.zeros((2, 4)), 0)
        np.testing.assert_array_equal(parts.singular_values, [0.0, 0.0])
        assert parts.v.shape == (4, 4)

    def test_reconstruction(self, rng):
        a = rng.standard_normal((3, 5))
        parts = svd_split(a, 1)
        rebuilt = (parts.u * parts.singular_values) @ parts.v[:, :3].T
        assert np.max(np.abs(rebuilt - a)) <= 1e-10 * parts.singular_values[0]

    def test_sign_convention(self, rng):
        parts = svd_split(rng.standard_normal((4, 6)), 2)
        for j in range(parts.u.shape[1]):
            col = parts.u[:, j]
            assert col[np.argmax(np.abs(col))] >= 0

    def test_descending(self, rng):
        s = svd_split(rng.standard_normal((5, 3)), 0).singular_values
        assert np.all(np.diff(s) <= 0)

    def test_non_finite_rejected(self):
        with pytest.raises(InvalidInput):
            svd_split(np.array([[1.0, np.nan], [0.0, 1.0]]), 1)

    def test_split_out_of_range(self):
        with pytest.raises(InvalidInput):
            svd_split(np.eye(3), 4)


class TestProjectors:
    def test_diagonal(self):
        proj = projectors(svd_split(np.diag([3.0, 2.0, 1.0]), 2))
        np.testing.assert_allclose(proj.q1, np.diag([0.0, 0.0, 1.0]), atol=1e-12)
        np.testing.assert_allclose(proj.q2, np.diag([0.0, 0.0, 1.0]), atol=1e-12)

    def test_no_retained_directions(self, rng):
        proj = projectors(svd_split(rng.standard_normal((3, 5)), 0))
        np.testing.assert_allclose(proj.q1, np.eye(3), atol=1e-12)
        assert np.trace(proj.q2) == pytest.approx(5.0, abs=1e-8)

    def test_tied_values(self):
        with pytest.raises(DegenerateSpectrum) as info:
            projectors(svd_split(np.diag([2.0, 2.0, 1.0]), 1))
        assert info.value.upper == pytest.approx(2.0)
        assert info.value.lower == pytest.approx(2.0)

    def test_zero_matrix_has_no_gap(self):
        with pytest.raises(DegenerateSpectrum):
            projectors(svd_split(np.zeros((2, 3)), 1))

    @pytest.mark.parametrize("m", [0, 1, 2])
    def test_projector_identities(self, rng, m):
        proj = projectors(svd_split(rng.standard_normal((3, 5)), m))
        for q, size in ((proj.q1, 3), (proj.q2, 5)):
            np.testing.assert_allclose(q @ q, q, atol=1e-9)
            np.testing.assert_allclose(q, q.T, atol=1e-12)
            assert np.trace(q) == pytest.approx(size - m, abs=1e-8)
        np.testing.assert_allclose(proj.p1 + proj.q1, np.eye(3))
        np.testing.assert_allclose(proj.p2 + proj.q2, np.eye(5))

    def test_wide_orientation(self, rng):
        # p > H: left projector keeps p - m directions
        proj = projectors(svd_split(rng.standard_normal((6, 4)), 1))
        assert np.trace(proj.q1) == pytest.approx(5.0)
        assert np.trace(proj.q2) == pytest.approx(3.0)


class TestNearestRank:
    def test_diagonal(self):
        mat, resid = nearest_rank_frobenius(np.diag([3.0, 2.0, 1.0]), 2)
        np.testing.assert_allclose(mat, np.diag([3.0, 2.0, 0.0]), atol=1e-12)
        assert resid == pytest.approx(1.0)

    def test_rank_zero(self):
        mat, resid = nearest_rank_frobenius(np.diag([3.0, 2.0, 1.0]), 0)
        np.testing.assert_array_equal(mat, np.zeros((3, 3)))
        assert resid == pytest.approx(14.0)

    def test_matches_direct_minimisation(self, rng):
        a = rng.standard_normal((3, 4))
        _, resid = nearest_rank_frobenius(a, 1)

        def loss(z):
            return float(np.sum((a - np.outer(z[:3], z[3:])) ** 2))

        best = min(
            optimize.minimize(loss, rng.standard_normal(7), method="BFGS", options={"gtol": 1e-10}).fun
            for _ in range(5)
        )
        assert best == pytest.approx(resid, abs=1e-6)

    @pytest.mark.parametrize("seed", range(10))
    def test_eckart_young_identity(self, seed):
        a = np.random.default_rng(seed).standard_normal((4, 6))
        for m in range(4):
            _, resid = nearest_rank_frobenius(a, m)
            trailing = svd_split(a, m).trailing
            assert resid == pytest.approx(float(np.sum(trailing ** 2)), rel=1e-9)

    def test_returned_rank(self, rng):
        mat, _ = nearest_rank_frobenius(rng.standard_normal((4, 5)), 2)
        s = np.linalg.svd(mat, compute_uv=False)
        assert s[2] <= 1e-10 * s[0]


@given(arrays(float, (3, 4), elements=finite_floats), st.integers(0, 2 ** 32 - 1))
def test_orthogonal_invariance(a, seed):
    rng = np.random.default_rng(seed)
    u, v = random_orthogonal(rng, 3), random_orthogonal(rng, 4)
    before = svd_split(a, 0).singular_values
    after = svd_split(u @ a @ v.T, 0).singular_values
    np.testing.assert_allclose(after, before, atol=1e-9)


class TestSandwich:
    def test_identity_projectors(self, make_gamma):
        gamma = make_gamma(6)
        proj = projectors(svd_split(np.diag([1.0, 0.5]) @ np.ones((2, 3)), 0))
        out = sandwich(proj, gamma)
        np.testing.assert_allclose(out, gamma, atol=1e-12)

    def test_projector_spectrum(self, rng):
        proj = projectors(svd_split(rng.standard_normal((3, 4)), 1))
        eig = np.sort(np.linalg.eigvalsh(sandwich(proj, np.eye(12))))[::-1]
        np.testing.assert_allclose(eig[:6], np.ones(6), atol=1e-10)
        np.testing.assert_allclose(eig[6:], np.zeros(6), atol=1e-10)

    def test_matches_kronecker(self, rng, make_gamma):
        proj = projectors(svd_split(rng.standard_normal((2, 2)), 1))
        gamma = make_gamma(4, seed=3)
        kron = np.kron(proj.q2, proj.q1)
        np.testing.assert_allclose(sandwich(proj, gamma), kron @ gamma @ kron, atol=1e-12)

    def test_blockwise_path(self, rng, make_gamma):
        p, h = 20, 21
        proj = projectors(svd_split(rng.standard_normal((p, h)), 3))
        gamma = make_gamma(p * h, seed=4)
        kron = np.kron(proj.q2, proj.q1)
        np.testing.assert_allclose(sandwich(proj, gamma), kron @ gamma @ kron, atol=1e-10)

    def test_dimension_mismatch(self, rng):
        proj = projectors(svd_split(rng.standard_normal((2, 3)), 1))
        with pytest.raises(InvalidInput):
            sandwich(proj, np.eye(5))

    @given(st.integers(0, 2 ** 32 - 1), st.integers(0, 2))
    def test_psd_preserved(self, seed, m):
        rng = np.random.default_rng(seed)
        b = rng.standard_normal((12, 5))
        proj = projectors(svd_split(rng.standard_normal((3, 4)), m))
        eig = np.linalg.eigvalsh(sandwich(proj, b @ b.T))
        assert eig[0] >= -1e-8 * max(eig[-1], 1e-300)


class TestPseudoInverse:
    def test_diagonal(self):
        inv, rank = pseudo_inverse(np.diag([2.0, 0.0]))
        np.testing.assert_allclose(inv, np.diag([0.5, 0.0]))
        assert rank == 1

    def test_identity(self):
        inv, rank = pseudo_inverse(np.eye(3))
        np.testing.assert_allclose(inv, np.eye(3))
        assert rank == 3

    def test_zero(self):
        inv, rank = pseudo_inverse(np.zeros((3, 3)))
        np.testing.assert_array_equal(inv, np.zeros((3, 3)))
        assert rank == 0

    def test_penrose_identities(self, rng):
        b = rng.standard_normal((4, 2))
        a = b @ b.T
        inv, rank = pseudo_inverse(a)
        assert rank == 2
        scale = np.linalg.norm(a)
        np.testing.assert_allclose(a @ inv @ a, a, atol=1e-7 * scale)
        np.testing.assert_allclose(inv @ a @ inv, inv, atol=1e-7 * np.linalg.norm(inv))
        np.testing.assert_allclose((a @ inv).T, a @ inv, atol=1e-7)
        np.testing.assert_allclose((inv @ a).T, inv @ a, atol=1e-7)


class TestInverseSqrt:
    def test_factor(self, make_gamma):
        gamma = make_gamma(6, seed=1)
        g = inverse_sqrt_factor(gamma)
        np.testing.assert_allclose(g.T @ g @ gamma, np.eye(6), atol=1e-10)

    def test_singular(self):
        with pytest.raises(SingularGamma) as info:
            inverse_sqrt_factor(np.diag([1.0, 1.0, 0.0]))
        assert info.value.condition == float("inf")

    def test_ill_conditioned(self):
        with pytest.raises(SingularGamma):
            inverse_sqrt_factor(np.diag([1.0, 1e-13]))


class TestEstimatedMatrix:
    def test_accepts_valid(self, make_gamma):
        est = EstimatedMatrix(np.ones((2, 3)), make_gamma(6), 10)
        assert (est.p, est.h, est.rank_bound) == (2, 3, 2)

    def test_accepts_more_rows_than_columns(self, make_gamma):
        est = EstimatedMatrix(np.ones((6, 4)), make_gamma(24), 10)
        assert est.rank_bound == 4

    def test_rejects_asymmetric(self):
        gamma = np.eye(4)
        gamma[0, 1] = 0.1
        with pytest.raises(InvalidInput):
            EstimatedMatrix(np.ones((2, 2)), gamma, 10)

    def test_rejects_indefinite(self):
        with pytest.raises(InvalidInput):
            EstimatedMatrix(np.ones((2, 2)), np.diag([1.0, 1.0, 1.0, -1.0]), 10)

    def test_rejects_small_n(self):
        with pytest.raises(InvalidInput):
            EstimatedMatrix(np.ones((2, 2)), np.eye(4), 1)

    def test_rejects_wrong_gamma_shape(self):
        with pytest.raises(InvalidInput):
            EstimatedMatrix(np.ones((2, 3)), np.eye(5), 10)

    def test_arrays_are_read_only(self):
        est = EstimatedMatrix(np.ones((2, 2)), np.eye(4), 10)
        with pytest.raises(ValueError):
            est.m_hat[0, 0] = 5.0


class TestRestrictColumns:
    def test_preserves_singular_values(self, rng, make_gamma):
        h = 4
        basis = np.linalg.qr(rng.standard_normal((h, h - 1)))[0]
        m_hat = rng.standard_normal((3, h - 1)) @ basis.T
        est = EstimatedMatrix(m_hat, make_gamma(3 * h), 50)
        reduced = restrict_columns(est, basis)
        np.testing.assert_allclose(
            np.linalg.svd(reduced.m_hat, compute_uv=False),
            np.linalg.svd(m_hat, compute_uv=False)[:3],
            atol=1e-10,
        )
        t = np.kron(basis, np.eye(3))
        np.testing.assert_allclose(reduced.gamma_hat, t.T @ est.gamma_hat @ t, atol=1e-12)

    def test_vec_coordinates(self, rng, make_gamma):
        basis = np.linalg.qr(rng.standard_normal((3, 2)))[0]
        m_hat = rng.standard_normal((2, 3))
        reduced = restrict_columns(EstimatedMatrix(m_hat, make_gamma(6), 5), basis)
        np.testing.assert_allclose(vec(reduced.m_hat), np.kron(basis, np.eye(2)).T @ vec(m_hat))

    def test_rejects_non_orthonormal(self):
        with pytest.raises(InvalidInput):
            restrict_columns(EstimatedMatrix(np.ones((2, 3)), np.eye(6), 5), np.ones((3, 2)))
