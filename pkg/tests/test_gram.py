import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from esc_dag import DataMatrix, SingularGram, fit_support, least_squares, residual_variance, update_add, update_remove
from esc_dag.gram import check_support

from conftest import qr_coefficients, qr_residual_variance


class TestResidualVariance:
    def test_empty_support_is_mean_square(self):
        X = np.array([[1.0, 1.0], [2.0, 2.0], [2.0, 0.5]])
        # column 1: ||(1, 2, 0.5)||^2 = 5.25
        assert residual_variance(X, 1, ()) == pytest.approx(5.25 / 3)
        Y = np.array([[0.3, 1.0], [0.1, 2.0], [0.7, 2.0]])
        assert residual_variance(Y, 1, ()) == 3.0

    def test_response_in_span_is_zero(self, rng):
        X = rng.standard_normal((10, 3))
        X[:, 2] = X[:, 0]
        assert residual_variance(X, 2, (0,)) <= 1e-12 * np.mean(X[:, 2] ** 2)

    def test_matches_qr_oracle(self, small_data):
        got = residual_variance(small_data, 4, (0, 2))
        assert got == pytest.approx(qr_residual_variance(small_data, 4, (0, 2)), rel=1e-10)

    def test_singular_support_raises(self, rng):
        X = rng.standard_normal((10, 4))
        X[:, 1] = 3 * X[:, 0]
        with pytest.raises(SingularGram):
            residual_variance(X, 3, (0, 1))

    def test_support_validation(self, small_data):
        d = DataMatrix(small_data)
        with pytest.raises(ValueError):
            check_support(d, 2, (2,))
        with pytest.raises(ValueError):
            check_support(d, 0, ())
        with pytest.raises(ValueError):
            check_support(DataMatrix(np.ones((4, 6))), 5, (0, 1, 2))  # exceeds n - 2
        assert check_support(d, 4, (3, 1)) == (1, 3)

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            DataMatrix(np.array([[1.0, np.nan], [0.0, 1.0]]))


class TestLeastSquares:
    def test_orthogonal_design(self):
        n = 8
        H = np.linalg.qr(np.random.default_rng(1).standard_normal((n, n)))[0] * np.sqrt(n)
        X = np.column_stack([H[:, 0], H[:, 1], H[:, 2], H[:, :3] @ [1.5, -2.0, 0.5] + H[:, 3]])
        got = least_squares(X, 3, (0, 1, 2))
        np.testing.assert_allclose(got, X[:, :3].T @ X[:, 3] / n, rtol=1e-12)

    def test_exact_fit(self, rng):
        X = rng.standard_normal((6, 3))
        X[:, 2] = 2 * X[:, 1]
        np.testing.assert_allclose(least_squares(X, 2, (1,)), [2.0], rtol=1e-12)

    def test_matches_qr_oracle(self, rng):
        X = rng.standard_normal((30, 6))
        np.testing.assert_allclose(least_squares(X, 5, (0, 2, 3)), qr_coefficients(X, 5, (0, 2, 3)), rtol=1e-10)


class TestIncrementalUpdates:
    def test_add_from_empty(self, small_data):
        fit = update_add(fit_support(small_data, 4, ()), small_data, 2)
        assert fit.d_hat == pytest.approx(residual_variance(small_data, 4, (2,)), rel=1e-12)
        np.testing.assert_allclose(fit.a_hat, least_squares(small_data, 4, (2,)), rtol=1e-12)

    def test_add_remove_round_trip(self, small_data):
        base = fit_support(small_data, 4, (0, 3))
        back = update_remove(update_add(base, small_data, 1), small_data, 1)
        assert back.d_hat == pytest.approx(base.d_hat, rel=1e-9)
        assert back.support == (0, 3)

    def test_remove_middle_keeps_coefficients_sorted(self, rng):
        X = rng.standard_normal((40, 8))
        fit = fit_support(X, 7, ())
        for l in (5, 1, 3, 0):
            fit = update_add(fit, X, l)
        fit = update_remove(fit, X, 1)
        np.testing.assert_allclose(fit.a_hat, qr_coefficients(X, 7, (0, 3, 5)), rtol=1e-9)

    def test_dependent_add_raises(self, rng):
        X = rng.standard_normal((10, 4))
        X[:, 2] = X[:, 0] - X[:, 1]
        fit = fit_support(X, 3, (0, 1))
        with pytest.raises(SingularGram):
            update_add(fit, X, 2)

    def test_random_walk_against_fresh_solves(self, rng):
        X = rng.standard_normal((40, 10))
        j = 9
        fit = fit_support(X, j, ())
        for _ in range(50):
            l = int(rng.integers(j))
            fit = update_remove(fit, X, l) if l in fit.order else update_add(fit, X, l)
            assert fit.d_hat == pytest.approx(qr_residual_variance(X, j, fit.support), rel=1e-8)


class TestProperties:
    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), data=st.data())
    def test_monotone_in_support(self, seed, data):
        X = np.random.default_rng(seed).standard_normal((15, 7))
        big = data.draw(st.sets(st.integers(0, 5), max_size=6))
        small = data.draw(st.sets(st.sampled_from(sorted(big)), max_size=len(big))) if big else set()
        scale = np.mean(X[:, 6] ** 2)
        assert residual_variance(X, 6, sorted(big)) <= residual_variance(X, 6, sorted(small)) + 1e-12 * scale

    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), c=st.floats(0.01, 100.0), support=st.sets(st.integers(0, 4), max_size=4))
    def test_scale_equivariance(self, seed, c, support):
        X = np.random.default_rng(seed).standard_normal((12, 6))
        s = sorted(support)
        assert residual_variance(c * X, 5, s) == pytest.approx(c**2 * residual_variance(X, 5, s), rel=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), perm_seed=st.integers(0, 1000))
    def test_permutation_consistency(self, seed, perm_seed):
        X = np.random.default_rng(seed).standard_normal((12, 6))
        s = [0, 2, 3, 4]
        shuffled = list(np.random.default_rng(perm_seed).permutation(s))
        fit = fit_support(X, 5, ())
        for l in shuffled:
            fit = update_add(fit, X, l)
        assert fit.d_hat == pytest.approx(residual_variance(X, 5, s), rel=1e-10)
        assert residual_variance(X, 5, shuffled) == residual_variance(X, 5, s)
