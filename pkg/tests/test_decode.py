import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from specbias.decode import CVConfig, linear_decodability, outer_folds, r2_score, ridge_fit


def augmented_lstsq(X, y, lam):
    """Ridge with free intercept as an ordinary least-squares problem on stacked rows."""
    n, d = X.shape
    A = np.vstack([np.column_stack([X, np.ones(n)]),
                   np.column_stack([np.sqrt(lam) * np.eye(d), np.zeros(d)])])
    sol = np.linalg.lstsq(A, np.concatenate([y, np.zeros(d)]), rcond=None)[0]
    return sol[:d], sol[d]


class TestRidgeFit:
    def test_hand_system(self):
        X = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [2.0, 1.0]])
        y = np.array([1.0, 2.0, 2.5, 4.0])
        for lam in (1e-3, 0.5, 10.0):
            w, b = ridge_fit(X, y, lam)
            w_ref, b_ref = augmented_lstsq(X, y, lam)
            assert np.allclose(w, w_ref, atol=1e-10) and b == pytest.approx(b_ref, abs=1e-10)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000), lam=st.floats(1e-4, 1e3))
    def test_matches_augmented_least_squares(self, seed, lam):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(30, 5))
        y = rng.normal(size=30)
        w, b = ridge_fit(X, y, lam)
        w_ref, b_ref = augmented_lstsq(X, y, lam)
        assert np.allclose(w, w_ref, atol=1e-9) and b == pytest.approx(b_ref, abs=1e-9)

    def test_huge_lambda_shrinks_to_mean(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(40, 3))
        y = X @ [1.0, -2.0, 0.5] + 3.0
        w, b = ridge_fit(X, y, 1e9)
        assert np.abs(w).max() < 1e-6
        assert b == pytest.approx(y.mean(), abs=1e-5)

    def test_exact_recovery_at_tiny_lambda(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(50, 4))
        w_true = np.array([0.3, -1.0, 2.0, 0.0])
        w, b = ridge_fit(X, X @ w_true - 1.5, 1e-10)
        assert np.allclose(w, w_true, atol=1e-8) and b == pytest.approx(-1.5, abs=1e-8)

    def test_rejections(self):
        with pytest.raises(ValueError, match="lambda"):
            ridge_fit(np.ones((3, 1)), np.arange(3.0), 0.0)
        with pytest.raises(ValueError, match="non-finite"):
            ridge_fit(np.array([[1.0], [np.nan], [2.0]]), np.arange(3.0), 1.0)
        with pytest.raises(ValueError, match="shape"):
            ridge_fit(np.ones((3, 1)), np.arange(4.0), 1.0)


class TestCrossValidation:
    def data(self, n=200, d=6, noise=0.1, seed=0):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(n, d))
        return X, X @ rng.normal(size=d) + noise * rng.normal(size=n)

    def test_outer_folds_partition(self):
        folds = outer_folds(103, CVConfig())
        together = np.sort(np.concatenate(folds))
        assert np.array_equal(together, np.arange(103))
        assert {len(f) for f in folds} <= {20, 21}

    def test_linear_target_is_recovered(self):
        X, y = self.data()
        rep = linear_decodability(X, y)
        assert rep.r2_pooled > 0.99
        assert len(rep.chosen_lambdas) == 5 and len(rep.predictions) == 200

    def test_noise_target_is_not(self):
        rng = np.random.default_rng(5)
        rep = linear_decodability(rng.normal(size=(300, 5)), rng.normal(size=300))
        assert rep.r2_pooled < 0.05

    def test_test_targets_do_not_influence_their_predictions(self):
        X, y = self.data(n=100)
        cv = CVConfig()
        base = linear_decodability(X, y, cv)
        fold = outer_folds(100, cv)[2]
        y2 = y.copy()
        y2[fold] = 1e3 * np.random.default_rng(1).normal(size=len(fold))
        moved = linear_decodability(X, y2, cv)
        assert np.allclose(np.array(moved.predictions)[fold], np.array(base.predictions)[fold], atol=1e-12)
        assert moved.chosen_lambdas[2] == base.chosen_lambdas[2]

    def test_affine_target_invariance(self):
        X, y = self.data(noise=1.0)
        r0 = linear_decodability(X, y).r2_pooled
        r1 = linear_decodability(X, 4.0 * y - 7.0).r2_pooled
        assert r1 == pytest.approx(r0, abs=1e-9)

    def test_column_rescaling_invariance(self):
        X, y = self.data(noise=0.5)
        scaled = X * np.array([1e-3, 1.0, 1e3, 5.0, 0.2, 1.0])
        r0 = linear_decodability(X, y).r2_pooled
        assert linear_decodability(scaled, y).r2_pooled == pytest.approx(r0, abs=1e-8)
        cv = CVConfig(lambda_grid=(1e-8,), standardize=False)
        assert linear_decodability(scaled, y, cv).r2_pooled == pytest.approx(
            linear_decodability(X, y, cv).r2_pooled, abs=1e-6)

    def test_deterministic(self):
        X, y = self.data()
        assert linear_decodability(X, y).to_dict() == linear_decodability(X, y).to_dict()

    def test_constant_targets_rejected(self):
        with pytest.raises(ValueError, match="constant"):
            linear_decodability(np.ones((20, 2)), np.full(20, 3.0))

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="targets"):
            linear_decodability(np.ones((20, 2)), np.arange(19.0))

    def test_too_few_samples_for_folds(self):
        with pytest.raises(ValueError, match="folds"):
            linear_decodability(np.random.default_rng(0).normal(size=(4, 2)), np.arange(4.0))

    def test_r2_hand_value(self):
        assert r2_score([1.0, 2.0, 3.0], [1.0, 2.0, 4.0]) == pytest.approx(0.5)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            CVConfig(outer_folds=1)
        with pytest.raises(ValueError):
            CVConfig(lambda_grid=(0.0, 1.0))
