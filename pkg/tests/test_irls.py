import math
import random

import numpy as np
import pytest

from polyclick.irls import (
    DegenerateDataError,
    DesignMatrix,
    FitConfig,
    FitResult,
    RankDeficientError,
    deviance,
    fit,
    weighted_least_squares,
)
from polyclick.model_core import LabeledVector, log_likelihood, logit

import oracles


def design_from_dense(x: np.ndarray, y: np.ndarray) -> DesignMatrix:
    """x must have a leading all-ones intercept column and 0/1 features."""
    rows = []
    for xi, yi in zip(x, y):
        active = tuple(int(j) for j in np.flatnonzero(xi[1:]) + 1)
        rows.append(LabeledVector(response=int(yi), active_indices=active))
    return DesignMatrix(rows=tuple(rows), n_features=x.shape[1])


def random_sparse_design(rng: random.Random, n: int, p: int,
                         beta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Random binary design with planted coefficients; returns (X, y)."""
    x = np.zeros((n, p))
    x[:, 0] = 1.0
    for i in range(n):
        for j in range(1, p):
            if rng.random() < 0.4:
                x[i, j] = 1.0
    eta = x @ beta
    y = np.array([1 if rng.random() < 1 / (1 + math.exp(-e)) else 0 for e in eta])
    return x, y


class TestInterceptOnly:
    def test_closed_form(self):
        rows = tuple(
            LabeledVector(response=1 if i < 25 else 0, active_indices=())
            for i in range(100)
        )
        design = DesignMatrix(rows=rows, n_features=1)
        result = fit(design, FitConfig(ridge=0.0))
        assert result.converged
        assert result.beta[0] == pytest.approx(math.log(25 / 75), abs=1e-6)

    def test_random_prevalences(self):
        rng = random.Random(21)
        for _ in range(20):
            n = rng.randrange(40, 400)
            k = rng.randrange(1, n)
            rows = tuple(
                LabeledVector(response=1 if i < k else 0, active_indices=())
                for i in range(n)
            )
            result = fit(DesignMatrix(rows=rows, n_features=1), FitConfig(ridge=0.0))
            assert result.beta[0] == pytest.approx(logit(k / n), abs=1e-6)


class TestFitAgainstBruteForce:
    def test_two_feature_synthetic_vs_lattice(self):
        rng = random.Random(77)
        true_beta = np.array([-1.0, 0.8, -0.5])
        x, y = random_sparse_design(rng, 200, 3, true_beta)
        result = fit(design_from_dense(x, y), FitConfig(ridge=0.0, tolerance=1e-12))
        assert result.converged
        oracle = oracles.lattice_maximizer(x, y.astype(float), final_step=1e-3)
        np.testing.assert_allclose(result.beta, oracle, atol=2e-3)

    def test_score_identity_at_mle(self):
        # y'X equals the model expectation pi'X at the unpenalized optimum
        rng = random.Random(31)
        beta = np.array([-0.5, 1.0, -1.2, 0.4])
        x, y = random_sparse_design(rng, 400, 4, beta)
        result = fit(design_from_dense(x, y), FitConfig(ridge=0.0, tolerance=1e-12))
        pi = 1.0 / (1.0 + np.exp(-(x @ result.beta)))
        observed = y @ x
        expected = pi @ x
        grad0_norm = np.abs((y - 0.5) @ x).max()
        assert np.abs(observed - expected).max() <= 1e-6 * (1.0 + grad0_norm)


class TestSeparation:
    def separated_design(self) -> DesignMatrix:
        rows = [LabeledVector(response=1, active_indices=(1,)) for _ in range(5)]
        rows += [LabeledVector(response=0, active_indices=()) for _ in range(5)]
        return DesignMatrix(rows=tuple(rows), n_features=2)

    def test_warning_and_bounded_coefficients(self):
        # with the default ridge the penalized optimum sits near |eta| = 13.6,
        # so pin the bound below that to see the crossing reported
        design = self.separated_design()
        config = FitConfig(max_iterations=100, separation_eta_bound=10.0)
        result = fit(design, config)
        assert any("separation" in w for w in result.warnings)
        assert result.converged
        assert np.all(np.isfinite(result.beta))
        # ridge keeps the optimum finite; stationarity bounds the slope by
        # grad_ll / ridge, and the gradient along beta_1 is at most n rows
        assert np.abs(result.beta).max() <= 10.0 / config.ridge

    def test_likelihood_monotone_without_ridge(self):
        # confirms the data are genuinely separated: moving along the fitted
        # direction keeps increasing the raw likelihood
        design = self.separated_design()
        result = fit(design, FitConfig(max_iterations=100))
        direction = result.beta / np.linalg.norm(result.beta)
        lls = [
            log_likelihood(t * direction, list(design.rows))
            for t in (1.0, 10.0, 100.0, 1000.0)
        ]
        assert all(b > a for a, b in zip(lls, lls[1:]))


class TestDeviance:
    def test_saturated_single_grouped_row(self):
        design = DesignMatrix(
            rows=(LabeledVector(response=1, active_indices=(), trials=2),),
            n_features=1,
        )
        assert deviance([0.0], design) == pytest.approx(0.0, abs=1e-12)

    def test_two_bernoulli_rows_at_zero(self):
        design = DesignMatrix(
            rows=(
                LabeledVector(response=0, active_indices=()),
                LabeledVector(response=1, active_indices=()),
            ),
            n_features=1,
        )
        assert deviance([0.0], design) == pytest.approx(4 * math.log(2), abs=1e-12)
        assert deviance([0.0], design) == pytest.approx(2.7726, abs=1e-4)

    def test_fitted_no_worse_than_null(self):
        rng = random.Random(91)
        for seed in range(5):
            rng.seed(seed)
            x, y = random_sparse_design(rng, 120, 4, np.array([-1.0, 0.5, 0.9, -0.7]))
            design = design_from_dense(x, y)
            result = fit(design)
            assert deviance(result.beta, design) <= deviance(np.zeros(4), design) + 1e-9

    def test_nonnegative(self):
        rng = random.Random(17)
        x, y = random_sparse_design(rng, 60, 3, np.array([0.2, -0.4, 0.6]))
        design = design_from_dense(x, y)
        for _ in range(10):
            beta = [rng.gauss(0, 2) for _ in range(3)]
            assert deviance(beta, design) >= 0.0


class TestWeightedLeastSquares:
    def test_exact_interpolation_square_system(self):
        rows = (
            LabeledVector(response=0, active_indices=()),
            LabeledVector(response=0, active_indices=(1,)),
            LabeledVector(response=0, active_indices=(2,)),
        )
        design = DesignMatrix(rows=rows, n_features=3)
        z = [1.0, 2.0, 3.0]
        beta = weighted_least_squares(design, [1.0, 1.0, 1.0], z)
        np.testing.assert_allclose(design.to_dense() @ beta, z, atol=1e-12)

    def test_matches_exact_rational_normal_equations(self):
        rng = random.Random(55)
        rows = []
        for _ in range(50):
            active = tuple(sorted(rng.sample(range(1, 8), rng.randrange(0, 5))))
            rows.append(LabeledVector(response=0, active_indices=active))
        design = DesignMatrix(rows=tuple(rows), n_features=8)
        w = [rng.uniform(0.1, 2.0) for _ in range(50)]
        z = [rng.gauss(0, 1) for _ in range(50)]
        beta = weighted_least_squares(design, w, z)
        exact = oracles.exact_normal_equations(
            design.to_dense().tolist(), w, z, ridge=0.0
        )
        for b, e in zip(beta, exact):
            assert b == pytest.approx(float(e), rel=1e-8, abs=1e-10)

    def test_half_weight_duplication_identity(self):
        rng = random.Random(14)
        rows = []
        for _ in range(30):
            active = tuple(sorted(rng.sample(range(1, 5), rng.randrange(0, 3))))
            rows.append(LabeledVector(response=0, active_indices=active))
        design = DesignMatrix(rows=tuple(rows), n_features=5)
        w = [rng.uniform(0.5, 1.5) for _ in range(30)]
        z = [rng.gauss(0, 1) for _ in range(30)]
        beta = weighted_least_squares(design, w, z)
        doubled = DesignMatrix(rows=tuple(rows) + tuple(rows), n_features=5)
        beta2 = weighted_least_squares(doubled, [v / 2 for v in w + w], z + z)
        np.testing.assert_allclose(beta, beta2, atol=1e-10)

    def test_rank_deficient_raises_without_ridge(self):
        # two identical columns
        rows = tuple(
            LabeledVector(response=0, active_indices=(1, 2))
            for _ in range(10)
        )
        design = DesignMatrix(rows=rows, n_features=3)
        with pytest.raises(RankDeficientError):
            weighted_least_squares(design, [1.0] * 10, [1.0] * 10)
        beta = weighted_least_squares(design, [1.0] * 10, [1.0] * 10, ridge=1e-6)
        assert np.all(np.isfinite(beta))


class TestFitMechanics:
    def make_design(self, seed=3, n=150):
        rng = random.Random(seed)
        x, y = random_sparse_design(rng, n, 4, np.array([-0.8, 0.6, -0.3, 1.1]))
        return design_from_dense(x, y)

    def test_deviance_trace_non_increasing(self):
        result = fit(self.make_design())
        trace = result.deviance_trace
        for a, b in zip(trace, trace[1:]):
            assert b <= a + 1e-9

    def test_deterministic_bit_identical(self):
        d = self.make_design()
        r1, r2 = fit(d), fit(d)
        assert np.array_equal(r1.beta, r2.beta)
        assert r1.iterations == r2.iterations
        assert r1.final_deviance == r2.final_deviance

    def test_row_permutation_invariance(self):
        d = self.make_design()
        rng = random.Random(8)
        rows = list(d.rows)
        rng.shuffle(rows)
        shuffled = DesignMatrix(rows=tuple(rows), n_features=d.n_features)
        np.testing.assert_allclose(fit(d).beta, fit(shuffled).beta, atol=1e-6)

    def test_not_converged_returns_best_iterate(self):
        result = fit(self.make_design(), FitConfig(max_iterations=1, tolerance=1e-15))
        assert isinstance(result, FitResult)
        assert not result.converged
        assert any("not converged" in w for w in result.warnings)
        assert np.all(np.isfinite(result.beta))

    @pytest.mark.parametrize("label", [0, 1])
    def test_degenerate_single_class(self, label):
        rows = tuple(
            LabeledVector(response=label, active_indices=()) for _ in range(10)
        )
        with pytest.raises(DegenerateDataError):
            fit(DesignMatrix(rows=rows, n_features=1))

    def test_reuse_qr_fast_path_matches_exact_path(self):
        for seed in (1, 2, 3):
            d = self.make_design(seed=seed)
            exact = fit(d, FitConfig(tolerance=1e-10))
            reused = fit(d, FitConfig(tolerance=1e-10, reuse_qr=True))
            np.testing.assert_allclose(exact.beta, reused.beta, atol=1e-6)

    def test_full_one_hot_identifiable_via_ridge(self):
        # all-levels encoding: intercept column equals the sum of the hour
        # block, singular at ridge zero, unique with the default ridge
        rng = random.Random(44)
        rows = []
        for i in range(200):
            h = rng.randrange(3)
            rows.append(
                LabeledVector(response=int(rng.random() < (0.2 + 0.2 * h)),
                              active_indices=(1 + h,))
            )
        design = DesignMatrix(rows=tuple(rows), n_features=4)
        result = fit(design)  # default ridge
        assert result.converged
        with pytest.raises(RankDeficientError):
            fit(design, FitConfig(ridge=0.0))


def test_design_matrix_validates_index_bounds():
    with pytest.raises(ValueError):
        DesignMatrix(
            rows=(LabeledVector(response=1, active_indices=(5,)),), n_features=3
        )
