import math

import numpy as np
import pytest
from scipy.integrate import quad, simpson

from admixscan.glm import TraitData, center_ancestries, fit_glm
from admixscan.qnm import (
    BfValue,
    QnmSpec,
    TAU_BRACKET,
    average_bf,
    bayes_factor,
    density_grid,
    estimate_tau_eb,
    hwe_second_moment,
    log_bf,
    qnm_density,
    spec_for_frequency,
    spec_from_ancestry,
    wald_statistic,
)
from admixscan.simulate import sample_ancestry_hwe, sample_correlated_ancestry


class TestDensity:
    def test_vanishes_at_zero(self):
        spec = QnmSpec(tau=0.05, sigma2=1.0, scale=np.eye(2), n_subjects=100)
        assert qnm_density(np.zeros(2), spec) == 0.0

    def test_univariate_mode_location(self):
        spec = spec_for_frequency(0.8, tau=0.01, sigma2=1.0, n_subjects=1000)
        v = spec.n_subjects * spec.tau * spec.sigma2 * spec.scale[0, 0]
        mode = math.sqrt(2.0 * v)
        grid = np.linspace(1e-6, 4 * mode, 40001)
        dens = qnm_density(grid[:, None], spec)
        assert grid[np.argmax(dens)] == pytest.approx(mode, rel=1e-3)

    def test_univariate_normalisation_by_quadrature(self):
        spec = spec_for_frequency(0.85, tau=0.03, sigma2=2.0, n_subjects=500)
        v = spec.n_subjects * spec.tau * spec.sigma2 * spec.scale[0, 0]
        half = 14 * math.sqrt(v)
        total, _ = quad(lambda b: qnm_density(np.array([b]), spec), -half, half,
                        limit=200)
        assert total == pytest.approx(1.0, abs=1e-3)

    def test_bivariate_normalisation_by_quadrature(self, rng):
        a = rng.standard_normal((2, 2))
        scale = a @ a.T + 2.0 * np.eye(2)
        spec = QnmSpec(tau=0.02, sigma2=1.5, scale=scale, n_subjects=200)
        v = spec.n_subjects * spec.tau * spec.sigma2
        half = 10 * math.sqrt(v * scale.diagonal().max())
        grid = np.linspace(-half, half, 401)
        bb1, bb2 = np.meshgrid(grid, grid, indexing="ij")
        pts = np.column_stack([bb1.ravel(), bb2.ravel()])
        dens = qnm_density(pts, spec).reshape(len(grid), len(grid))
        total = simpson(simpson(dens, x=grid, axis=1), x=grid)
        assert total == pytest.approx(1.0, abs=1e-3)

    def test_non_positive_definite_scale_rejected(self):
        spec = QnmSpec.__new__(QnmSpec)
        spec.tau, spec.sigma2, spec.n_subjects = 0.1, 1.0, 10
        spec.scale = np.array([[1.0, 2.0], [2.0, 1.0]])  # indefinite
        with pytest.raises(ValueError, match="positive definite"):
            qnm_density(np.ones(2), spec)

    def test_mode_shrinks_as_construction_frequency_grows(self):
        # larger ancestry frequency -> larger S'S -> smaller scale -> the
        # prior concentrates on smaller effects
        modes = []
        for p_a in (0.8, 0.9, 0.99):
            spec = spec_for_frequency(p_a, tau=0.01, sigma2=1.0, n_subjects=1000)
            v = spec.n_subjects * spec.tau * spec.sigma2 * spec.scale[0, 0]
            modes.append(math.sqrt(2.0 * v))
        assert modes[0] > modes[1] > modes[2]

    def test_bivariate_density_leans_on_diagonal_with_correlation(self):
        rng = np.random.default_rng(7)
        ratios = []
        b = 0.15
        for rho in (0.0, 0.25, 0.5, 0.75):
            s = sample_correlated_ancestry(0.8, rho, 1000, rng)
            spec = spec_from_ancestry(s, tau=0.1, sigma2=1.0)
            ratio = qnm_density(np.array([b, b]), spec) / qnm_density(
                np.array([b, -b]), spec
            )
            ratios.append(ratio)
        assert ratios == sorted(ratios)
        assert ratios[-1] > ratios[0]

    def test_density_grid_table_shape(self):
        table = density_grid([0.8, 0.9], tau=0.01, sigma2=1.0, n_subjects=1000)
        assert table.shape[1] == 3
        assert set(np.unique(table[:, 0])) == {0.8, 0.9}
        assert (table[:, 2] >= 0).all()


def synthetic_fit(rng, n=500, beta=0.35, p_a=0.85):
    s_raw = sample_ancestry_hwe([p_a], n, rng)
    y = beta * s_raw[:, 0] + rng.standard_normal(n)
    trait = TraitData(y=y, kind="continuous")
    return trait, fit_glm(trait, center_ancestries(s_raw))


class TestTauEstimate:
    def test_grid_oracle(self, rng):
        _, fit = synthetic_fit(rng)
        tau_hat = estimate_tau_eb(fit, 500)
        w = wald_statistic(fit)
        grid = np.logspace(math.log10(TAU_BRACKET[0]), math.log10(TAU_BRACKET[1]), 10000)
        values = [log_bf(w, 1, 500 * t) for t in grid]
        tau_grid = grid[int(np.argmax(values))]
        spacing = grid[1] / grid[0]
        assert tau_grid / spacing <= tau_hat <= tau_grid * spacing

    def test_null_consistent_data_returns_lower_bound(self):
        from admixscan.glm import FitResult

        fit = FitResult(
            beta_hat=np.zeros(1),
            alpha_hat=np.empty(0),
            intercept=0.0,
            sigma_beta_hat=np.eye(1) * 0.01,
            sigma2_hat=1.0,
            loglik_alt=0.0,
            loglik_null=0.0,
            converged=True,
            n_used=100,
        )
        tau_hat = estimate_tau_eb(fit, 100)
        assert tau_hat == TAU_BRACKET[0]
        bf = bayes_factor(fit, tau_hat, 100)
        assert 10 ** bf.log10_bf <= 1.0

    def test_flagged_fit_rejected(self):
        from admixscan.glm import FitResult

        fit = FitResult(
            beta_hat=np.zeros(1),
            alpha_hat=np.empty(0),
            intercept=0.0,
            sigma_beta_hat=np.eye(1),
            sigma2_hat=1.0,
            loglik_alt=0.0,
            loglik_null=0.0,
            converged=False,
            n_used=10,
            flag="separation",
        )
        with pytest.raises(ValueError):
            estimate_tau_eb(fit, 10)


class TestBayesFactor:
    def test_null_statistic_closed_form(self):
        # T = 0, p = 1, n*tau = 9: BF = 10^(-1.5)
        assert log_bf(0.0, 1, 9.0) / math.log(10.0) == pytest.approx(-1.5)

    def test_monotone_in_wald_statistic(self):
        values = [log_bf(w, 1, 25.0) for w in np.linspace(0, 40, 50)]
        assert all(b > a for a, b in zip(values, values[1:]))

    def test_closed_form_matches_quadrature_marginal_likelihood(self):
        # oracle: integrate the estimate's likelihood ratio against the
        # prior; the closed form should agree to quadrature accuracy
        rng = np.random.default_rng(31)
        rel_errs = []
        for _ in range(10):
            trait, fit = synthetic_fit(rng, n=500, beta=0.35)
            tau_hat = estimate_tau_eb(fit, 500)
            bf = bayes_factor(fit, tau_hat, 500)

            beta_hat = fit.beta_hat[0]
            var = fit.sigma_beta_hat[0, 0]
            spec = QnmSpec(
                tau=tau_hat,
                sigma2=fit.sigma2_hat,
                scale=np.array([[var / fit.sigma2_hat]]),
                n_subjects=500,
            )
            prior_sd = math.sqrt(500 * tau_hat * var)

            def integrand(b):
                ratio = math.exp(
                    (2.0 * beta_hat * b - b * b) / (2.0 * var)
                )
                return ratio * qnm_density(np.array([b]), spec)

            lo = min(beta_hat, 0.0) - 12 * max(prior_sd, math.sqrt(var))
            hi = max(beta_hat, 0.0) + 12 * max(prior_sd, math.sqrt(var))
            oracle, _ = quad(integrand, lo, hi, limit=400)
            rel_errs.append(abs(10 ** bf.log10_bf - oracle) / oracle)
        assert max(rel_errs) < 0.05

    def test_flagged_propagation(self):
        flagged = BfValue.flagged("separation", p=1)
        assert flagged.flag == "separation"
        assert math.isnan(flagged.log10_bf)


class TestAverageBf:
    def bf(self, value):
        return BfValue(log10_bf=math.log10(value), t_stat=1.0, tau_hat=0.1, p=1)

    def test_identical_inputs(self):
        out = average_bf([self.bf(7.0), self.bf(7.0)])
        assert 10 ** out.log10_bf == pytest.approx(7.0)

    def test_degenerate_weights_pick_first(self):
        out = average_bf([self.bf(3.0), self.bf(999.0)], weights=[1.0, 0.0])
        assert 10 ** out.log10_bf == pytest.approx(3.0)

    def test_arithmetic_mean_on_bf_scale(self):
        out = average_bf([self.bf(10.0), self.bf(1000.0)])
        assert 10 ** out.log10_bf == pytest.approx(505.0)

    def test_flagged_entries_excluded_with_renormalisation(self):
        out = average_bf(
            [self.bf(10.0), BfValue.flagged("skip", p=1), self.bf(1000.0)]
        )
        assert 10 ** out.log10_bf == pytest.approx(505.0)

    def test_all_flagged_yields_flagged(self):
        out = average_bf([BfValue.flagged("a", p=1), BfValue.flagged("b", p=1)])
        assert out.flag is not None

    def test_single_draw_average_is_exact(self):
        one = self.bf(42.0)
        out = average_bf([one])
        assert out.log10_bf == pytest.approx(one.log10_bf)


class TestScaleHelpers:
    def test_hwe_second_moment(self):
        p = 0.8
        # E[S^2] = 2p(1-p) + 4p^2
        assert hwe_second_moment(p) == pytest.approx(2 * p * (1 - p) + 4 * p * p)

    def test_spec_from_ancestry_matches_gram_inverse(self, rng):
        s = sample_ancestry_hwe([0.7, 0.9], 400, rng)
        spec = spec_from_ancestry(s, tau=0.1, sigma2=1.0)
        gram = s.astype(float).T @ s.astype(float)
        assert np.allclose(spec.scale, np.linalg.inv(gram))
        assert spec.n_subjects == 400
