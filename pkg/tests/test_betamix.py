import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from osslab.betamix import (
    BetaMixtureModel, BetaParams, MomentPair, beta_pdf, clamp_scores, fit_reference,
    imm_batch_step, method_of_moments, posterior_id, weighted_moments,
)
from osslab.evaluation import auroc


class TestBetaPdf:
    def test_uniform_density(self, rng):
        p = BetaParams(1.0, 1.0)
        for s in rng.uniform(0.01, 0.99, size=10):
            assert beta_pdf(p, float(s)) == pytest.approx(1.0, abs=1e-12)

    def test_beta22_at_half(self):
        # closed form 6 s (1-s) at s = 0.5
        assert beta_pdf(BetaParams(2.0, 2.0), 0.5) == pytest.approx(1.5, abs=1e-12)

    def test_normalizes_by_quadrature(self, rng):
        for _ in range(20):
            p = BetaParams(*rng.uniform(0.1, 50.0, size=2))
            total, _ = integrate.quad(lambda s: beta_pdf(p, s), 0.0, 1.0,
                                      limit=200)
            assert total == pytest.approx(1.0, abs=1e-6)

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            beta_pdf(BetaParams(2.0, 2.0), 0.0)
        with pytest.raises(ValueError):
            beta_pdf(BetaParams(2.0, 2.0), 1.0)

    def test_rejects_nonpositive_params(self):
        with pytest.raises(ValueError):
            BetaParams(0.0, 1.0)
        with pytest.raises(ValueError):
            BetaParams(1.0, -2.0)


class TestWeightedMoments:
    def test_equal_weights_are_plain_moments(self, rng):
        s = rng.uniform(0.1, 0.9, size=20)
        m = weighted_moments(s, np.ones(20))
        assert m.mean == pytest.approx(s.mean())
        assert m.variance == pytest.approx(s.var())

    def test_hand_worked_pair(self):
        m = weighted_moments(np.array([0.2, 0.8]), np.array([1.0, 1.0]))
        assert m.mean == pytest.approx(0.5)
        assert m.variance == pytest.approx(0.09)

    def test_zero_weight_ignores_sample(self, rng):
        s = rng.uniform(0.1, 0.9, size=5)
        w = np.array([1.0, 1.0, 0.0, 1.0, 1.0])
        m = weighted_moments(s, w)
        keep = np.delete(s, 2)
        assert m.mean == pytest.approx(keep.mean())

    def test_zero_total_weight_raises(self):
        with pytest.raises(ValueError):
            weighted_moments(np.array([0.5]), np.array([0.0]))


class TestMethodOfMoments:
    def test_uniform_moments_give_beta11(self):
        p = method_of_moments(MomentPair(mean=0.5, variance=1.0 / 12.0))
        assert p.alpha == pytest.approx(1.0, abs=1e-12)
        assert p.beta == pytest.approx(1.0, abs=1e-12)

    def test_known_case(self):
        p = method_of_moments(MomentPair(mean=0.8, variance=0.01))
        assert p.alpha == pytest.approx(12.0, abs=1e-9)
        assert p.beta == pytest.approx(3.0, abs=1e-9)

    def test_overdispersed_clamps_preserving_mean(self):
        p = method_of_moments(MomentPair(mean=0.5, variance=0.3))
        assert p.mean == pytest.approx(0.5)
        assert min(p.alpha, p.beta) == pytest.approx(1e-2)

    def test_zero_variance_caps_preserving_mean(self):
        p = method_of_moments(MomentPair(mean=0.9, variance=0.0))
        assert p.mean == pytest.approx(0.9, abs=1e-9)
        assert max(p.alpha, p.beta) == pytest.approx(1e6)

    @given(st.floats(0.1, 50.0), st.floats(0.1, 50.0))
    @settings(max_examples=100, deadline=None)
    def test_roundtrip_from_true_moments(self, alpha, beta):
        true = BetaParams(alpha, beta)
        fit = method_of_moments(MomentPair(mean=true.mean, variance=true.variance))
        assert fit.alpha == pytest.approx(alpha, rel=1e-9, abs=1e-9)
        assert fit.beta == pytest.approx(beta, rel=1e-9, abs=1e-9)


class TestPosterior:
    def model(self, **kw):
        base = dict(id=BetaParams(10.0, 2.0), ood=BetaParams(2.0, 10.0), pi=0.5)
        base.update(kw)
        return BetaMixtureModel(**base)

    def test_symmetric_mixture_gives_half(self):
        m = self.model(id=BetaParams(3.0, 3.0), ood=BetaParams(3.0, 3.0))
        assert posterior_id(m, 0.37) == pytest.approx(0.5, abs=1e-12)

    def test_direct_substitution(self):
        # pi p_id / (pi p_id + (1-pi) p_ood) with densities 2 and 1
        m = self.model(id=BetaParams(2.0, 1.0), ood=BetaParams(1.0, 1.0))
        s = 1.0 - 1e-12  # p_id(s) = 2s -> 2, p_ood = 1
        assert posterior_id(m, 0.9999999) == pytest.approx(2.0 / 3.0, abs=1e-6)

    def test_epsilon_suppresses_posterior(self):
        m = self.model(epsilon=1e12)
        assert posterior_id(m, 0.8, regularized=True) < 1e-9

    def test_epsilon_ignored_when_not_regularized(self):
        a = posterior_id(self.model(epsilon=0.0), 0.8)
        b = posterior_id(self.model(epsilon=5.0), 0.8)
        assert a == b

    def test_bounds_on_grid(self):
        m = self.model()
        s = clamp_scores(np.linspace(0.0, 1.0, 1001))
        p = posterior_id(m, s)
        assert np.all((p >= 0.0) & (p <= 1.0))

    def test_monotone_when_id_dominates(self):
        # monotone likelihood ratio: alpha_id >= alpha_ood, beta_id <= beta_ood
        m = self.model(id=BetaParams(10.0, 2.0), ood=BetaParams(2.0, 10.0))
        s = clamp_scores(np.linspace(0.0, 1.0, 1001))
        p = np.asarray(posterior_id(m, s))
        assert np.all(np.diff(p) >= -1e-12)


class TestImmBatchStep:
    def test_lambda_one_freezes_model(self, rng):
        m = BetaMixtureModel.default_init(0.5, lambda_ema=1.0)
        out = imm_batch_step(m, rng.uniform(0.1, 0.9, 64), rng.uniform(0.5, 0.9, 16))
        assert (out.id, out.ood) == (m.id, m.ood)

    def test_lambda_zero_separated_matches_per_component_mom(self, rng):
        # construct a model under which posteriors are numerically 0 or 1
        m = BetaMixtureModel(id=BetaParams(400.0, 5.0), ood=BetaParams(5.0, 400.0),
                             pi=0.5, lambda_ema=0.0)
        hi = rng.uniform(0.93, 0.97, size=40)   # posterior ~ 1
        lo = rng.uniform(0.03, 0.07, size=40)   # posterior ~ 0
        lab = rng.uniform(0.94, 0.96, size=10)
        unl = np.concatenate([hi, lo])
        out = imm_batch_step(m, unl, lab)
        id_ref = method_of_moments(
            weighted_moments(np.concatenate([lab, hi]), np.ones(50)))
        ood_ref = method_of_moments(weighted_moments(lo, np.ones(40)))
        assert out.id.alpha == pytest.approx(id_ref.alpha, rel=1e-9)
        assert out.ood.beta == pytest.approx(ood_ref.beta, rel=1e-9)

    def test_replay_converges_to_lambda0_fixed_point(self, rng):
        unl = clamp_scores(np.concatenate([rng.beta(8, 2, size=50),
                                           rng.beta(2, 8, size=50)]))
        lab = clamp_scores(rng.beta(8, 2, size=20))
        # lambda = 0 fixed point by plain iteration on the same batch
        ref = BetaMixtureModel.default_init(0.5, lambda_ema=0.0)
        for _ in range(2000):
            ref = imm_batch_step(ref, unl, lab)
        m = BetaMixtureModel.default_init(0.5, lambda_ema=0.9)
        for _ in range(20000):
            m = imm_batch_step(m, unl, lab)
        for a, b in ((m.id.alpha, ref.id.alpha), (m.id.beta, ref.id.beta),
                     (m.ood.alpha, ref.ood.alpha), (m.ood.beta, ref.ood.beta)):
            assert a == pytest.approx(b, abs=1e-6)

    def test_degenerate_component_skipped(self):
        m = BetaMixtureModel(id=BetaParams(400.0, 5.0), ood=BetaParams(5.0, 400.0),
                             pi=0.5, lambda_ema=0.0)
        hi = np.linspace(0.9, 0.99, 30)  # no OOD mass at all
        out = imm_batch_step(m, hi, np.array([0.95, 0.96]))
        assert out.ood == m.ood
        assert out.id != m.id

    def test_epsilon_never_touches_imm(self, rng):
        unl = rng.uniform(0.1, 0.9, size=60)
        lab = rng.uniform(0.6, 0.95, size=12)
        runs = []
        for eps in (0.0, 0.1, 7.0):
            m = BetaMixtureModel.default_init(0.5, epsilon=eps, lambda_ema=0.9)
            for _ in range(25):
                m = imm_batch_step(m, unl, lab)
            runs.append((m.id.alpha, m.id.beta, m.ood.alpha, m.ood.beta))
        assert runs[0] == runs[1] == runs[2]

    def test_full_batch_lambda0_equals_one_reference_iteration(self, rng):
        unl = clamp_scores(rng.beta(6, 2, size=200))
        lab = clamp_scores(rng.beta(6, 2, size=40))
        init = BetaMixtureModel.default_init(0.5, lambda_ema=0.0)
        stepped = imm_batch_step(init, unl, lab)
        ref = fit_reference(unl, lab, pi=0.5, max_iters=1, tol=0.0, init=init)
        assert (stepped.id, stepped.ood) == (ref.id, ref.ood)


class TestFitReference:
    def test_mixture_recovery_near_bayes_auroc(self, rng):
        n = 5000
        labels = rng.random(n) < 0.5
        s = np.where(labels, rng.beta(10, 2, size=n), rng.beta(2, 10, size=n))
        model = fit_reference(s, np.array([]), pi=0.5)
        # held-out draws with known component labels
        m_test = 20000
        t_labels = rng.random(m_test) < 0.5
        t = np.where(t_labels, rng.beta(10, 2, size=m_test),
                     rng.beta(2, 10, size=m_test))
        t = clamp_scores(t)
        fitted_post = np.asarray(posterior_id(model, t))
        bayes_post = np.asarray(posterior_id(
            BetaMixtureModel(BetaParams(10, 2), BetaParams(2, 10), pi=0.5), t))
        fitted_auroc = auroc(fitted_post[t_labels], fitted_post[~t_labels])
        bayes_auroc = auroc(bayes_post[t_labels], bayes_post[~t_labels])
        assert abs(fitted_auroc - bayes_auroc) <= 0.02

    def test_identical_scores_no_crash(self):
        model = fit_reference(np.full(50, 0.5), np.array([]), pi=0.5)
        assert np.isfinite(model.id.alpha) and np.isfinite(model.ood.alpha)

    def test_single_component_mean_recovered(self, rng):
        s = rng.beta(8, 2, size=4000)
        model = fit_reference(s, np.array([]), pi=0.99)
        assert model.id.mean == pytest.approx(0.8, abs=0.05)

    def test_too_few_scores_rejected(self):
        with pytest.raises(ValueError):
            fit_reference(np.array([0.5] * 5), np.array([]), pi=0.5)
