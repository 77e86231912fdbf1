import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import gmfkit as gk
from gmfkit.exceptions import DomainError

from conftest import CANONICAL_PAIRS, EXTRA_PAIRS, pair_id, random_mean, random_response


class TestVariance:
    def test_poisson(self):
        assert gk.Poisson().variance(2.0) == 2.0

    def test_gaussian_any_mean(self):
        assert gk.Gaussian().variance(-7.0) == 1.0

    def test_negbinomial(self):
        assert gk.NegBinomial(2.0).variance(2.0) == pytest.approx(4.0)

    def test_domain_violation_names_family(self):
        with pytest.raises(DomainError, match="poisson"):
            gk.Poisson().variance(-1.0)
        with pytest.raises(DomainError, match="bernoulli"):
            gk.Bernoulli().variance(1.5)

    @pytest.mark.parametrize("pair", CANONICAL_PAIRS, ids=pair_id)
    def test_positive_on_domain(self, pair, rng):
        fam, _ = pair
        mu = random_mean(fam, rng, 200)
        assert (fam.variance(mu) > 0).all()


class TestUnitDeviance:
    def test_poisson_zero_at_fit(self):
        assert gk.Poisson().unit_deviance(3.0, 3.0) == 0.0

    def test_poisson_limit_at_zero(self):
        assert gk.Poisson().unit_deviance(0.0, 1.5) == pytest.approx(3.0)

    def test_poisson_value(self):
        expect = 2 * (2 * np.log(2) - 1)
        assert gk.Poisson().unit_deviance(2.0, 1.0) == pytest.approx(expect, rel=1e-12)

    def test_bernoulli_value(self):
        assert gk.Bernoulli().unit_deviance(1.0, 0.5) == pytest.approx(2 * np.log(2))

    def test_weight_scales(self):
        fam = gk.Gamma()
        assert fam.unit_deviance(2.0, 1.0, w=3.0) == pytest.approx(
            3 * fam.unit_deviance(2.0, 1.0)
        )

    @pytest.mark.parametrize("pair", CANONICAL_PAIRS, ids=pair_id)
    def test_nonnegative_zero_iff_equal(self, pair, rng):
        fam, _ = pair
        mu = random_mean(fam, rng, 300)
        y = random_response(fam, rng, mu)
        dev = fam.unit_deviance(y, mu)
        assert (dev >= 0).all()
        interior = (np.abs(y - mu) > 1e-12)
        assert (dev[interior] > 0).all()
        assert fam.unit_deviance(mu, mu).max() < 1e-12

    def test_deviance_is_neg2_loglik_ratio(self, rng):
        # D(y, mu) = -2 [log f(y; mu) - log f(y; y)] for the phi = 1 families
        from scipy import stats

        y = np.arange(0.0, 8.0)
        mu = np.full_like(y, 2.5)
        pois = gk.Poisson()
        expect = -2 * (stats.poisson.logpmf(y, mu) - stats.poisson.logpmf(y, np.maximum(y, 1e-300)))
        # the saturated Poisson likelihood at y = 0 is 1
        expect[0] = -2 * stats.poisson.logpmf(0.0, mu[0])
        assert np.allclose(pois.unit_deviance(y, mu), expect, rtol=1e-10)

        a = 2.0
        nb = gk.NegBinomial(a)
        y = np.arange(1.0, 9.0)
        mu = np.full_like(y, 3.0)
        logf = stats.nbinom.logpmf(y, a, a / (a + mu))
        logf_sat = stats.nbinom.logpmf(y, a, a / (a + y))
        assert np.allclose(nb.unit_deviance(y, mu), -2 * (logf - logf_sat), rtol=1e-10)

    def test_nb_to_poisson_limit(self):
        y, mu = np.meshgrid(np.linspace(0.1, 50, 25), np.linspace(0.1, 50, 25))
        pois = gk.Poisson().unit_deviance(y, mu)
        nb = gk.NegBinomial(1e8).unit_deviance(y, mu)
        gap = np.abs(nb - pois)
        # exact first-order gap is (y - mu)^2 / (mu + alpha)
        assert gap.max() < (y - mu).max() ** 2 / 1e8 + 1e-9
        tight = (y <= 20) & (mu <= 20)
        assert gap[tight].max() < 1e-5


class TestLinks:
    def test_log_deriv(self):
        assert gk.Log().deriv1(4.0) == 0.25

    def test_identity_second_deriv(self):
        assert gk.Identity().deriv2(17.3) == 0.0

    def test_logit_inverse_at_zero(self):
        assert gk.Logit().inverse(0.0) == 0.5

    @pytest.mark.parametrize("lnk", [gk.Identity(), gk.Log(), gk.Logit(),
                                     gk.Inverse(), gk.InverseSquared()],
                             ids=lambda l: l.kind)
    def test_inverse_roundtrip(self, lnk, rng):
        mu = rng.uniform(0.05, 0.95, 100) if lnk.kind == "logit" else rng.uniform(0.1, 8.0, 100)
        back = lnk.inverse(lnk.eval(mu))
        assert np.allclose(back, mu, rtol=1e-12)

    @pytest.mark.parametrize("lnk", [gk.Log(), gk.Logit(), gk.Inverse(),
                                     gk.InverseSquared()], ids=lambda l: l.kind)
    def test_derivatives_match_finite_differences(self, lnk, rng):
        mu = rng.uniform(0.1, 0.9, 50) if lnk.kind == "logit" else rng.uniform(0.3, 5.0, 50)
        h = 1e-6 * (1 + np.abs(mu))
        fd1 = (lnk.eval(mu + h) - lnk.eval(mu - h)) / (2 * h)
        fd2 = (lnk.deriv1(mu + h) - lnk.deriv1(mu - h)) / (2 * h)
        assert np.allclose(lnk.deriv1(mu), fd1, rtol=1e-5)
        assert np.allclose(lnk.deriv2(mu), fd2, rtol=1e-5)

    def test_domain_errors(self):
        with pytest.raises(DomainError):
            gk.Log().eval(-1.0)
        with pytest.raises(DomainError):
            gk.InverseSquared().inverse(-2.0)


def _neg_loglik_eta(fam, lnk, y, eta, w, phi):
    """-w log f as a function of eta, up to terms constant in eta."""
    mu = lnk.inverse(eta)
    return fam.unit_deviance(y, mu, w) / (2 * phi)


class TestDotD:
    def test_poisson_canonical_magnitude(self):
        # |dot_d| = |y - mu| for canonical Poisson; negative log-likelihood
        # convention makes the sign opposite to (y - mu)
        val = gk.dot_d(gk.Poisson(), gk.Log(), 3.0, 1.0)
        assert val == pytest.approx(-2.0)

    def test_zero_at_fit(self):
        for fam, lnk in CANONICAL_PAIRS:
            mu = 0.4 if fam.kind == "bernoulli" else 2.0
            assert gk.dot_d(fam, lnk, mu, mu) == 0.0

    def test_gaussian_weighted(self):
        val = gk.dot_d(gk.Gaussian(), gk.Identity(), 5.0, 2.0, w=2.0)
        assert val == pytest.approx(-6.0)

    @pytest.mark.parametrize("pair", CANONICAL_PAIRS + EXTRA_PAIRS, ids=pair_id)
    def test_matches_objective_derivative(self, pair, rng):
        fam, lnk = pair
        mu = random_mean(fam, rng, 40)
        if fam.kind == "gaussian" and lnk.kind == "log":
            mu = np.abs(mu) + 0.2
        y = random_response(fam, rng, mu)
        w = rng.uniform(0.5, 2.0, mu.shape)
        phi = 1.7 if fam.has_free_dispersion else 1.0
        eta = lnk.eval(mu)
        h = 1e-5
        fd = (_neg_loglik_eta(fam, lnk, y, eta + h, w, phi)
              - _neg_loglik_eta(fam, lnk, y, eta - h, w, phi)) / (2 * h)
        an = gk.dot_d(fam, lnk, y, mu, w, phi)
        assert np.allclose(an, fd, rtol=1e-5, atol=1e-7)


class TestDdotD:
    def test_poisson_fisher(self):
        assert gk.ddot_d(gk.Poisson(), gk.Log(), 0.0, 2.0) == pytest.approx(2.0)

    def test_poisson_observed_equals_fisher(self):
        f = gk.ddot_d(gk.Poisson(), gk.Log(), 7.0, 2.0, form="fisher")
        o = gk.ddot_d(gk.Poisson(), gk.Log(), 7.0, 2.0, form="observed")
        assert o == pytest.approx(f, abs=1e-12)

    def test_gaussian_weighted(self):
        assert gk.ddot_d(gk.Gaussian(), gk.Identity(), 0.0, 0.0, w=3.0) == 3.0

    @pytest.mark.parametrize("pair", CANONICAL_PAIRS + EXTRA_PAIRS, ids=pair_id)
    def test_fisher_positive(self, pair, rng):
        fam, lnk = pair
        mu = random_mean(fam, rng, 100)
        if fam.kind == "gaussian" and lnk.kind == "log":
            mu = np.abs(mu) + 0.2
        y = random_response(fam, rng, mu)
        assert (gk.ddot_d(fam, lnk, y, mu) > 0).all()

    @pytest.mark.parametrize("pair", CANONICAL_PAIRS[:5], ids=pair_id)
    def test_observed_equals_fisher_at_canonical(self, pair, rng):
        # holds exactly when theta = eta, i.e. for the five strict canonical
        # pairs; the NB log link is conventional, not canonical
        fam, lnk = pair
        mu = random_mean(fam, rng, 100)
        y = random_response(fam, rng, mu)
        f = gk.ddot_d(fam, lnk, y, mu, form="fisher")
        o = gk.ddot_d(fam, lnk, y, mu, form="observed")
        assert np.allclose(o, f, rtol=1e-12, atol=1e-12)

    def test_nb_log_observed_correction(self, rng):
        # for NB with a log link, a(mu) = 1 + (y - mu)/(mu + alpha)
        fam, lnk = gk.NegBinomial(2.0), gk.Log()
        mu = rng.uniform(0.5, 5.0, 50)
        y = random_response(fam, rng, mu)
        f = gk.ddot_d(fam, lnk, y, mu, form="fisher")
        o = gk.ddot_d(fam, lnk, y, mu, form="observed")
        assert np.allclose(o / f, 1 + (y - mu) / (mu + 2.0), rtol=1e-12)

    @pytest.mark.parametrize("pair", CANONICAL_PAIRS + EXTRA_PAIRS, ids=pair_id)
    def test_observed_matches_second_difference(self, pair, rng):
        fam, lnk = pair
        mu = random_mean(fam, rng, 30)
        if fam.kind == "gaussian" and lnk.kind == "log":
            mu = np.abs(mu) + 0.2
        if fam.kind == "bernoulli":
            mu = np.clip(mu, 0.25, 0.75)
        y = random_response(fam, rng, mu)
        w = rng.uniform(0.5, 2.0, mu.shape)
        eta = lnk.eval(mu)
        h = 1e-4
        f0 = _neg_loglik_eta(fam, lnk, y, eta, w, 1.0)
        fp = _neg_loglik_eta(fam, lnk, y, eta + h, w, 1.0)
        fm = _neg_loglik_eta(fam, lnk, y, eta - h, w, 1.0)
        fd2 = (fp - 2 * f0 + fm) / h**2
        an = gk.ddot_d(fam, lnk, y, mu, w, 1.0, form="observed")
        assert np.allclose(an, fd2, rtol=5e-3, atol=1e-5)


@settings(max_examples=80, deadline=None)
@given(y=st.integers(min_value=0, max_value=60),
       mu=st.floats(min_value=0.05, max_value=40.0),
       w=st.floats(min_value=0.1, max_value=5.0))
def test_poisson_deviance_property(y, mu, w):
    dev = gk.Poisson().unit_deviance(float(y), mu, w)
    assert dev >= 0
    assert np.isfinite(dev)


@settings(max_examples=80, deadline=None)
@given(mu=st.floats(min_value=1e-6, max_value=1 - 1e-6))
def test_bernoulli_deviance_finite_on_open_interval(mu):
    fam = gk.Bernoulli()
    assert np.isfinite(fam.unit_deviance(0.0, mu))
    assert np.isfinite(fam.unit_deviance(1.0, mu))


def test_family_constructor():
    assert gk.family("poisson").kind == "poisson"
    assert gk.family("neg_binomial", 3.0).nb_shape == 3.0
    assert gk.canonical_link(gk.Gamma()).kind == "inverse"
    with pytest.raises(DomainError):
        gk.family("tweedie")
    with pytest.raises(DomainError):
        gk.NegBinomial(-1.0)


def test_quasi_dispersion_flags():
    assert gk.Gaussian().has_free_dispersion
    assert not gk.Poisson().has_free_dispersion
