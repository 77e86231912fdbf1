"""Exponential-dispersion families and link functions.

Each family exposes the variance function ``nu(mu)``, its derivative, the
unit deviance ``D(y, mu)`` and a sampler. Links expose ``eval``, ``inverse``
and the first two derivatives. On top of those, :func:`dot_d` and
:func:`ddot_d` give the per-entry first and second derivatives of the
negative log-likelihood with respect to the linear predictor, the quantities
every optimizer in this package consumes.

Sign convention: ``dot_d`` is the derivative of the per-entry NEGATIVE
log-likelihood, dot_d = -w (y - mu) / (phi nu(mu) g'(mu)), so that descending
it minimizes the penalized objective of :mod:`gmfkit.model`.
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit, xlogy

from .exceptions import DomainError

__all__ = [
    "FamilySpec",
    "Gaussian",
    "Gamma",
    "InverseGaussian",
    "Poisson",
    "Bernoulli",
    "NegBinomial",
    "LinkSpec",
    "Identity",
    "Log",
    "Logit",
    "Inverse",
    "InverseSquared",
    "family",
    "link",
    "canonical_link",
    "dot_d",
    "ddot_d",
]

# Bernoulli means are clamped to this open interval inside deviance
# evaluation only; parameters/states are never clamped.
_BERNOULLI_EPS = 1e-10


def _first_offender(arr, ok):
    bad = np.argwhere(~ok)
    if bad.size == 0:
        return None
    idx = tuple(bad[0])
    return np.asarray(arr)[idx]


def _check(name, arr, ok):
    ok = np.asarray(ok)
    if not ok.all():
        val = _first_offender(arr, ok)
        raise DomainError(f"{name}: value {val!r} outside the valid domain")


# ---------------------------------------------------------------------------
# Links
# ---------------------------------------------------------------------------


class LinkSpec:
    """Base class for link functions g(mu) = eta."""

    kind: str = "base"

    def check_mu(self, mu) -> None:
        raise NotImplementedError

    def eval(self, mu):
        raise NotImplementedError

    def inverse(self, eta):
        raise NotImplementedError

    def deriv1(self, mu):
        """g'(mu)."""
        raise NotImplementedError

    def deriv2(self, mu):
        """g''(mu)."""
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}()"

    def __eq__(self, other):
        return type(self) is type(other)

    def __hash__(self):
        return hash(type(self))


class Identity(LinkSpec):
    kind = "identity"

    def check_mu(self, mu):
        _check("identity link", mu, np.isfinite(mu))

    def eval(self, mu):
        return np.asarray(mu, dtype=float)

    def inverse(self, eta):
        return np.asarray(eta, dtype=float)

    def deriv1(self, mu):
        return np.ones_like(np.asarray(mu, dtype=float))

    def deriv2(self, mu):
        return np.zeros_like(np.asarray(mu, dtype=float))


class Log(LinkSpec):
    kind = "log"

    def check_mu(self, mu):
        _check("log link", mu, np.asarray(mu) > 0)

    def eval(self, mu):
        self.check_mu(mu)
        return np.log(mu)

    def inverse(self, eta):
        return np.exp(eta)

    def deriv1(self, mu):
        self.check_mu(mu)
        return 1.0 / np.asarray(mu, dtype=float)

    def deriv2(self, mu):
        self.check_mu(mu)
        return -1.0 / np.asarray(mu, dtype=float) ** 2


class Logit(LinkSpec):
    kind = "logit"

    def check_mu(self, mu):
        mu = np.asarray(mu)
        _check("logit link", mu, (mu > 0) & (mu < 1))

    def eval(self, mu):
        self.check_mu(mu)
        mu = np.asarray(mu, dtype=float)
        return np.log(mu / (1.0 - mu))

    def inverse(self, eta):
        return expit(eta)

    def deriv1(self, mu):
        self.check_mu(mu)
        mu = np.asarray(mu, dtype=float)
        return 1.0 / (mu * (1.0 - mu))

    def deriv2(self, mu):
        self.check_mu(mu)
        mu = np.asarray(mu, dtype=float)
        return (2.0 * mu - 1.0) / (mu * (1.0 - mu)) ** 2


class Inverse(LinkSpec):
    kind = "inverse"

    def check_mu(self, mu):
        _check("inverse link", mu, np.asarray(mu) > 0)

    def eval(self, mu):
        self.check_mu(mu)
        return 1.0 / np.asarray(mu, dtype=float)

    def inverse(self, eta):
        _check("inverse link", eta, np.asarray(eta) != 0)
        return 1.0 / np.asarray(eta, dtype=float)

    def deriv1(self, mu):
        self.check_mu(mu)
        return -1.0 / np.asarray(mu, dtype=float) ** 2

    def deriv2(self, mu):
        self.check_mu(mu)
        return 2.0 / np.asarray(mu, dtype=float) ** 3


class InverseSquared(LinkSpec):
    kind = "inverse_squared"

    def check_mu(self, mu):
        _check("inverse-squared link", mu, np.asarray(mu) > 0)

    def eval(self, mu):
        self.check_mu(mu)
        return 1.0 / np.asarray(mu, dtype=float) ** 2

    def inverse(self, eta):
        _check("inverse-squared link", eta, np.asarray(eta) > 0)
        return 1.0 / np.sqrt(eta)

    def deriv1(self, mu):
        self.check_mu(mu)
        return -2.0 / np.asarray(mu, dtype=float) ** 3

    def deriv2(self, mu):
        self.check_mu(mu)
        return 6.0 / np.asarray(mu, dtype=float) ** 4


# ---------------------------------------------------------------------------
# Families
# ---------------------------------------------------------------------------


class FamilySpec:
    """Base class for exponential-dispersion families.

    Subclasses define the mean domain, the response support, the variance
    function and the unit deviance. ``has_free_dispersion`` marks families
    whose dispersion phi is estimated rather than fixed at 1.
    """

    kind: str = "base"
    has_free_dispersion: bool = False

    def check_mu(self, mu) -> None:
        raise NotImplementedError

    def check_y(self, y) -> None:
        raise NotImplementedError

    def variance(self, mu):
        """Variance function nu(mu)."""
        raise NotImplementedError

    def dvariance(self, mu):
        """nu'(mu)."""
        raise NotImplementedError

    def unit_deviance(self, y, mu, w=1.0):
        """Weighted unit deviance D(y, mu) = 2 w (rescaled deviance)."""
        self.check_y(y)
        self.check_mu(mu)
        w = np.asarray(w, dtype=float)
        _check(f"{self.kind} weight", w, w > 0)
        return w * self._dev0(np.asarray(y, dtype=float), np.asarray(mu, dtype=float))

    def _dev0(self, y, mu):
        raise NotImplementedError

    def sample(self, mu, phi=1.0, w=1.0, rng=None):
        """Draw responses with mean ``mu`` and dispersion ``phi / w``."""
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}()"

    def __eq__(self, other):
        return type(self) is type(other)

    def __hash__(self):
        return hash(type(self))


class Gaussian(FamilySpec):
    kind = "gaussian"
    has_free_dispersion = True

    def check_mu(self, mu):
        _check("gaussian mean", mu, np.isfinite(mu))

    def check_y(self, y):
        _check("gaussian response", y, np.isfinite(y))

    def variance(self, mu):
        self.check_mu(mu)
        return np.ones_like(np.asarray(mu, dtype=float))

    def dvariance(self, mu):
        return np.zeros_like(np.asarray(mu, dtype=float))

    def _dev0(self, y, mu):
        return (y - mu) ** 2

    def sample(self, mu, phi=1.0, w=1.0, rng=None):
        rng = np.random.default_rng() if rng is None else rng
        return rng.normal(mu, np.sqrt(phi / np.asarray(w, dtype=float)))


class Gamma(FamilySpec):
    kind = "gamma"
    has_free_dispersion = True

    def check_mu(self, mu):
        _check("gamma mean", mu, np.asarray(mu) > 0)

    def check_y(self, y):
        _check("gamma response", y, np.asarray(y) > 0)

    def variance(self, mu):
        self.check_mu(mu)
        return np.asarray(mu, dtype=float) ** 2

    def dvariance(self, mu):
        return 2.0 * np.asarray(mu, dtype=float)

    def _dev0(self, y, mu):
        return 2.0 * ((y - mu) / mu - np.log(y / mu))

    def sample(self, mu, phi=1.0, w=1.0, rng=None):
        rng = np.random.default_rng() if rng is None else rng
        shape = np.asarray(w, dtype=float) / phi
        return rng.gamma(shape, np.asarray(mu, dtype=float) / shape)


class InverseGaussian(FamilySpec):
    kind = "inverse_gaussian"
    has_free_dispersion = True

    def check_mu(self, mu):
        _check("inverse-gaussian mean", mu, np.asarray(mu) > 0)

    def check_y(self, y):
        _check("inverse-gaussian response", y, np.asarray(y) > 0)

    def variance(self, mu):
        self.check_mu(mu)
        return np.asarray(mu, dtype=float) ** 3

    def dvariance(self, mu):
        return 3.0 * np.asarray(mu, dtype=float) ** 2

    def _dev0(self, y, mu):
        return (y - mu) ** 2 / (y * mu**2)

    def sample(self, mu, phi=1.0, w=1.0, rng=None):
        # Var = phi mu^3 / w  =>  Wald scale parameter w / phi.
        rng = np.random.default_rng() if rng is None else rng
        mu = np.asarray(mu, dtype=float)
        lam = np.asarray(w, dtype=float) / phi
        return rng.wald(mu, lam * np.ones_like(mu))


class Poisson(FamilySpec):
    kind = "poisson"

    def check_mu(self, mu):
        _check("poisson mean", mu, np.asarray(mu) > 0)

    def check_y(self, y):
        _check("poisson response", y, np.asarray(y) >= 0)

    def variance(self, mu):
        self.check_mu(mu)
        return np.asarray(mu, dtype=float)

    def dvariance(self, mu):
        return np.ones_like(np.asarray(mu, dtype=float))

    def _dev0(self, y, mu):
        return 2.0 * (xlogy(y, y / mu) - (y - mu))

    def sample(self, mu, phi=1.0, w=1.0, rng=None):
        rng = np.random.default_rng() if rng is None else rng
        return rng.poisson(mu).astype(float)


class Bernoulli(FamilySpec):
    kind = "bernoulli"

    def check_mu(self, mu):
        mu = np.asarray(mu)
        _check("bernoulli mean", mu, (mu > 0) & (mu < 1))

    def check_y(self, y):
        y = np.asarray(y)
        _check("bernoulli response", y, (y >= 0) & (y <= 1))

    def variance(self, mu):
        self.check_mu(mu)
        mu = np.asarray(mu, dtype=float)
        return mu * (1.0 - mu)

    def dvariance(self, mu):
        return 1.0 - 2.0 * np.asarray(mu, dtype=float)

    def _dev0(self, y, mu):
        mu = np.clip(mu, _BERNOULLI_EPS, 1.0 - _BERNOULLI_EPS)
        return 2.0 * (xlogy(y, y / mu) + xlogy(1.0 - y, (1.0 - y) / (1.0 - mu)))

    def sample(self, mu, phi=1.0, w=1.0, rng=None):
        rng = np.random.default_rng() if rng is None else rng
        return rng.binomial(1, mu).astype(float)


class NegBinomial(FamilySpec):
    """Negative Binomial with shape ``nb_shape`` (alpha); Var = mu (1 + mu/alpha)."""

    kind = "neg_binomial"

    def __init__(self, nb_shape: float):
        if not np.isfinite(nb_shape) or nb_shape <= 0:
            raise DomainError(f"neg_binomial shape must be positive, got {nb_shape!r}")
        self.nb_shape = float(nb_shape)

    def check_mu(self, mu):
        _check("neg_binomial mean", mu, np.asarray(mu) > 0)

    def check_y(self, y):
        _check("neg_binomial response", y, np.asarray(y) >= 0)

    def variance(self, mu):
        self.check_mu(mu)
        mu = np.asarray(mu, dtype=float)
        return mu * (1.0 + mu / self.nb_shape)

    def dvariance(self, mu):
        return 1.0 + 2.0 * np.asarray(mu, dtype=float) / self.nb_shape

    def _dev0(self, y, mu):
        a = self.nb_shape
        # log((y+a)/(mu+a)) via log1p for accuracy in the large-alpha limit
        return 2.0 * (xlogy(y, y / mu) - (y + a) * np.log1p((y - mu) / (mu + a)))

    def sample(self, mu, phi=1.0, w=1.0, rng=None):
        # Gamma-Poisson mixture: u ~ Gamma(alpha, 1/alpha), y ~ Poisson(mu u).
        rng = np.random.default_rng() if rng is None else rng
        a = self.nb_shape
        u = rng.gamma(a, 1.0 / a, size=np.shape(mu))
        return rng.poisson(np.asarray(mu) * u).astype(float)

    def __repr__(self):
        return f"NegBinomial(nb_shape={self.nb_shape!r})"

    def __eq__(self, other):
        return type(self) is type(other) and self.nb_shape == other.nb_shape

    def __hash__(self):
        return hash((type(self), self.nb_shape))


# ---------------------------------------------------------------------------
# Constructors and derivative quantities
# ---------------------------------------------------------------------------

_FAMILIES = {
    "gaussian": Gaussian,
    "gamma": Gamma,
    "inverse_gaussian": InverseGaussian,
    "poisson": Poisson,
    "bernoulli": Bernoulli,
    "neg_binomial": NegBinomial,
}

_LINKS = {
    "identity": Identity,
    "log": Log,
    "logit": Logit,
    "inverse": Inverse,
    "inverse_squared": InverseSquared,
}

_CANONICAL = {
    "gaussian": "identity",
    "gamma": "inverse",
    "inverse_gaussian": "inverse_squared",
    "poisson": "log",
    "bernoulli": "logit",
    "neg_binomial": "log",
}


def family(kind: str, nb_shape: float | None = None) -> FamilySpec:
    """Build a family from its name; ``nb_shape`` only applies to neg_binomial."""
    key = kind.lower().replace("-", "_")
    if key not in _FAMILIES:
        raise DomainError(f"unknown family {kind!r}; choose from {sorted(_FAMILIES)}")
    if key == "neg_binomial":
        return NegBinomial(1.0 if nb_shape is None else nb_shape)
    return _FAMILIES[key]()


def link(kind: str) -> LinkSpec:
    key = kind.lower().replace("-", "_")
    if key not in _LINKS:
        raise DomainError(f"unknown link {kind!r}; choose from {sorted(_LINKS)}")
    return _LINKS[key]()


def canonical_link(fam: FamilySpec) -> LinkSpec:
    """The conventional link paired with ``fam`` (log for neg_binomial)."""
    return link(_CANONICAL[fam.kind])


def dot_d(fam: FamilySpec, lnk: LinkSpec, y, mu, w=1.0, phi=1.0):
    """First derivative of the per-entry negative log-likelihood w.r.t. eta.

    dot_d = -w (y - mu) / (phi nu(mu) g'(mu)); zero exactly at y = mu.
    """
    fam.check_y(y)
    if phi <= 0:
        raise DomainError(f"dispersion must be positive, got {phi!r}")
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    return -np.asarray(w, dtype=float) * (y - mu) / (phi * fam.variance(mu) * lnk.deriv1(mu))


def ddot_d(fam: FamilySpec, lnk: LinkSpec, y, mu, w=1.0, phi=1.0, form: str = "fisher"):
    """Second derivative of the per-entry negative log-likelihood w.r.t. eta.

    The Fisher form w / (phi nu(mu) g'(mu)^2) is strictly positive; the
    observed form multiplies it by a(mu) = 1 + (y - mu)(nu'/nu + g''/g') and
    may take any sign.
    """
    if phi <= 0:
        raise DomainError(f"dispersion must be positive, got {phi!r}")
    mu = np.asarray(mu, dtype=float)
    g1 = lnk.deriv1(mu)
    base = np.asarray(w, dtype=float) / (phi * fam.variance(mu) * g1**2)
    if form == "fisher":
        return base
    if form == "observed":
        fam.check_y(y)
        y = np.asarray(y, dtype=float)
        a = 1.0 + (y - mu) * (fam.dvariance(mu) / fam.variance(mu) + lnk.deriv2(mu) / g1)
        return base * a
    raise DomainError(f"unknown second-derivative form {form!r}")
