import numpy as np
import pytest

import gmfkit as gk

# family paired with its Table-of-families conventional link
CANONICAL_PAIRS = [
    (gk.Gaussian(), gk.Identity()),
    (gk.Gamma(), gk.Inverse()),
    (gk.InverseGaussian(), gk.InverseSquared()),
    (gk.Poisson(), gk.Log()),
    (gk.Bernoulli(), gk.Logit()),
    (gk.NegBinomial(2.0), gk.Log()),
]

EXTRA_PAIRS = [
    (gk.Gamma(), gk.Log()),
    (gk.InverseGaussian(), gk.Log()),
    (gk.Gaussian(), gk.Log()),
]


def pair_id(pair):
    fam, lnk = pair
    return f"{fam.kind}+{lnk.kind}"


def random_mean(fam, rng, size):
    """Means drawn from the interior of the family's domain."""
    if fam.kind == "bernoulli":
        return rng.uniform(0.15, 0.85, size)
    if fam.kind == "gaussian":
        return rng.normal(0.0, 2.0, size)
    return rng.uniform(0.5, 5.0, size)


def random_response(fam, rng, mu):
    y = fam.sample(mu, phi=1.0, rng=rng)
    if fam.kind in ("gamma", "inverse_gaussian"):
        return np.maximum(y, 1e-3)
    return y


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def small_problem(seed=0, n=6, m=4, d=2, p=1, q=1, family=None, link=None,
                  missing=0.0):
    """Random shape-consistent (data, covs, state, fam, lnk) tuple."""
    rng = np.random.default_rng(seed)
    fam = family or gk.Poisson()
    lnk = link or gk.canonical_link(fam)
    x = np.hstack([np.ones((n, 1)), rng.normal(size=(n, p - 1))]) if p else None
    z = np.hstack([np.ones((m, 1)), rng.normal(size=(m, q - 1))]) if q else None
    covs = gk.CovariateSet(x=x, z=z, n=n, m=m)
    # inverse-type links need a predictor bounded away from zero
    scale = 0.12 if lnk.kind in ("inverse", "inverse_squared") else 0.4
    state = gk.FactorizationState(
        b=rng.normal(0, 0.3 * scale / 0.4, (m, p)),
        gamma=rng.normal(0, 0.3 * scale / 0.4, (n, q)),
        u=rng.normal(0, scale, (n, d)),
        v=rng.normal(0, scale, (m, d)),
        phi=1.0,
        nb_shape=getattr(fam, "nb_shape", 1.0),
    )
    if p:
        if lnk.kind in ("inverse", "inverse_squared"):
            state.b[:, 0] += 2.0
        elif fam.kind == "gaussian":
            state.b[:, 0] += 1.0
        else:
            state.b[:, 0] += 0.5
    eta = gk.linear_predictor(state, covs)
    mu = lnk.inverse(np.clip(eta, 0.5, 6) if lnk.kind in ("inverse", "inverse_squared")
                     else np.clip(eta, -6, 6))
    y = random_response(fam, rng, mu)
    mask = rng.uniform(size=(n, m)) >= missing
    if missing:
        # keep every row and column observed
        mask[:, 0] = True
        mask[0, :] = True
    data = gk.ResponseMatrix(y, mask)
    return data, covs, state, fam, lnk
