"""Pure-numpy reference implementation of the block kernels.

``derivs_from_mu`` mirrors the compiled kernel formula for formula (the
dispatcher in ``__init__`` selects whichever is available); the mean
inversion and the deviance sums are numpy-only, where vectorized
transcendentals (exp, expit, xlogy) already win. Canonical family/link
pairs use the algebraically simplified forms, both for speed and to dodge
0 * inf at extreme linear predictors.
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit, xlogy

GAUSSIAN, GAMMA, INV_GAUSSIAN, POISSON, BERNOULLI, NEG_BINOMIAL = range(6)
IDENTITY, LOG, LOGIT, INVERSE, INVERSE_SQUARED = range(5)

_BERNOULLI_EPS = 1e-10


def mean_of_eta(lcode, eta):
    if lcode == IDENTITY:
        return np.array(eta, dtype=float, copy=True)
    if lcode == LOG:
        return np.exp(eta)
    if lcode == LOGIT:
        return expit(eta)
    if lcode == INVERSE:
        return 1.0 / eta
    if lcode == INVERSE_SQUARED:
        return 1.0 / np.sqrt(eta)
    raise ValueError(f"unknown link code {lcode}")


def _variance(fcode, mu, alpha):
    if fcode == GAUSSIAN:
        return np.ones_like(mu)
    if fcode == GAMMA:
        return mu * mu
    if fcode == INV_GAUSSIAN:
        return mu * mu * mu
    if fcode == POISSON:
        return mu
    if fcode == BERNOULLI:
        return mu * (1.0 - mu)
    if fcode == NEG_BINOMIAL:
        return mu * (1.0 + mu / alpha)
    raise ValueError(f"unknown family code {fcode}")


def _link_deriv1(lcode, mu):
    if lcode == IDENTITY:
        return np.ones_like(mu)
    if lcode == LOG:
        return 1.0 / mu
    if lcode == LOGIT:
        return 1.0 / (mu * (1.0 - mu))
    if lcode == INVERSE:
        return -1.0 / (mu * mu)
    if lcode == INVERSE_SQUARED:
        return -2.0 / (mu * mu * mu)
    raise ValueError(f"unknown link code {lcode}")


def derivs_from_mu(fcode, lcode, y, mu, w, phi, alpha):
    """(dotd, ddotd_fisher) from precomputed means.

    dotd = -w (y - mu) / (phi nu g'), ddotd = w / (phi nu g'^2).
    """
    r = y - mu
    if fcode == POISSON and lcode == LOG:
        return -w * r / phi, w * mu / phi
    if fcode == BERNOULLI and lcode == LOGIT:
        return -w * r / phi, w * mu * (1.0 - mu) / phi
    if fcode == GAUSSIAN and lcode == IDENTITY:
        return -w * r / phi, w / phi * np.ones_like(mu)
    if fcode == GAMMA and lcode == INVERSE:
        # nu g' = -1, nu g'^2 = 1 / mu^2
        return w * r / phi, w * mu * mu / phi
    if fcode == INV_GAUSSIAN and lcode == INVERSE_SQUARED:
        # nu g' = -2, nu g'^2 = 4 / mu^3
        return w * r / (2.0 * phi), w * mu * mu * mu / (4.0 * phi)
    if fcode == NEG_BINOMIAL and lcode == LOG:
        denom = 1.0 + mu / alpha
        return -w * r / (phi * denom), w * mu / (phi * denom)
    nu = _variance(fcode, mu, alpha)
    g1 = _link_deriv1(lcode, mu)
    return -w * r / (phi * nu * g1), w / (phi * nu * g1 * g1)


def deviance_from_mu(fcode, y, mu, w, alpha):
    """Sum of weighted unit deviances at precomputed means."""
    if fcode == GAUSSIAN:
        dev = (y - mu) ** 2
    elif fcode == GAMMA:
        dev = 2.0 * ((y - mu) / mu - np.log(y / mu))
    elif fcode == INV_GAUSSIAN:
        dev = (y - mu) ** 2 / (y * mu * mu)
    elif fcode == POISSON:
        dev = 2.0 * (xlogy(y, y / mu) - (y - mu))
    elif fcode == BERNOULLI:
        mu = np.clip(mu, _BERNOULLI_EPS, 1.0 - _BERNOULLI_EPS)
        dev = 2.0 * (xlogy(y, y / mu) + xlogy(1.0 - y, (1.0 - y) / (1.0 - mu)))
    elif fcode == NEG_BINOMIAL:
        dev = 2.0 * (xlogy(y, y / mu) - (y + alpha) * np.log1p((y - mu) / (mu + alpha)))
    else:
        raise ValueError(f"unknown family code {fcode}")
    return float(np.sum(w * dev))
