# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Fused algebra kernel for the per-block derivative quantities.

Computes dotd and ddotd from the already-inverted mean in one pass with no
temporaries. The mean itself (exp / expit / reciprocal of eta) is computed
by the caller with numpy, whose vectorized transcendentals beat per-entry
libm calls; everything left here is plain arithmetic, which is where fusion
wins. Family/link codes match ``gmfkit.kernels._ref``.
"""
import numpy as np

cimport numpy as cnp

cnp.import_array()

DEF GAUSSIAN = 0
DEF GAMMA = 1
DEF INV_GAUSSIAN = 2
DEF POISSON = 3
DEF BERNOULLI = 4
DEF NEG_BINOMIAL = 5

DEF IDENTITY = 0
DEF LOG = 1
DEF LOGIT = 2
DEF INVERSE = 3
DEF INVERSE_SQUARED = 4


cdef inline double _variance(int fcode, double mu, double alpha) noexcept nogil:
    if fcode == GAUSSIAN:
        return 1.0
    elif fcode == GAMMA:
        return mu * mu
    elif fcode == INV_GAUSSIAN:
        return mu * mu * mu
    elif fcode == POISSON:
        return mu
    elif fcode == BERNOULLI:
        return mu * (1.0 - mu)
    else:
        return mu * (1.0 + mu / alpha)


cdef inline double _link_deriv1(int lcode, double mu) noexcept nogil:
    if lcode == IDENTITY:
        return 1.0
    elif lcode == LOG:
        return 1.0 / mu
    elif lcode == LOGIT:
        return 1.0 / (mu * (1.0 - mu))
    elif lcode == INVERSE:
        return -1.0 / (mu * mu)
    else:
        return -2.0 / (mu * mu * mu)


def derivs_from_mu(int fcode, int lcode,
                   const double[::1] y, const double[::1] mu,
                   const double[::1] w, double phi, double alpha):
    """(dotd, ddotd_fisher) flat arrays from precomputed means."""
    cdef Py_ssize_t n = mu.shape[0]
    dotd_arr = np.empty(n, dtype=np.float64)
    ddotd_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] dotd = dotd_arr
    cdef double[::1] ddotd = ddotd_arr
    cdef Py_ssize_t k
    cdef double m, r, nu, g1, denom
    cdef bint canonical = (
        (fcode == POISSON and lcode == LOG)
        or (fcode == BERNOULLI and lcode == LOGIT)
        or (fcode == GAUSSIAN and lcode == IDENTITY)
        or (fcode == GAMMA and lcode == INVERSE)
        or (fcode == INV_GAUSSIAN and lcode == INVERSE_SQUARED)
        or (fcode == NEG_BINOMIAL and lcode == LOG)
    )

    with nogil:
        if canonical:
            for k in range(n):
                m = mu[k]
                r = y[k] - m
                if fcode == POISSON:
                    dotd[k] = -w[k] * r / phi
                    ddotd[k] = w[k] * m / phi
                elif fcode == BERNOULLI:
                    dotd[k] = -w[k] * r / phi
                    ddotd[k] = w[k] * m * (1.0 - m) / phi
                elif fcode == GAUSSIAN:
                    dotd[k] = -w[k] * r / phi
                    ddotd[k] = w[k] / phi
                elif fcode == GAMMA:
                    # nu g' = -1 and nu g'^2 = 1 / mu^2
                    dotd[k] = w[k] * r / phi
                    ddotd[k] = w[k] * m * m / phi
                elif fcode == INV_GAUSSIAN:
                    # nu g' = -2 and nu g'^2 = 4 / mu^3
                    dotd[k] = w[k] * r / (2.0 * phi)
                    ddotd[k] = w[k] * m * m * m / (4.0 * phi)
                else:
                    denom = 1.0 + m / alpha
                    dotd[k] = -w[k] * r / (phi * denom)
                    ddotd[k] = w[k] * m / (phi * denom)
        else:
            for k in range(n):
                m = mu[k]
                nu = _variance(fcode, m, alpha)
                g1 = _link_deriv1(lcode, m)
                dotd[k] = -w[k] * (y[k] - m) / (phi * nu * g1)
                ddotd[k] = w[k] / (phi * nu * g1 * g1)
    return dotd_arr, ddotd_arr
