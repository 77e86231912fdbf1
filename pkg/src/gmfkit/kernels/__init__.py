"""Hot-loop kernels with a compiled core and a numpy fallback.

The split reflects where each technology wins: the mean inversion
(exp / expit) and the deviance sums use numpy's vectorized transcendentals,
while the per-entry derivative algebra, evaluated on every minibatch,
runs through the fused Cython loop (``gmfkit.kernels._core``) when that
extension is importable. Setting ``GMFKIT_PURE_PYTHON=1`` forces the numpy
path; ``IMPL`` records which one is active. Both implement identical
formulas; ``benchmarks/bench_kernels.py`` compares their speed.
"""
from __future__ import annotations

import os

import numpy as np

from . import _ref

FAMILY_CODES = {
    "gaussian": _ref.GAUSSIAN,
    "gamma": _ref.GAMMA,
    "inverse_gaussian": _ref.INV_GAUSSIAN,
    "poisson": _ref.POISSON,
    "bernoulli": _ref.BERNOULLI,
    "neg_binomial": _ref.NEG_BINOMIAL,
}

LINK_CODES = {
    "identity": _ref.IDENTITY,
    "log": _ref.LOG,
    "logit": _ref.LOGIT,
    "inverse": _ref.INVERSE,
    "inverse_squared": _ref.INVERSE_SQUARED,
}

if os.environ.get("GMFKIT_PURE_PYTHON", "0") == "1":
    _impl = _ref
    IMPL = "python"
else:
    try:
        from . import _core as _impl

        IMPL = "compiled"
    except ImportError:
        _impl = _ref
        IMPL = "python"


def _flat(a):
    return np.ascontiguousarray(a, dtype=np.float64).ravel()


def _alpha_of(fam) -> float:
    return float(getattr(fam, "nb_shape", 1.0))


def block_mean(lnk, eta):
    """Inverse link applied to a block."""
    eta = np.asarray(eta, dtype=float)
    return _ref.mean_of_eta(LINK_CODES[lnk.kind], eta)


def block_derivs(fam, lnk, y, eta, w, phi):
    """Fused mu, dotd, ddotd(Fisher) for a block; shapes follow ``eta``."""
    eta = np.asarray(eta, dtype=float)
    shape = eta.shape
    mu = _ref.mean_of_eta(LINK_CODES[lnk.kind], eta)
    dotd, ddotd = _impl.derivs_from_mu(
        FAMILY_CODES[fam.kind],
        LINK_CODES[lnk.kind],
        _flat(y),
        _flat(mu),
        _flat(np.broadcast_to(w, shape)),
        float(phi),
        _alpha_of(fam),
    )
    return mu, dotd.reshape(shape), ddotd.reshape(shape)


def block_deviance(fam, lnk, y, eta, w) -> float:
    """Sum of weighted unit deviances w * D(y, g^{-1}(eta)) over a block."""
    eta = np.asarray(eta, dtype=float)
    mu = _ref.mean_of_eta(LINK_CODES[lnk.kind], eta)
    return _ref.deviance_from_mu(
        FAMILY_CODES[fam.kind],
        np.asarray(y, dtype=float),
        mu,
        np.broadcast_to(w, eta.shape),
        _alpha_of(fam),
    )
