"""Deterministic starting values: GLM-SVD and the cheaper OLS-SVD.

GLM-SVD stages: (1) m column GLMs give B; (2) n row GLMs with the column
effects as offsets give Gamma; (3) the deviance or Pearson residual matrix at
mu = g^{-1}(X B' + Gamma Z') (zeros at unobserved entries) is decomposed by a
truncated randomized SVD, U = (left vectors) * (singular values); (4) m
column GLMs with U as a fixed design and the regression effects as offsets
give V. OLS-SVD replaces every GLM with least squares on the
perturbed-link-transformed response and takes V straight from the residual
SVD. phi starts at the Pearson estimate at mu.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError
from .families import FamilySpec, Gaussian, Identity, LinkSpec
from .glm import fit_glm_batched
from .model import CovariateSet, FactorizationState, ResponseMatrix

__all__ = ["InitMethod", "init_glm_svd", "init_ols_svd", "randomized_svd"]

# perturbation defaults for the link transform g_eps, per link kind
_LINK_EPS = {"log": 0.1, "logit": 0.01, "inverse": 0.1, "inverse_squared": 0.1}


@dataclass
class InitMethod:
    """Initialization options: residual kind and the g_eps perturbation."""

    residual_kind: str = "deviance"
    link_epsilon: float | None = None

    def __post_init__(self):
        if self.residual_kind not in ("deviance", "pearson"):
            raise ConfigError("residual_kind must be 'deviance' or 'pearson'")
        if self.link_epsilon is not None and self.link_epsilon <= 0:
            raise ConfigError("link_epsilon must be positive")

    def eps_for(self, lnk: LinkSpec) -> float:
        if self.link_epsilon is not None:
            return self.link_epsilon
        return _LINK_EPS.get(lnk.kind, 0.1)


def perturbed_transform(lnk: LinkSpec, y, eps: float):
    """g_eps(y): the link applied to a response nudged into the link domain."""
    y = np.asarray(y, dtype=float)
    if lnk.kind == "identity":
        return y.copy()
    if lnk.kind == "log":
        return np.log(y + eps)
    if lnk.kind == "logit":
        c = np.clip(y, eps, 1.0 - eps)
        return np.log(c / (1.0 - c))
    # inverse-type links: keep the argument away from zero
    return lnk.eval(np.maximum(y, eps))


def randomized_svd(a, k, oversample=10, n_power=2, seed=0):
    """Truncated SVD by a randomized range finder (deterministic given seed).

    Falls back to exact SVD when k + oversample reaches min(n, m).
    """
    n, m = a.shape
    k = min(k, min(n, m))
    if k == 0:
        return np.zeros((n, 0)), np.zeros(0), np.zeros((m, 0))
    if k + oversample >= min(n, m):
        u, s, vt = np.linalg.svd(a, full_matrices=False)
        return u[:, :k], s[:k], vt[:k].T
    rng = np.random.default_rng(seed)
    probe = rng.standard_normal((m, k + oversample))
    sketch = a @ probe
    for _ in range(n_power):
        q, _ = np.linalg.qr(sketch)
        sketch = a @ (a.T @ q)
    q, _ = np.linalg.qr(sketch)
    u_small, s, vt = np.linalg.svd(q.T @ a, full_matrices=False)
    return (q @ u_small)[:, :k], s[:k], vt[:k].T


def _pearson_phi(data, mu, fam, p, q, d):
    obs = data.mask
    resid2 = (data.values[obs] - mu[obs]) ** 2 / fam.variance(mu[obs])
    dof = data.n_observed - (p * data.m + q * data.n + (data.n + data.m) * d + 1)
    dof = max(dof, 1)
    return float(np.sum(data.weights[obs] * resid2) / dof)


def _nb_shape_moment(data, mu, fam):
    obs = data.mask
    w = data.weights[obs]
    num = float(np.sum(w * mu[obs] ** 2))
    den = float(np.sum(w * ((data.values[obs] - mu[obs]) ** 2 - mu[obs])))
    if den <= 0:
        return 1e8
    return float(np.clip(num / den, 1e-4, 1e8))


def _residual_matrix(data, mu, fam, kind):
    """Signed deviance or Pearson residuals; zero at unobserved entries."""
    obs = data.mask
    y, w = data.values[obs], data.weights[obs]
    m = mu[obs]
    if kind == "pearson":
        r = (y - m) * np.sqrt(w / fam.variance(m))
    else:
        r = np.sign(y - m) * np.sqrt(np.maximum(fam.unit_deviance(y, m, w), 0.0))
    out = np.zeros(data.values.shape)
    out[obs] = r
    return out


def _safe_y(data, fam):
    """Values with unobserved entries replaced by a family-interior constant."""
    fill = 0.5 if fam.kind == "bernoulli" else (0.0 if fam.kind == "gaussian" else 1.0)
    return data.filled(fill)


def _glm_or_fallback(y, w, design, fam, lnk, offset, coef_fallback, flags, label):
    coef, converged = fit_glm_batched(
        y, w, design, fam, lnk, offset=offset, coef0=coef_fallback
    )
    bad = ~converged
    if bad.any():
        coef = coef.copy()
        coef[bad] = coef_fallback[bad]
        flags.setdefault("glm_fallbacks", {})[label] = int(bad.sum())
    return coef


def _ols_stage(y_eps, w, design, offset):
    """Masked least squares for every column; exact single Fisher step."""
    coef, _ = fit_glm_batched(
        y_eps, w, design, Gaussian(), Identity(), offset=offset, max_iter=1
    )
    return coef


def init_ols_svd(data: ResponseMatrix, covs: CovariateSet, fam: FamilySpec,
                 lnk: LinkSpec, d: int, method: InitMethod | None = None,
                 seed: int = 0, return_info: bool = False):
    """Least-squares initialization on the link-transformed response."""
    method = method or InitMethod()
    if d > min(data.values.shape):
        raise ConfigError("rank d cannot exceed min(n, m)")
    eps = method.eps_for(lnk)
    y_eps = perturbed_transform(lnk, _safe_y(data, fam), eps)
    w_eff = np.where(data.mask, data.weights, 0.0)
    info = {"method": "ols_svd"}

    b = _ols_stage(y_eps, w_eff, covs.x, None)                       # (m, p)
    offset = covs.x @ b.T
    gamma = _ols_stage(y_eps.T, w_eff.T, covs.z, offset.T)           # (n, q)
    eta0 = offset + (gamma @ covs.z.T if covs.q else 0.0)

    resid = np.where(data.mask, y_eps - eta0, 0.0)
    left, sing, right = randomized_svd(resid, d, seed=seed)
    u = left * sing
    v = right

    mu0 = lnk.inverse(np.clip(eta0, *_eta_clip(lnk)))
    phi = _pearson_phi(data, mu0, fam, covs.p, covs.q, d) if fam.has_free_dispersion else 1.0
    nb_shape = _nb_shape_moment(data, mu0, fam) if fam.kind == "neg_binomial" else 1.0
    state = FactorizationState(b, gamma, u, v, phi, nb_shape)
    return (state, info) if return_info else state


def init_glm_svd(data: ResponseMatrix, covs: CovariateSet, fam: FamilySpec,
                 lnk: LinkSpec, d: int, method: InitMethod | None = None,
                 seed: int = 0, return_info: bool = False):
    """GLM-based initialization; falls back to OLS-SVD stages per column."""
    method = method or InitMethod()
    if d > min(data.values.shape):
        raise ConfigError("rank d cannot exceed min(n, m)")
    eps = method.eps_for(lnk)
    y_safe = _safe_y(data, fam)
    y_eps = perturbed_transform(lnk, y_safe, eps)
    w_eff = np.where(data.mask, data.weights, 0.0)
    info = {"method": "glm_svd"}

    # stage 1: column regressions for B (OLS coefficients seed the GLMs)
    b = _ols_stage(y_eps, w_eff, covs.x, None)
    if covs.p:
        b = _glm_or_fallback(y_safe, w_eff, covs.x, fam, lnk, None, b, info, "b")
    offset = covs.x @ b.T

    # stage 2: row regressions for Gamma given the column effects
    gamma = _ols_stage(y_eps.T, w_eff.T, covs.z, offset.T)
    if covs.q:
        gamma = _glm_or_fallback(y_safe.T, w_eff.T, covs.z, fam, lnk, offset.T,
                                 gamma, info, "gamma")
    eta0 = offset + (gamma @ covs.z.T if covs.q else 0.0)
    mu0 = lnk.inverse(np.clip(eta0, *_eta_clip(lnk)))

    # stage 3: residual SVD for the latent scores
    resid = _residual_matrix(data, mu0, fam, method.residual_kind)
    left, sing, right = randomized_svd(resid, d, seed=seed)
    u = left * sing

    # stage 4: column regressions for V with U as a fixed design
    if d > 0:
        v0 = _ols_stage(np.where(data.mask, y_eps - eta0, 0.0), w_eff, u, None)
        v = _glm_or_fallback(y_safe, w_eff, u, fam, lnk, eta0, v0, info, "v")
    else:
        v = np.zeros((data.m, 0))

    phi = _pearson_phi(data, mu0, fam, covs.p, covs.q, d) if fam.has_free_dispersion else 1.0
    nb_shape = _nb_shape_moment(data, mu0, fam) if fam.kind == "neg_binomial" else 1.0
    state = FactorizationState(b, gamma, u, v, phi, nb_shape)
    return (state, info) if return_info else state


def _eta_clip(lnk: LinkSpec):
    """Linear-predictor range keeping g^{-1} finite and in-domain."""
    if lnk.kind == "log":
        return -700.0, 700.0
    if lnk.kind == "logit":
        return -700.0, 700.0
    if lnk.kind in ("inverse", "inverse_squared"):
        return 1e-8, np.inf
    return -np.inf, np.inf
