"""Projection onto the identifiability-constrained parameter space.

Constraint (A) makes Gamma, U orthogonal to the column space of X and V
orthogonal to the column space of Z, moving the removed components into B
and Gamma so the linear predictor X B' + Gamma Z' + U V' never changes.
On top of (A), one of three normalizations pins down (U, V):

    B1: V orthonormal, U'U = Sigma (decreasing), V's column signs fixed;
    B2: U orthonormal, V'V = Sigma, same sign rule;
    B3: Var(U) = I (centered second moment), V lower triangular with a
        positive diagonal.

The SVD of U V' is taken through the thin-QR trick, never materializing the
n x m product.
"""
from __future__ import annotations

import numpy as np

from .exceptions import ConfigError, SingularSystemError
from .model import CovariateSet, FactorizationState

__all__ = ["project_constraints", "check_constraints"]

_SIGN_EPS = 1e-12
_RANK_RTOL = 1e-12


def _lstsq_projector(design, target, what):
    """(D'D)^{-1} D' target, raising when the design is numerically singular."""
    gram = design.T @ design
    try:
        return np.linalg.solve(gram, design.T @ target)
    except np.linalg.LinAlgError:
        raise SingularSystemError(
            f"rank-deficient design while removing the covariate span from {what}"
        ) from None


def _thin_svd_of_product(u, v):
    """SVD factors of u v' via QR of each factor and a d x d SVD."""
    qu, ru = np.linalg.qr(u)
    qv, rv = np.linalg.qr(v)
    core_u, sigma, core_vt = np.linalg.svd(ru @ rv.T)
    return qu @ core_u, sigma, qv @ core_vt.T


def _fix_signs(u, v):
    """Flip factor pairs so the first non-negligible entry of each v column is positive."""
    for k in range(v.shape[1]):
        col = v[:, k]
        nz = np.flatnonzero(np.abs(col) > _SIGN_EPS)
        if nz.size and col[nz[0]] < 0:
            v[:, k] = -col
            u[:, k] = -u[:, k]
    return u, v


def project_constraints(state: FactorizationState, covs: CovariateSet,
                        mode: str = "B1", return_info: bool = False):
    """Project an unconstrained state onto (A) plus one of B1/B2/B3.

    The linear predictor is preserved exactly (up to rounding). Numerically
    rank-deficient U V' keeps its shape: singular values below
    max(n, m) * eps * sigma_max are zeroed along with their factor columns,
    and ``info['effective_rank']`` reports how many survive.
    """
    mode = mode.upper()
    if mode not in ("B1", "B2", "B3"):
        raise ConfigError(f"unknown identifiability mode {mode!r}")
    b = state.b.copy()
    gamma = state.gamma.copy()
    u = state.u.copy()
    v = state.v.copy()
    x, z = covs.x, covs.z
    info = {"mode": mode, "effective_rank": state.rank, "rank_deficient": False}

    if covs.p > 0 and covs.q > 0:
        d_gamma = _lstsq_projector(x, gamma, "Gamma")   # (p, q)
        gamma -= x @ d_gamma
        b += z @ d_gamma.T
    if covs.p > 0 and state.rank > 0:
        d_u = _lstsq_projector(x, u, "U")               # (p, d)
        u -= x @ d_u
        b += v @ d_u.T
    if covs.q > 0 and state.rank > 0:
        d_v = _lstsq_projector(z, v, "V")               # (q, d)
        v -= z @ d_v
        gamma += u @ d_v.T

    d = state.rank
    if d > 0:
        if mode in ("B1", "B2"):
            left, sigma, right = _thin_svd_of_product(u, v)
            cutoff = max(u.shape[0], v.shape[0]) * np.finfo(float).eps * (
                sigma[0] if sigma.size else 0.0
            )
            eff = int(np.sum(sigma > cutoff))
            if eff < d:
                sigma = np.where(sigma > cutoff, sigma, 0.0)
                info["effective_rank"] = eff
                info["rank_deficient"] = True
            if mode == "B1":
                u, v = left * sigma, right
            else:
                u, v = left, right * sigma
            u, v = _fix_signs(u, v)
            if info["rank_deficient"]:
                u[:, eff:] = 0.0
                v[:, eff:] = 0.0
        else:
            n = u.shape[0]
            col_mean = u.mean(axis=0, keepdims=True)
            s = (u.T @ u - n * col_mean.T @ col_mean) / n
            try:
                evals, evecs = np.linalg.eigh(s)
            except np.linalg.LinAlgError:
                raise SingularSystemError("whitening of U failed") from None
            if evals.min() <= n * np.finfo(float).eps * max(evals.max(), 1.0):
                info["rank_deficient"] = True
                info["effective_rank"] = int(np.sum(evals > 0))
                raise SingularSystemError(
                    "U has a degenerate column covariance; B3 whitening undefined"
                )
            s_inv_half = evecs @ np.diag(evals**-0.5) @ evecs.T
            s_half = evecs @ np.diag(evals**0.5) @ evecs.T
            u = u @ s_inv_half
            v = v @ s_half
            q_rot, r = np.linalg.qr(v.T)
            u = u @ q_rot
            v = r.T
            signs = np.sign(np.diag(v[:d, :d]))
            signs[signs == 0] = 1.0
            u = u * signs
            v = v * signs

    out = FactorizationState(b, gamma, u, v, state.phi, state.nb_shape)
    return (out, info) if return_info else out


def check_constraints(state: FactorizationState, covs: CovariateSet,
                      mode: str = "B1") -> dict:
    """Max absolute violations of (A) and the mode-specific normalization."""
    mode = mode.upper()
    x, z = covs.x, covs.z
    d = state.rank

    def _max_abs(a):
        return float(np.abs(a).max()) if a.size else 0.0

    rep = {
        "xt_gamma": _max_abs(x.T @ state.gamma),
        "xt_u": _max_abs(x.T @ state.u),
        "zt_v": _max_abs(z.T @ state.v),
    }
    if d == 0:
        rep["normalization"] = 0.0
        return rep
    utu = state.u.T @ state.u
    vtv = state.v.T @ state.v
    off = ~np.eye(d, dtype=bool)
    if mode == "B1":
        rep["v_orthonormality"] = _max_abs(vtv - np.eye(d))
        rep["u_off_diagonal"] = _max_abs(utu[off])
        diag = np.diag(utu)
        rep["sigma_sorted"] = float(max(0.0, np.max(np.diff(diag), initial=0.0)))
        rep["normalization"] = max(rep["v_orthonormality"], rep["u_off_diagonal"],
                                   rep["sigma_sorted"])
    elif mode == "B2":
        rep["u_orthonormality"] = _max_abs(utu - np.eye(d))
        rep["v_off_diagonal"] = _max_abs(vtv[off])
        diag = np.diag(vtv)
        rep["sigma_sorted"] = float(max(0.0, np.max(np.diff(diag), initial=0.0)))
        rep["normalization"] = max(rep["u_orthonormality"], rep["v_off_diagonal"],
                                   rep["sigma_sorted"])
    elif mode == "B3":
        n = state.n
        col_mean = state.u.mean(axis=0, keepdims=True)
        var_u = (utu - n * col_mean.T @ col_mean) / n
        rep["u_standardized"] = _max_abs(var_u - np.eye(d))
        top = state.v[:d, :d]
        rep["v_upper_triangle"] = _max_abs(top[np.triu_indices(d, k=1)]) if d > 1 else 0.0
        rep["v_diag_positive"] = float(max(0.0, -np.min(np.diag(top))))
        rep["normalization"] = max(rep["u_standardized"], rep["v_upper_triangle"],
                                   rep["v_diag_positive"])
    else:
        raise ConfigError(f"unknown identifiability mode {mode!r}")
    return rep
