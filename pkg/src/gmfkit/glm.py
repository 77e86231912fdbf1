"""Batched penalized Fisher scoring for many small GLMs sharing one design.

Solves, for every column j of an n x m response at once,

    min_theta_j  sum_i w_ij D0(y_ij, g^{-1}(a_i . theta_j + o_ij)) / 2
                 + (1/2) theta_j' diag(lam) theta_j

via damped Newton steps with the Fisher information. All m problems advance
together; the per-problem (p x p) systems are solved with one batched
``np.linalg.solve``. Masked entries are handled by zeroing their weights
(the caller passes ``y`` already made safe at masked positions).

This is the inner engine of both the GLM-SVD initialization (full solves
with step halving) and AIRWLS (a fixed number of relaxed steps).
"""
from __future__ import annotations

import numpy as np

from . import kernels
from .exceptions import SingularSystemError
from .families import FamilySpec, LinkSpec

__all__ = ["batched_deviance", "fisher_step", "fit_glm_batched"]


def batched_deviance(y, w, eta, fam, lnk):
    """Per-problem weighted deviance sums; NaN when eta leaves the domain."""
    with np.errstate(all="ignore"):
        mu = lnk.inverse(np.asarray(eta, dtype=float)) if lnk.kind != "identity" else np.asarray(eta, dtype=float)
        dev = fam._dev0(np.asarray(y, dtype=float), mu)
    # dropped entries (w == 0) must not poison the sum even if mu is bad there
    return np.sum(np.where(w > 0, w * dev, 0.0), axis=0)


def fisher_step(coef, y, w, design, fam, lnk, offset, lam, damping, phi=1.0):
    """One batched penalized Fisher-scoring direction.

    Returns (delta, eta) where delta stacks the per-problem Newton steps
    -(A' ddotD_j A + diag(lam) + damping I)^{-1} (A' dotD_j + lam * theta_j).
    """
    m, p = coef.shape
    eta = design @ coef.T + offset
    with np.errstate(all="ignore"):
        _, dotd, ddotd = kernels.block_derivs(fam, lnk, y, eta, w, phi)
    keep = w > 0
    dotd = np.where(keep, dotd, 0.0)
    ddotd = np.where(keep, ddotd, 0.0)
    grad = dotd.T @ design + lam * coef
    hess = np.einsum("ip,ij,iq->jpq", design, ddotd, design)
    hess += (np.diag(lam) + damping * np.eye(p))[None, :, :]
    try:
        delta = -np.linalg.solve(hess, grad[:, :, None])[:, :, 0]
    except np.linalg.LinAlgError:
        for j in range(m):
            try:
                np.linalg.solve(hess[j], grad[j])
            except np.linalg.LinAlgError:
                raise SingularSystemError(
                    f"singular Fisher system in subproblem {j} despite damping",
                    index=j,
                ) from None
        raise
    return delta, eta


def fit_glm_batched(y, w, design, fam: FamilySpec, lnk: LinkSpec, offset=None,
                    coef0=None, lam=None, damping=1e-8, max_iter=50, tol=1e-10,
                    max_halvings=12):
    """Fit all column GLMs to convergence with step halving.

    Parameters
    ----------
    y, w : (n, m) arrays
        Responses and nonnegative weights; w == 0 drops an entry, in which
        case the corresponding ``y`` value only needs to be family-safe.
    design : (n, p) array
    offset : (n, m) array or None
    coef0 : (m, p) warm start (zeros when None).
    lam : per-coordinate ridge penalties, length p.

    Returns
    -------
    coef : (m, p)
    converged : (m,) bool mask; non-converged problems keep their last
        accepted (deviance-non-increasing) iterate.
    """
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    n, m = y.shape
    p = design.shape[1]
    if p == 0:
        return np.zeros((m, 0)), np.ones(m, dtype=bool)
    offset = np.zeros((n, m)) if offset is None else np.asarray(offset, dtype=float)
    lam = np.zeros(p) if lam is None else np.asarray(lam, dtype=float)
    coef = np.zeros((m, p)) if coef0 is None else np.array(coef0, dtype=float, copy=True)

    dev = batched_deviance(y, w, design @ coef.T + offset, fam, lnk)
    # A non-finite start (possible with a zero warm start and exotic links)
    # is replaced entry-wise as soon as a finite step is found.
    active = np.ones(m, dtype=bool)
    converged = np.zeros(m, dtype=bool)
    for _ in range(max_iter):
        delta, _ = fisher_step(coef, y, w, design, fam, lnk, offset, lam, damping)
        delta[~active] = 0.0
        step = np.ones(m)
        cand = coef + step[:, None] * delta
        dev_new = batched_deviance(y, w, design @ cand.T + offset, fam, lnk)
        for _ in range(max_halvings):
            bad = active & (~np.isfinite(dev_new) | (dev_new > dev + 1e-8))
            if not bad.any():
                break
            step[bad] *= 0.5
            cand[bad] = coef[bad] + step[bad, None] * delta[bad]
            dev_new[bad] = batched_deviance(
                y[:, bad], w[:, bad], design @ cand[bad].T + offset[:, bad], fam, lnk
            )
        still_bad = active & ~np.isfinite(dev_new)
        if still_bad.any():
            # freeze hopeless problems at their last finite iterate
            cand[still_bad] = coef[still_bad]
            dev_new[still_bad] = dev[still_bad]
            active &= ~still_bad
        moved = np.abs(cand - coef).max(axis=1)
        scale = 1.0 + np.abs(coef).max(axis=1)
        coef = cand
        done = active & (moved < tol * scale)
        converged |= done
        active &= ~done
        dev = np.where(np.isfinite(dev_new), dev_new, dev)
        if not active.any():
            break
    return coef, converged
