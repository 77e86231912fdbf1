"""Gradient and Hessian-diagonal assembly, full-data and minibatch.

The row side stacks [Gamma, U] with design [Z, V]; the column side stacks
[B, V] with design [X, U]:

    G_[Gamma,U] = dotD [Z, V]  + [lam_G Gamma, lam_U U]
    H_[Gamma,U] = ddotD [Z*Z, V*V] + [lam_G, lam_U]

and symmetrically for [B, V] with dotD^T, [X, U]. Minibatch estimates over a
block B = I x J scale the data part by m/m* (row side) and n/n* (column
side); penalties are never scaled. The Hessian diagonal always uses the
Fisher form, which is positive for any (y, mu).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .exceptions import ConfigError
from .families import FamilySpec, LinkSpec
from .model import CovariateSet, FactorizationState, PenaltyConfig, ResponseMatrix

__all__ = [
    "GradientPair",
    "Minibatch",
    "assemble_sides",
    "full_gradients",
    "minibatch_gradients",
    "penalty_vectors",
]


@dataclass
class Minibatch:
    """Row index set I and column index set J; the block is B = I x J."""

    row_idx: np.ndarray
    col_idx: np.ndarray

    def __post_init__(self):
        self.row_idx = np.asarray(self.row_idx, dtype=np.intp)
        self.col_idx = np.asarray(self.col_idx, dtype=np.intp)
        if self.row_idx.size == 0 or self.col_idx.size == 0:
            raise ConfigError("minibatch index sets must be nonempty")
        for name, idx in (("row", self.row_idx), ("col", self.col_idx)):
            if idx.min() < 0 or np.unique(idx).size != idx.size:
                raise ConfigError(f"minibatch {name} indices must be unique and nonnegative")

    @classmethod
    def full(cls, n: int, m: int) -> "Minibatch":
        return cls(np.arange(n), np.arange(m))


@dataclass
class GradientPair:
    """Gradients and Fisher Hessian diagonals for [Gamma, U] rows and [B, V] rows."""

    g_rowside: np.ndarray  # (n*, q + d)
    h_rowside: np.ndarray
    g_colside: np.ndarray  # (m*, p + d)
    h_colside: np.ndarray


def _block_quantities(state, data, covs, fam, lnk, mb, y_block=None):
    """dotD and ddotD on the block, masked to observed entries.

    ``y_block``, when given, is a pre-imputed working block treated as fully
    observed (the optimizers' view during fitting).
    """
    I, J = mb.row_idx, mb.col_idx
    from .model import linear_predictor

    eta = linear_predictor(state, covs, I, J)
    w = data.weights[np.ix_(I, J)]
    if y_block is None:
        y = data.values[np.ix_(I, J)]
        obs = data.mask[np.ix_(I, J)]
        y = np.where(obs, y, 1.0 if fam.kind != "gaussian" else 0.0)
    else:
        y = y_block
        obs = None
    _, dotd, ddotd = kernels.block_derivs(fam, lnk, y, eta, w, state.phi)
    if obs is not None and not obs.all():
        dotd = np.where(obs, dotd, 0.0)
        ddotd = np.where(obs, ddotd, 0.0)
    return dotd, ddotd


def penalty_vectors(covs: CovariateSet, d: int, penalty: PenaltyConfig):
    """Per-coordinate ridge weights for the stacked [Gamma, U] and [B, V] blocks."""
    lam_row = np.concatenate([
        np.full(covs.q, penalty.lam_gamma), np.full(d, penalty.lam_u)
    ])
    lam_col = np.concatenate([
        np.full(covs.p, penalty.lam_b), np.full(d, penalty.lam_v)
    ])
    return lam_row, lam_col


def assemble_sides(dotd, ddotd, a_row, a_col, theta_row, theta_col,
                   lam_row, lam_col, s_row: float, s_col: float) -> GradientPair:
    """Stack the data terms and penalties into a GradientPair.

    ``s_row`` and ``s_col`` are the minibatch inflation factors m/m* and
    n/n*; penalties are applied unscaled.
    """
    g_row = s_row * (dotd @ a_row) + lam_row * theta_row
    h_row = s_row * (ddotd @ (a_row * a_row)) + lam_row
    g_col = s_col * (dotd.T @ a_col) + lam_col * theta_col
    h_col = s_col * (ddotd.T @ (a_col * a_col)) + lam_col
    return GradientPair(g_row, h_row, g_col, h_col)


def minibatch_gradients(state: FactorizationState, data: ResponseMatrix,
                        covs: CovariateSet, fam: FamilySpec, lnk: LinkSpec,
                        penalty: PenaltyConfig, mb: Minibatch,
                        y_block=None) -> GradientPair:
    """Unbiased block estimates of the full gradients, O(n* m*) work."""
    n, m = state.n, state.m
    I, J = mb.row_idx, mb.col_idx
    if I.max() >= n or J.max() >= m:
        raise ConfigError("minibatch indices out of range")
    dotd, ddotd = _block_quantities(state, data, covs, fam, lnk, mb, y_block)
    a_row = np.hstack([covs.z[J], state.v[J]])          # (m*, q + d)
    a_col = np.hstack([covs.x[I], state.u[I]])          # (n*, p + d)
    lam_row, lam_col = penalty_vectors(covs, state.rank, penalty)
    theta_row = np.hstack([state.gamma[I], state.u[I]])
    theta_col = np.hstack([state.b[J], state.v[J]])
    return assemble_sides(dotd, ddotd, a_row, a_col, theta_row, theta_col,
                          lam_row, lam_col, m / J.size, n / I.size)


def full_gradients(state: FactorizationState, data: ResponseMatrix,
                   covs: CovariateSet, fam: FamilySpec, lnk: LinkSpec,
                   penalty: PenaltyConfig, y_work=None) -> GradientPair:
    """Exact gradients over all rows and columns (scaling factors are 1)."""
    state.check_shapes(data, covs)
    mb = Minibatch.full(state.n, state.m)
    return minibatch_gradients(state, data, covs, fam, lnk, penalty, mb, y_block=y_work)
