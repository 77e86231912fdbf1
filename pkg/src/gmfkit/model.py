"""Data containers, the linear predictor, and the penalized objective.

The model for an n x m response Y is

    g(mu_ij) = eta_ij = (X B^T + Gamma Z^T + U V^T)_ij

with row design X (n x p), column design Z (m x q), latent factors U (n x d)
and loadings V (m x d). The fitting target is the penalized half-deviance

    L = sum_{(i,j) in Omega} w_ij D0(y_ij, mu_ij) / (2 phi)
        + (lam_B/2)||B||_F^2 + (lam_G/2)||Gamma||_F^2
        + (lam_U/2)||U||_F^2 + (lam_V/2)||V||_F^2

which differs from the penalized negative log-likelihood only by an additive
term in (y, phi); see :func:`gmfkit.select.information_criteria` for where
those constants are added back.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .exceptions import ConfigError
from .families import FamilySpec, LinkSpec

__all__ = [
    "ResponseMatrix",
    "CovariateSet",
    "FactorizationState",
    "PenaltyConfig",
    "linear_predictor",
    "penalized_objective",
    "parameter_count",
]


def _as_float_matrix(a, name):
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise ConfigError(f"{name} must be a 2-D array, got shape {a.shape}")
    return a


@dataclass
class ResponseMatrix:
    """Observed data Y with observation mask and positive prior weights.

    ``mask[i, j]`` is True iff entry (i, j) is observed; unobserved values
    are ignored by every likelihood computation (they may be NaN). A missing
    ``mask`` is inferred from NaNs in ``values``.
    """

    values: np.ndarray
    mask: np.ndarray | None = None
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.values = _as_float_matrix(self.values, "values")
        n, m = self.values.shape
        if n < 1 or m < 1:
            raise ConfigError("response matrix must be at least 1 x 1")
        if self.mask is None:
            self.mask = np.isfinite(self.values)
        else:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != (n, m):
                raise ConfigError("mask shape does not match values")
        if self.weights is None:
            self.weights = np.ones((n, m))
        else:
            self.weights = _as_float_matrix(self.weights, "weights")
            if self.weights.shape != (n, m):
                raise ConfigError("weights shape does not match values")
            if not (self.weights > 0).all():
                raise ConfigError("weights must be strictly positive")
        if not np.isfinite(self.values[self.mask]).all():
            raise ConfigError("observed entries must be finite")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]

    @property
    def n_observed(self) -> int:
        return int(self.mask.sum())

    def filled(self, fill) -> np.ndarray:
        """Copy of values with unobserved entries replaced from ``fill``."""
        out = np.array(self.values, copy=True)
        miss = ~self.mask
        out[miss] = np.broadcast_to(fill, out.shape)[miss]
        return out


@dataclass
class CovariateSet:
    """Row design x (n x p) and column design z (m x q); empty designs allowed."""

    x: np.ndarray | None = None
    z: np.ndarray | None = None
    n: int | None = None
    m: int | None = None

    def __post_init__(self):
        if self.x is None:
            if self.n is None:
                raise ConfigError("pass x or n to CovariateSet")
            self.x = np.zeros((self.n, 0))
        self.x = _as_float_matrix(self.x, "x")
        if self.z is None:
            if self.m is None:
                raise ConfigError("pass z or m to CovariateSet")
            self.z = np.zeros((self.m, 0))
        self.z = _as_float_matrix(self.z, "z")
        self.n, self.m = self.x.shape[0], self.z.shape[0]
        for name, a in (("x", self.x), ("z", self.z)):
            if a.shape[1] > 0 and np.linalg.matrix_rank(a) < a.shape[1]:
                raise ConfigError(f"design {name} is not full column rank")

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def q(self) -> int:
        return self.z.shape[1]

    @classmethod
    def empty(cls, n: int, m: int) -> "CovariateSet":
        return cls(n=n, m=m)


@dataclass
class FactorizationState:
    """Model parameters: B (m x p), Gamma (n x q), U (n x d), V (m x d), phi, alpha."""

    b: np.ndarray
    gamma: np.ndarray
    u: np.ndarray
    v: np.ndarray
    phi: float = 1.0
    nb_shape: float = 1.0

    def __post_init__(self):
        self.b = _as_float_matrix(self.b, "b")
        self.gamma = _as_float_matrix(self.gamma, "gamma")
        self.u = _as_float_matrix(self.u, "u")
        self.v = _as_float_matrix(self.v, "v")
        if self.u.shape[1] != self.v.shape[1]:
            raise ConfigError("u and v must share the latent dimension d")
        if not self.phi > 0:
            raise ConfigError(f"phi must be positive, got {self.phi!r}")
        if not self.nb_shape > 0:
            raise ConfigError(f"nb_shape must be positive, got {self.nb_shape!r}")

    @property
    def n(self) -> int:
        return self.u.shape[0]

    @property
    def m(self) -> int:
        return self.v.shape[0]

    @property
    def rank(self) -> int:
        return self.u.shape[1]

    def copy(self) -> "FactorizationState":
        return FactorizationState(
            self.b.copy(), self.gamma.copy(), self.u.copy(), self.v.copy(),
            self.phi, self.nb_shape,
        )

    @classmethod
    def zeros(cls, n, m, p=0, q=0, d=0, phi=1.0, nb_shape=1.0) -> "FactorizationState":
        return cls(np.zeros((m, p)), np.zeros((n, q)), np.zeros((n, d)),
                   np.zeros((m, d)), phi, nb_shape)

    def check_shapes(self, data: ResponseMatrix, covs: CovariateSet) -> None:
        n, m = data.values.shape
        if self.u.shape[0] != n or self.v.shape[0] != m:
            raise ConfigError("state factor shapes do not match the data")
        if self.b.shape != (m, covs.p) or self.gamma.shape != (n, covs.q):
            raise ConfigError("state coefficient shapes do not match the designs")


@dataclass
class PenaltyConfig:
    """Frobenius penalty lambda with per-block multipliers for (B, Gamma, U, V).

    Defaults mirror the usual experiment configuration: only U penalized,
    multipliers (0, 0, 1, 0) with lam = 1.
    """

    lam: float = 1.0
    blocks: tuple = (0.0, 0.0, 1.0, 0.0)

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError("lam must be nonnegative")
        blocks = tuple(float(b) for b in self.blocks)
        if len(blocks) != 4 or any(b < 0 for b in blocks):
            raise ConfigError("blocks must be 4 nonnegative multipliers")
        self.blocks = blocks

    @property
    def lam_b(self) -> float:
        return self.lam * self.blocks[0]

    @property
    def lam_gamma(self) -> float:
        return self.lam * self.blocks[1]

    @property
    def lam_u(self) -> float:
        return self.lam * self.blocks[2]

    @property
    def lam_v(self) -> float:
        return self.lam * self.blocks[3]


def linear_predictor(state: FactorizationState, covs: CovariateSet,
                     rows=None, cols=None) -> np.ndarray:
    """eta block for the requested rows x cols (all when None).

    eta_ij = x_i . beta_j + gamma_i . z_j + u_i . v_j; empty designs
    contribute nothing.
    """
    n, m = state.n, state.m
    if rows is None:
        x, gamma, u = covs.x, state.gamma, state.u
    else:
        rows = np.asarray(rows)
        if rows.size and (rows.min() < -n or rows.max() >= n):
            raise IndexError(f"row index out of range for n={n}")
        x, gamma, u = covs.x[rows], state.gamma[rows], state.u[rows]
    if cols is None:
        z, b, v = covs.z, state.b, state.v
    else:
        cols = np.asarray(cols)
        if cols.size and (cols.min() < -m or cols.max() >= m):
            raise IndexError(f"column index out of range for m={m}")
        z, b, v = covs.z[cols], state.b[cols], state.v[cols]
    eta = u @ v.T
    if x.shape[1]:
        eta += x @ b.T
    if z.shape[1]:
        eta += gamma @ z.T
    return eta


def penalty_value(state: FactorizationState, penalty: PenaltyConfig) -> float:
    return 0.5 * (
        penalty.lam_b * float(np.sum(state.b**2))
        + penalty.lam_gamma * float(np.sum(state.gamma**2))
        + penalty.lam_u * float(np.sum(state.u**2))
        + penalty.lam_v * float(np.sum(state.v**2))
    )


def penalized_objective(state: FactorizationState, data: ResponseMatrix,
                        covs: CovariateSet, fam: FamilySpec, lnk: LinkSpec,
                        penalty: PenaltyConfig) -> float:
    """Masked half-deviance data term plus the Frobenius penalties."""
    state.check_shapes(data, covs)
    eta = linear_predictor(state, covs)
    obs = data.mask
    dev = kernels.block_deviance(fam, lnk, data.values[obs], eta[obs], data.weights[obs])
    return dev / (2.0 * state.phi) + penalty_value(state, penalty)


def parameter_count(n: int, m: int, p: int, q: int, d: int) -> int:
    """Number of free parameters: pm + qn + d(n + m) + 1 (the +1 is phi)."""
    if min(n, m, p, q, d) < 0:
        raise ConfigError("dimensions must be nonnegative")
    return p * m + q * n + d * (n + m) + 1
