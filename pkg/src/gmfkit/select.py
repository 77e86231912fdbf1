"""Rank selection: information criteria, repeated-holdout cross-validation,
and the eigenvalue scree of OLS residuals on log1p-transformed data.

The CV routine masks a fraction of observed entries per fold (independent
uniform masks, not an entry partition), fits every candidate rank on the
train matrix with warm starts across ranks, and scores the held-out entries
by relative out-of-sample deviance.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .exceptions import ConfigError, DivergenceError, GmfError
from .families import FamilySpec, Gaussian, Identity, LinkSpec
from .glm import fit_glm_batched
from .identify import project_constraints
from .initialization import init_glm_svd, randomized_svd
from .metrics import rel_deviance
from .model import (
    CovariateSet,
    FactorizationState,
    PenaltyConfig,
    ResponseMatrix,
    linear_predictor,
    parameter_count,
)
from .optim import SgdConfig, fit_airwls, fit_asgd, fit_newton

__all__ = [
    "RankSelectionReport",
    "information_criteria",
    "holdout_mask",
    "cv_rank_select",
    "scree_eigenvalues",
    "residual_scores",
    "elbow_pick",
]

_FITTERS = {"asgd": fit_asgd, "newton": fit_newton, "airwls": fit_airwls}


@dataclass
class RankSelectionReport:
    ranks: list
    aic: list = field(default_factory=list)
    bic: list = field(default_factory=list)
    cv_deviance: list = field(default_factory=list)   # per-rank lists, one per fold
    scree_eigenvalues: list = field(default_factory=list)
    chosen: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)       # (rank, fold, message)


def _dispersion_constant(fam: FamilySpec, y, w, phi: float) -> float:
    """The phi/alpha-dependent part of -2 log-likelihood beyond D/phi.

    Adding it back makes the deviance-based criteria comparable across fits
    whose dispersion estimates differ. Families with fixed unit dispersion
    contribute nothing.
    """
    n_obs = y.size
    if fam.kind in ("gaussian", "inverse_gaussian"):
        return float(n_obs * np.log(phi))
    if fam.kind == "gamma":
        shape = w / phi
        return float(2.0 * np.sum(gammaln(shape) - shape * np.log(shape) + shape))
    if fam.kind == "neg_binomial":
        a = fam.nb_shape
        sat = (
            gammaln(y + a) - gammaln(a) - gammaln(y + 1.0)
            - (y + a) * np.log(y + a) + a * np.log(a)
        )
        ylogy = np.where(y > 0, y * np.log(np.where(y > 0, y, 1.0)), 0.0)
        return float(-2.0 * np.sum(w * (sat + ylogy)))
    return 0.0


def information_criteria(state: FactorizationState, data: ResponseMatrix,
                         covs: CovariateSet, fam: FamilySpec, lnk: LinkSpec):
    """(AIC, BIC) of a fitted state.

    AIC = D/phi + c(phi) + 2k and BIC = D/phi + c(phi) + k log|Omega| with
    k = pm + qn + d(n+m) + 1 and c the dispersion constant above.
    """
    obs = data.mask
    eta = linear_predictor(state, covs)
    mu = lnk.inverse(eta[obs])
    y, w = data.values[obs], data.weights[obs]
    dev = float(np.sum(fam.unit_deviance(y, mu, w))) / state.phi
    dev += _dispersion_constant(fam, y, w, state.phi)
    k = parameter_count(data.n, data.m, covs.p, covs.q, state.rank)
    n_obs = data.n_observed
    return dev + 2.0 * k, dev + k * np.log(n_obs)


def holdout_mask(data: ResponseMatrix, fraction: float, seed: int = 0):
    """Mask floor(fraction |Omega|) observed entries uniformly at random.

    Returns (train ResponseMatrix, test (rows, cols) arrays). Resamples up to
    100 times if a draw empties some row or column of all observations.
    """
    if not 0.0 < fraction < 1.0:
        raise ConfigError("holdout fraction must lie strictly between 0 and 1")
    rows, cols = np.nonzero(data.mask)
    n_test = int(np.floor(fraction * rows.size))
    rng = np.random.default_rng(seed)
    if n_test == 0:
        return data, (rows[:0], cols[:0])
    for _ in range(100):
        pick = np.sort(rng.choice(rows.size, size=n_test, replace=False))
        mask = data.mask.copy()
        mask[rows[pick], cols[pick]] = False
        if mask.any(axis=1).all() and mask.any(axis=0).all():
            train = ResponseMatrix(data.values, mask, data.weights)
            return train, (rows[pick], cols[pick])
    raise ConfigError(
        "could not draw a holdout leaving every row and column observed"
    )


def _nan_safe_mean(values) -> float:
    arr = np.asarray(values, dtype=float)
    finite = arr[np.isfinite(arr)]
    return float(finite.mean()) if finite.size else float("nan")


def _pad_state(state: FactorizationState, d: int, rng) -> FactorizationState:
    """Grow a projected state to rank d with small random extra columns."""
    add = d - state.rank
    if add <= 0:
        return state.copy()
    u = np.hstack([state.u, 1e-3 * rng.standard_normal((state.n, add))])
    v = np.hstack([state.v, 1e-3 * rng.standard_normal((state.m, add))])
    return FactorizationState(state.b.copy(), state.gamma.copy(), u, v,
                              state.phi, state.nb_shape)


def _mu_at(state, covs, lnk, rows, cols):
    u_part = np.einsum("ik,ik->i", state.u[rows], state.v[cols])
    x_part = np.einsum("ik,ik->i", covs.x[rows], state.b[cols]) if covs.p else 0.0
    z_part = np.einsum("ik,ik->i", state.gamma[rows], covs.z[cols]) if covs.q else 0.0
    return lnk.inverse(u_part + x_part + z_part)


def cv_rank_select(data: ResponseMatrix, covs: CovariateSet, fam: FamilySpec,
                   lnk: LinkSpec, ranks, folds: int = 5,
                   cfg: SgdConfig | None = None,
                   penalty: PenaltyConfig | None = None,
                   algorithm: str = "asgd", holdout_fraction: float = 0.3,
                   seed: int = 0, threads: int = 1,
                   include_scree: bool = True) -> RankSelectionReport:
    """Repeated-holdout CV over a rank grid, plus AIC/BIC and the scree pick.

    Ranks are fitted in increasing order, each warm-started from the previous
    rank's projected state padded with a small random column. Folds run in
    parallel when ``threads > 1``; results are seed-deterministic either way.
    """
    if folds < 2:
        raise ConfigError("need at least 2 folds")
    ranks = sorted(set(int(d) for d in ranks))
    if any(d < 0 for d in ranks):
        raise ConfigError("ranks must be nonnegative")
    cfg = cfg or SgdConfig()
    penalty = penalty or PenaltyConfig()
    fitter = _FITTERS[algorithm]

    splits = [holdout_mask(data, holdout_fraction, seed=seed + 1000 * f)
              for f in range(folds)]
    rngs = [np.random.default_rng(seed + 7919 + f) for f in range(folds)]
    ybars = [
        float(np.mean(train.values[train.mask])) for train, _ in splits
    ]

    report = RankSelectionReport(ranks=list(ranks))
    warm: list = [None] * folds

    def run_cell(f: int, d: int):
        train, (trows, tcols) = splits[f]
        init = _pad_state(warm[f], d, rngs[f]) if warm[f] is not None else None
        return fitter(train, covs, fam, lnk, penalty, cfg, init_state=init,
                      rank=d, identify_mode="B1")

    for d in ranks:
        aics, bics, devs = [], [], []
        def cell(f, d=d):
            # a diverged or domain-broken fit marks the cell failed; it must
            # not poison the remaining grid
            try:
                return run_cell(f, d)
            except GmfError as err:
                return err
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(cell, range(folds)))
        else:
            results = [cell(f) for f in range(folds)]
        for f, res in enumerate(results):
            if isinstance(res, GmfError):
                report.failures.append((d, f, str(res)))
                devs.append(np.nan)
                aics.append(np.nan)
                bics.append(np.nan)
                continue
            state, _ = res
            train, (trows, tcols) = splits[f]
            try:
                aic, bic = information_criteria(state, train, covs, fam, lnk)
                mu_test = _mu_at(state, covs, lnk, trows, tcols)
                dev = rel_deviance(data.values[trows, tcols], mu_test,
                                   ybars[f], fam)
            except GmfError as err:
                report.failures.append((d, f, str(err)))
                devs.append(np.nan)
                aics.append(np.nan)
                bics.append(np.nan)
                continue
            warm[f] = state
            aics.append(aic)
            bics.append(bic)
            devs.append(dev)
        report.aic.append(_nan_safe_mean(aics))
        report.bic.append(_nan_safe_mean(bics))
        report.cv_deviance.append(devs)

    cv_means = [_nan_safe_mean(d) for d in report.cv_deviance]
    report.chosen["cv"] = ranks[int(np.argmin(np.nan_to_num(cv_means, nan=np.inf)))]
    report.chosen["aic"] = ranks[int(np.argmin(np.nan_to_num(report.aic, nan=np.inf)))]
    report.chosen["bic"] = ranks[int(np.argmin(np.nan_to_num(report.bic, nan=np.inf)))]
    if include_scree:
        max_rank = min(max(ranks) + 1, min(data.values.shape))
        report.scree_eigenvalues = list(scree_eigenvalues(data, covs, max_rank))
        pick, _ = elbow_pick(report.scree_eigenvalues)
        report.chosen["scree"] = pick
    return report


def _ols_residual(data: ResponseMatrix, covs: CovariateSet):
    """log1p-transformed observed data minus its OLS fit on the covariates."""
    y_log = np.log1p(np.maximum(data.filled(0.0), -0.5))
    w_eff = np.where(data.mask, data.weights, 0.0)
    b, _ = fit_glm_batched(y_log, w_eff, covs.x, Gaussian(), Identity(), max_iter=1)
    eta = covs.x @ b.T
    gamma, _ = fit_glm_batched(y_log.T, w_eff.T, covs.z, Gaussian(), Identity(),
                               offset=eta.T, max_iter=1)
    eta = eta + (gamma @ covs.z.T if covs.q else 0.0)
    return np.where(data.mask, y_log - eta, 0.0)


def scree_eigenvalues(data: ResponseMatrix, covs: CovariateSet,
                      max_rank: int, seed: int = 0) -> np.ndarray:
    """Descending squared singular values of the log1p OLS residual matrix."""
    if max_rank > min(data.values.shape):
        raise ConfigError("max_rank cannot exceed min(n, m)")
    resid = _ols_residual(data, covs)
    _, sing, _ = randomized_svd(resid, max_rank, seed=seed)
    return np.sort(sing**2)[::-1]


def residual_scores(data: ResponseMatrix, covs: CovariateSet,
                    d: int, seed: int = 0) -> np.ndarray:
    """Row scores (left vectors * singular values) of the log1p OLS residual."""
    resid = _ols_residual(data, covs)
    left, sing, _ = randomized_svd(resid, d, seed=seed)
    return left * sing


def elbow_pick(eigenvalues):
    """Rank at the largest consecutive eigenvalue gap ratio.

    Returns (rank, flags). A single value returns 1 with a warning flag; a
    gap profile without a distinguished maximum (e.g. geometric decay) is
    flagged ambiguous and yields 1.
    """
    vals = np.asarray(list(eigenvalues), dtype=float)
    if vals.size == 0:
        raise ConfigError("eigenvalue list is empty")
    if np.any(np.diff(vals) > 1e-12):
        raise ConfigError("eigenvalues must be sorted in decreasing order")
    if vals.size == 1:
        return 1, {"warning": "single eigenvalue; rank 1 by default"}
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = vals[:-1] / vals[1:]
    ratios = np.where(np.isnan(ratios), 1.0, ratios)   # 0/0 plateaus
    best = int(np.argmax(ratios))
    flags = {}
    others = np.delete(ratios, best)
    if others.size and np.max(ratios) <= 2.0 * np.max(others):
        flags["ambiguous"] = True
        if np.allclose(ratios, ratios[0], rtol=1e-8, atol=1e-12):
            return 1, flags
    return best + 1, flags
