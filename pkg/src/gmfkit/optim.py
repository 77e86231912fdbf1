"""The three fitting algorithms: block-wise adaptive SGD, diagonal
quasi-Newton, and AIRWLS, plus their shared plumbing (learning-rate
schedule, gradient smoothing, stochastic dispersion updates, online
missing-value imputation).

All three minimize the same penalized half-deviance objective
(:func:`gmfkit.model.penalized_objective`) and finish with the
identifiability projection of :mod:`gmfkit.identify`.

Conventions shared by the fitters:

* missing entries are imputed with the current fitted mean every
  ``nafill_every`` iterations and then participate in the derivatives
  exactly like observed values; observed entries of Y are never mutated;
* the Hessian diagonal is the Fisher form plus ``damping``, so search
  directions -G/(H + damping) are always defined;
* convergence = relative change of the (possibly subsampled, fixed-sample)
  full-data objective below ``tol`` for two consecutive epochs.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .exceptions import ConfigError, DivergenceError
from .families import FamilySpec, LinkSpec, NegBinomial
from .gradients import assemble_sides, penalty_vectors
from .identify import project_constraints
from .model import (
    CovariateSet,
    FactorizationState,
    PenaltyConfig,
    ResponseMatrix,
    linear_predictor,
    parameter_count,
    penalized_objective,
    penalty_value,
)

__all__ = [
    "SgdConfig",
    "FitReport",
    "learning_rate",
    "smooth_update",
    "bias_correction",
    "fit_asgd",
    "fit_newton",
    "fit_airwls",
    "update_dispersion_stochastic",
    "update_nb_shape_stochastic",
    "impute_block",
]

NB_SHAPE_FLOOR = 1e-4
NB_SHAPE_CEILING = 1e8


@dataclass
class SgdConfig:
    """Optimizer hyperparameters.

    The learning-rate schedule is rho_t = k0 / (1 + k0 k1 t)^tau with
    tau in (1/2, 1]; k1 = 0 gives a constant rate. ``stepsize`` and
    ``nsteps`` only drive the quasi-Newton and AIRWLS fitters.
    """

    max_epochs: int = 500
    rate_k0: float = 0.01
    rate_k1: float = 0.01
    rate_tau: float = 0.75
    mb_rows: int = 100
    mb_cols: int = 20
    smooth_a1: float = 0.1
    smooth_a2: float = 0.01
    damping: float = 1e-3
    tol: float = 1e-5
    nafill_every: int = 1
    seed: int = 0
    stepsize: float = 0.2
    nsteps: int = 1
    max_eval_entries: int = 100_000

    def __post_init__(self):
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be at least 1")
        if self.rate_k0 <= 0 or self.rate_k1 < 0:
            raise ConfigError("need rate_k0 > 0 and rate_k1 >= 0")
        if not 0.5 < self.rate_tau <= 1.0:
            raise ConfigError("rate_tau must lie in (1/2, 1]")
        if self.mb_rows < 1 or self.mb_cols < 1:
            raise ConfigError("minibatch sizes must be positive")
        for name in ("smooth_a1", "smooth_a2"):
            a = getattr(self, name)
            if not 0.0 < a <= 1.0:
                raise ConfigError(f"{name} must lie in (0, 1]")
        if self.damping < 0 or self.tol <= 0:
            raise ConfigError("need damping >= 0 and tol > 0")
        if self.nafill_every < 1 or self.nsteps < 1:
            raise ConfigError("nafill_every and nsteps must be >= 1")
        if self.stepsize <= 0:
            raise ConfigError("stepsize must be positive")
        if self.max_eval_entries < 1:
            raise ConfigError("max_eval_entries must be positive")


@dataclass
class FitReport:
    """Convergence and diagnostic output of a fit.

    ``objective_trace[0]`` is the objective at the initial state; one entry
    is appended per epoch (aSGD) or iteration (quasi-Newton, AIRWLS).
    ``final_objective`` is evaluated at the returned, projected state; the
    trace is evaluated at the optimizer's working state, so the two can
    differ by the penalty redistribution of the projection.
    """

    final_objective: float = np.nan
    objective_trace: list = field(default_factory=list)
    epochs_run: int = 0
    converged: bool = False
    elapsed_seconds: float = 0.0
    phi_trace: list = field(default_factory=list)
    nb_shape_trace: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)


def learning_rate(t: int, cfg: SgdConfig) -> float:
    """rho_t = k0 / (1 + k0 k1 t)^tau; rho_0 = k0."""
    if t < 0:
        raise ConfigError("iteration index must be nonnegative")
    return cfg.rate_k0 / (1.0 + cfg.rate_k0 * cfg.rate_k1 * t) ** cfg.rate_tau


def smooth_update(prev_g, prev_h, hat_g, hat_h, a1: float, a2: float):
    """Exponential moving averages of the gradient and Hessian estimates."""
    return (1.0 - a1) * prev_g + a1 * hat_g, (1.0 - a2) * prev_h + a2 * hat_h


def bias_correction(t: int, a1: float, a2: float) -> float:
    """(1 - a2^t) / (1 - a1^t), filtering the EMA start-up bias; 1 when a1 == a2."""
    if t < 1:
        raise ConfigError("bias correction is undefined at t = 0")
    if a1 == a2:
        return 1.0
    return (1.0 - a2**t) / (1.0 - a1**t)


# ---------------------------------------------------------------------------
# Dispersion and imputation helpers
# ---------------------------------------------------------------------------


def _resolve_dispersion(fam: FamilySpec, dispersion: str):
    """Map the dispersion policy to (estimate_phi, estimate_nb_shape)."""
    if dispersion == "fixed":
        return False, False
    if dispersion == "estimate":
        if fam.kind == "neg_binomial":
            return False, True
        return True, False
    if dispersion == "auto":
        if fam.kind == "neg_binomial":
            return False, True
        return fam.has_free_dispersion, False
    raise ConfigError(f"dispersion must be auto, fixed or estimate, got {dispersion!r}")


def _degrees_of_freedom(n, m, p, q, d):
    return n * m - parameter_count(n, m, p, q, d)


def update_dispersion_stochastic(state: FactorizationState, data: ResponseMatrix,
                                 covs: CovariateSet, fam: FamilySpec, mb,
                                 rate: float, lnk: LinkSpec | None = None,
                                 y_block=None, mu_block=None) -> float:
    """Smoothed stochastic Pearson update of phi; returns the new value.

    phi_hat = (1/N) (nm / n* m*) sum_B w (y - mu)^2 / nu(mu) with
    N = nm - mp - nq - (n+m)d - 1, then
    phi_bar <- (1 - rate) phi_bar + rate phi_hat.
    """
    n, m = data.values.shape
    N = _degrees_of_freedom(n, m, covs.p, covs.q, state.rank)
    if N <= 0:
        raise ConfigError("model is over-parameterized: nonpositive residual dof")
    I, J = mb.row_idx, mb.col_idx
    ix = np.ix_(I, J)
    if mu_block is None:
        mu_block = kernels.block_mean(
            lnk, linear_predictor(state, covs, I, J)
        )
    if y_block is None:
        y_block = np.where(data.mask[ix], data.values[ix], mu_block)
    w = data.weights[ix]
    phi_hat = (
        float(np.sum(w * (y_block - mu_block) ** 2 / fam.variance(mu_block)))
        * (n * m) / (I.size * J.size) / N
    )
    return (1.0 - rate) * state.phi + rate * phi_hat


def update_nb_shape_stochastic(state: FactorizationState, data: ResponseMatrix,
                               mb, rate: float, floor: float = NB_SHAPE_FLOOR,
                               covs: CovariateSet | None = None,
                               lnk: LinkSpec | None = None,
                               y_block=None, mu_block=None,
                               ceiling: float = NB_SHAPE_CEILING) -> float:
    """Smoothed stochastic moment update of the NB shape; returns the new value.

    alpha_hat = sum w mu^2 / sum w {(y - mu)^2 - mu} on the block, floored at
    ``floor``. A nonpositive denominator signals under/equi-dispersion, for
    which the moment estimate escapes to +inf; it is replaced by ``ceiling``
    (a Poisson surrogate) so the smoothed ``alpha_bar`` stays finite.
    """
    I, J = mb.row_idx, mb.col_idx
    ix = np.ix_(I, J)
    if mu_block is None:
        mu_block = kernels.block_mean(lnk, linear_predictor(state, covs, I, J))
    if y_block is None:
        y_block = np.where(data.mask[ix], data.values[ix], mu_block)
    w = data.weights[ix]
    num = float(np.sum(w * mu_block**2))
    den = float(np.sum(w * ((y_block - mu_block) ** 2 - mu_block)))
    alpha_hat = num / den if den > 0 else ceiling
    alpha_hat = min(max(floor, alpha_hat), ceiling)
    return (1.0 - rate) * state.nb_shape + rate * alpha_hat


def impute_block(state: FactorizationState, data: ResponseMatrix,
                 covs: CovariateSet, lnk: LinkSpec, mb) -> np.ndarray:
    """Working copy of the Y block with unobserved entries set to mu.

    Observed entries are returned untouched; callers own the copy.
    """
    I, J = mb.row_idx, mb.col_idx
    ix = np.ix_(I, J)
    block = np.array(data.values[ix], copy=True)
    miss = ~data.mask[ix]
    if miss.any():
        eta = linear_predictor(state, covs, I, J)
        block[miss] = kernels.block_mean(lnk, eta[miss])
    return block


# ---------------------------------------------------------------------------
# Shared fitting plumbing
# ---------------------------------------------------------------------------


def _partition(rng, size, block):
    """Random partition of range(size) into ceil(size/block) near-equal chunks."""
    perm = rng.permutation(size)
    n_blocks = int(np.ceil(size / block))
    return [np.sort(chunk) for chunk in np.array_split(perm, n_blocks)]


def _eval_entries(data: ResponseMatrix, cap: int, rng):
    """Fixed Monte-Carlo subsample of observed entries for objective tracking.

    Returns (rows, cols, scale); scale inflates the subsample deviance to the
    full-|Omega| magnitude. The full set is used when it fits the cap.
    """
    rows, cols = np.nonzero(data.mask)
    total = rows.size
    if total <= cap:
        return rows, cols, 1.0
    pick = np.sort(rng.choice(total, size=cap, replace=False))
    return rows[pick], cols[pick], total / cap


def _entrywise_eta(state, covs, rows, cols):
    eta = np.einsum("ik,ik->i", state.u[rows], state.v[cols])
    if covs.p:
        eta += np.einsum("ik,ik->i", covs.x[rows], state.b[cols])
    if covs.q:
        eta += np.einsum("ik,ik->i", state.gamma[rows], covs.z[cols])
    return eta


def _tracked_objective(state, data, covs, fam, lnk, penalty, entries):
    rows, cols, scale = entries
    eta = _entrywise_eta(state, covs, rows, cols)
    with np.errstate(all="ignore"):
        dev = kernels.block_deviance(
            fam, lnk, data.values[rows, cols], eta, data.weights[rows, cols]
        )
    return scale * dev / (2.0 * state.phi) + penalty_value(state, penalty)


def _live_family(fam: FamilySpec, state: FactorizationState) -> FamilySpec:
    """Private family copy whose NB shape tracks the state during fitting."""
    if fam.kind != "neg_binomial":
        return fam
    live = NegBinomial(state.nb_shape)
    return live


class _Tracker:
    """Objective trace, convergence streak and divergence snapshotting.

    Snapshots are refreshed on a small epoch stride: recent enough to be a
    useful restart point, cheap enough (O((n+m)d) per copy) to stay out of
    the per-iteration cost.
    """

    SNAPSHOT_STRIDE = 4

    def __init__(self, cfg, state, obj0):
        self.cfg = cfg
        self.trace = [obj0]
        self.phi_trace = [state.phi]
        self.nb_trace = [state.nb_shape]
        self.streak = 0
        self.converged = False
        self.snapshot = state.copy()
        if not np.isfinite(obj0):
            raise DivergenceError("objective is non-finite at the initial state")

    def update(self, state, obj):
        prev = self.trace[-1]
        self.trace.append(obj)
        self.phi_trace.append(state.phi)
        self.nb_trace.append(state.nb_shape)
        if not np.isfinite(obj):
            raise DivergenceError(
                "objective became non-finite; carrying the last finite state",
                state=self.snapshot,
            )
        if len(self.trace) % self.SNAPSHOT_STRIDE == 0:
            self.snapshot = state.copy()
        rel = abs(obj - prev) / (abs(prev) + 1e-12)
        self.streak = self.streak + 1 if rel < self.cfg.tol else 0
        if self.streak >= 2:
            self.converged = True
        return self.converged


def _finalize(state, data, covs, fam, lnk, penalty, tracker, epochs,
              identify_mode, started, extra=None):
    final = (
        project_constraints(state, covs, identify_mode) if identify_mode else state.copy()
    )
    report = FitReport(
        final_objective=penalized_objective(final, data, covs, fam, lnk, penalty),
        objective_trace=tracker.trace,
        epochs_run=epochs,
        converged=tracker.converged,
        elapsed_seconds=time.perf_counter() - started,
        phi_trace=tracker.phi_trace,
        nb_shape_trace=tracker.nb_trace,
        diagnostics=extra or {},
    )
    return final, report


def _prepare(data, covs, fam, lnk, init_state, rank, cfg):
    if init_state is None:
        if rank is None:
            raise ConfigError("pass init_state or rank")
        from .initialization import init_glm_svd

        init_state = init_glm_svd(data, covs, fam, lnk, rank, seed=cfg.seed)
    init_state.check_shapes(data, covs)
    state = init_state.copy()
    # start from a fully imputed working matrix so early iterations never
    # see placeholder values
    y_work = np.array(data.values, copy=True)
    miss = ~data.mask
    if miss.any():
        eta0 = linear_predictor(state, covs)
        y_work[miss] = kernels.block_mean(lnk, eta0[miss])
    return state, y_work, miss


# ---------------------------------------------------------------------------
# Block-wise adaptive SGD (the main algorithm)
# ---------------------------------------------------------------------------


def fit_asgd(data: ResponseMatrix, covs: CovariateSet, fam: FamilySpec,
             lnk: LinkSpec, penalty: PenaltyConfig, cfg: SgdConfig,
             init_state: FactorizationState | None = None, *,
             rank: int | None = None, identify_mode: str | None = "B1",
             dispersion: str = "auto", callback=None):
    """Block-wise adaptive stochastic quasi-Newton descent.

    One epoch sweeps a fixed random column partition {J_1..J_S}, pairing each
    J with one block I drawn from a fixed random row partition; per block the
    subsampled derivatives feed exponentially smoothed gradient/Hessian
    estimates, and only the touched rows of [Gamma, U] and [B, V] move.
    Returns ``(state, FitReport)`` with the state already projected onto the
    identifiability constraints (``identify_mode=None`` skips that).
    """
    started = time.perf_counter()
    state, y_work, miss = _prepare(data, covs, fam, lnk, init_state, rank, cfg)
    has_missing = bool(miss.any())
    est_phi, est_alpha = _resolve_dispersion(fam, dispersion)
    fam = _live_family(fam, state)
    n, m = data.values.shape
    p, q, d = covs.p, covs.q, state.rank
    rng = np.random.default_rng(cfg.seed)

    row_blocks = _partition(rng, n, min(cfg.mb_rows, n))
    col_blocks = _partition(rng, m, min(cfg.mb_cols, m))
    entries = _eval_entries(data, cfg.max_eval_entries, rng)
    lam_row, lam_col = penalty_vectors(covs, d, penalty)

    gbar_row = np.zeros((n, q + d))
    hbar_row = np.zeros((n, q + d))
    gbar_col = np.zeros((m, p + d))
    hbar_col = np.zeros((m, p + d))

    tracker = _Tracker(cfg, state, _tracked_objective(state, data, covs, fam, lnk,
                                                      penalty, entries))
    a1, a2 = cfg.smooth_a1, cfg.smooth_a2
    t = 0
    epochs = 0
    for epoch in range(cfg.max_epochs):
        for J in col_blocks:
            I = row_blocks[rng.integers(len(row_blocks))]
            rho = learning_rate(t, cfg)
            alpha_t = bias_correction(t + 1, a1, a2)

            eta = linear_predictor(state, covs, I, J)
            # row gather first, then column slice: sequential row reads are
            # prefetch-friendly where a joint two-axis gather is not
            y_blk = y_work[I][:, J]
            w_blk = data.weights[I][:, J]
            if t % cfg.nafill_every == 0 and has_missing:
                hole = miss[I][:, J]
                if hole.any():
                    y_blk[hole] = kernels.block_mean(lnk, eta[hole])
                    y_work[np.ix_(I, J)] = y_blk
            with np.errstate(all="ignore"):
                mu, dotd, ddotd = kernels.block_derivs(
                    fam, lnk, y_blk, eta, w_blk, state.phi
                )

            # all gradient pieces are taken at the pre-update parameters
            a_row = np.hstack([covs.z[J], state.v[J]])
            a_col = np.hstack([covs.x[I], state.u[I]])
            theta_row = np.hstack([state.gamma[I], state.u[I]])
            theta_col = np.hstack([state.b[J], state.v[J]])
            hat = assemble_sides(dotd, ddotd, a_row, a_col, theta_row, theta_col,
                                 lam_row, lam_col, m / J.size, n / I.size)

            gbar_col[J], hbar_col[J] = smooth_update(
                gbar_col[J], hbar_col[J], hat.g_colside, hat.h_colside, a1, a2
            )
            gbar_row[I], hbar_row[I] = smooth_update(
                gbar_row[I], hbar_row[I], hat.g_rowside, hat.h_rowside, a1, a2
            )

            delta_col = -alpha_t * gbar_col[J] / (hbar_col[J] + cfg.damping)
            state.b[J] += rho * delta_col[:, :p]
            state.v[J] += rho * delta_col[:, p:]
            delta_row = -alpha_t * gbar_row[I] / (hbar_row[I] + cfg.damping)
            state.gamma[I] += rho * delta_row[:, :q]
            state.u[I] += rho * delta_row[:, q:]

            mb = _IndexPair(I, J)
            if est_phi:
                state.phi = update_dispersion_stochastic(
                    state, data, covs, fam, mb, rho, y_block=y_blk, mu_block=mu
                )
            if est_alpha:
                state.nb_shape = update_nb_shape_stochastic(
                    state, data, mb, rho, y_block=y_blk, mu_block=mu
                )
                fam.nb_shape = state.nb_shape
            if callback is not None:
                callback(t, state)
            t += 1
        epochs = epoch + 1
        if tracker.update(state, _tracked_objective(state, data, covs, fam, lnk,
                                                    penalty, entries)):
            break

    extra = {
        "iterations": t,
        "row_blocks": [blk.tolist() for blk in row_blocks],
        "col_blocks": [blk.tolist() for blk in col_blocks],
        "algorithm": "asgd",
    }
    return _finalize(state, data, covs, fam, lnk, penalty, tracker, epochs,
                     identify_mode, started, extra)


class _IndexPair:
    """Lightweight (row_idx, col_idx) holder for the in-loop dispersion updates."""

    __slots__ = ("row_idx", "col_idx")

    def __init__(self, row_idx, col_idx):
        self.row_idx = row_idx
        self.col_idx = col_idx


# ---------------------------------------------------------------------------
# Diagonal quasi-Newton (full-data)
# ---------------------------------------------------------------------------


def fit_newton(data: ResponseMatrix, covs: CovariateSet, fam: FamilySpec,
               lnk: LinkSpec, penalty: PenaltyConfig, cfg: SgdConfig,
               init_state: FactorizationState | None = None, *,
               rank: int | None = None, identify_mode: str | None = "B1",
               dispersion: str = "auto", callback=None):
    """Global damped quasi-Newton with the diagonal Fisher information.

    Every iteration moves all of [Gamma, U] and [B, V] by the fixed step
    ``cfg.stepsize`` along -G/(H + damping) computed from the full data.
    """
    started = time.perf_counter()
    state, y_work, miss = _prepare(data, covs, fam, lnk, init_state, rank, cfg)
    est_phi, est_alpha = _resolve_dispersion(fam, dispersion)
    fam = _live_family(fam, state)
    n, m = data.values.shape
    p, q, d = covs.p, covs.q, state.rank
    lam_row, lam_col = penalty_vectors(covs, d, penalty)
    rng = np.random.default_rng(cfg.seed)
    entries = _eval_entries(data, cfg.max_eval_entries, rng)
    full = _IndexPair(np.arange(n), np.arange(m))

    tracker = _Tracker(cfg, state, _tracked_objective(state, data, covs, fam, lnk,
                                                      penalty, entries))
    epochs = 0
    for it in range(cfg.max_epochs):
        eta = linear_predictor(state, covs)
        if it % cfg.nafill_every == 0 and miss.any():
            y_work[miss] = kernels.block_mean(lnk, eta[miss])
        with np.errstate(all="ignore"):
            mu, dotd, ddotd = kernels.block_derivs(
                fam, lnk, y_work, eta, data.weights, state.phi
            )
        a_row = np.hstack([covs.z, state.v])
        a_col = np.hstack([covs.x, state.u])
        theta_row = np.hstack([state.gamma, state.u])
        theta_col = np.hstack([state.b, state.v])
        grads = assemble_sides(dotd, ddotd, a_row, a_col, theta_row, theta_col,
                               lam_row, lam_col, 1.0, 1.0)

        rho = cfg.stepsize
        delta_col = -grads.g_colside / (grads.h_colside + cfg.damping)
        delta_row = -grads.g_rowside / (grads.h_rowside + cfg.damping)
        state.b += rho * delta_col[:, :p]
        state.v += rho * delta_col[:, p:]
        state.gamma += rho * delta_row[:, :q]
        state.u += rho * delta_row[:, q:]

        if est_phi:
            state.phi = update_dispersion_stochastic(
                state, data, covs, fam, full, 1.0, y_block=y_work, mu_block=mu
            )
        if est_alpha:
            state.nb_shape = update_nb_shape_stochastic(
                state, data, full, 1.0, y_block=y_work, mu_block=mu
            )
            fam.nb_shape = state.nb_shape
        if callback is not None:
            callback(it, state)
        epochs = it + 1
        if tracker.update(state, _tracked_objective(state, data, covs, fam, lnk,
                                                    penalty, entries)):
            break

    return _finalize(state, data, covs, fam, lnk, penalty, tracker, epochs,
                     identify_mode, started, {"algorithm": "newton"})


# ---------------------------------------------------------------------------
# AIRWLS (alternated row/column penalized Fisher scoring)
# ---------------------------------------------------------------------------


def fit_airwls(data: ResponseMatrix, covs: CovariateSet, fam: FamilySpec,
               lnk: LinkSpec, penalty: PenaltyConfig, cfg: SgdConfig,
               init_state: FactorizationState | None = None, *,
               rank: int | None = None, identify_mode: str | None = "B1",
               dispersion: str = "auto", callback=None):
    """Alternated iterative re-weighted least squares.

    Each outer iteration runs ``cfg.nsteps`` relaxed Fisher-scoring ridge
    steps for all [B, V] columns given (Gamma, U), then the same for all
    [Gamma, U] rows given the refreshed (B, V); every inner system is a
    (p+d)- or (q+d)-dimensional damped weighted least squares.
    """
    from .glm import fisher_step

    started = time.perf_counter()
    state, y_work, miss = _prepare(data, covs, fam, lnk, init_state, rank, cfg)
    est_phi, est_alpha = _resolve_dispersion(fam, dispersion)
    fam = _live_family(fam, state)
    n, m = data.values.shape
    p, q, d = covs.p, covs.q, state.rank
    lam_row, lam_col = penalty_vectors(covs, d, penalty)
    rng = np.random.default_rng(cfg.seed)
    entries = _eval_entries(data, cfg.max_eval_entries, rng)
    full = _IndexPair(np.arange(n), np.arange(m))
    w = data.weights

    tracker = _Tracker(cfg, state, _tracked_objective(state, data, covs, fam, lnk,
                                                      penalty, entries))
    epochs = 0
    for it in range(cfg.max_epochs):
        if it % cfg.nafill_every == 0 and miss.any():
            eta = linear_predictor(state, covs)
            y_work[miss] = kernels.block_mean(lnk, eta[miss])

        if p + d > 0:
            coef = np.hstack([state.b, state.v])
            offset = state.gamma @ covs.z.T if q else np.zeros((n, m))
            for _ in range(cfg.nsteps):
                design = np.hstack([covs.x, state.u])
                delta, _ = fisher_step(coef, y_work, w, design, fam, lnk,
                                       offset, lam_col, cfg.damping, state.phi)
                coef = coef + cfg.stepsize * delta
            state.b, state.v = coef[:, :p].copy(), coef[:, p:].copy()

        if q + d > 0:
            coef = np.hstack([state.gamma, state.u])
            offset_t = (covs.x @ state.b.T).T if p else np.zeros((m, n))
            design = np.hstack([covs.z, state.v])
            for _ in range(cfg.nsteps):
                delta, _ = fisher_step(coef, y_work.T, w.T, design, fam, lnk,
                                       offset_t, lam_row, cfg.damping, state.phi)
                coef = coef + cfg.stepsize * delta
            state.gamma, state.u = coef[:, :q].copy(), coef[:, q:].copy()

        if est_phi or est_alpha:
            eta = linear_predictor(state, covs)
            mu = kernels.block_mean(lnk, eta)
            if est_phi:
                state.phi = update_dispersion_stochastic(
                    state, data, covs, fam, full, 1.0, y_block=y_work, mu_block=mu
                )
            if est_alpha:
                state.nb_shape = update_nb_shape_stochastic(
                    state, data, full, 1.0, y_block=y_work, mu_block=mu
                )
                fam.nb_shape = state.nb_shape
        if callback is not None:
            callback(it, state)
        epochs = it + 1
        if tracker.update(state, _tracked_objective(state, data, covs, fam, lnk,
                                                    penalty, entries)):
            break

    return _finalize(state, data, covs, fam, lnk, penalty, tracker, epochs,
                     identify_mode, started, {"algorithm": "airwls"})
