import numpy as np
import pytest

import gmfkit as gk
from gmfkit.exceptions import ConfigError

MODES = ["B1", "B2", "B3"]


def random_state(rng, n=20, m=8, d=3, p=2, q=1):
    x = np.hstack([np.ones((n, 1)), rng.normal(size=(n, p - 1))]) if p else None
    z = np.hstack([np.ones((m, 1)), rng.normal(size=(m, q - 1))]) if q else None
    covs = gk.CovariateSet(x=x, z=z, n=n, m=m)
    state = gk.FactorizationState(
        b=rng.normal(size=(m, p)), gamma=rng.normal(size=(n, q)),
        u=rng.normal(size=(n, d)), v=rng.normal(size=(m, d)))
    return state, covs


@pytest.mark.parametrize("mode", MODES)
def test_predictor_preserved(mode, rng):
    state, covs = random_state(rng)
    eta = gk.linear_predictor(state, covs)
    out = gk.project_constraints(state, covs, mode)
    assert np.abs(gk.linear_predictor(out, covs) - eta).max() < 1e-10


@pytest.mark.parametrize("mode", MODES)
def test_constraints_satisfied(mode, rng):
    state, covs = random_state(rng)
    out = gk.project_constraints(state, covs, mode)
    rep = gk.check_constraints(out, covs, mode)
    assert max(rep.values()) < 1e-8


@pytest.mark.parametrize("mode", MODES)
def test_idempotent(mode, rng):
    state, covs = random_state(rng)
    once = gk.project_constraints(state, covs, mode)
    twice = gk.project_constraints(once, covs, mode)
    for blk in ("b", "gamma", "u", "v"):
        assert np.allclose(getattr(once, blk), getattr(twice, blk), atol=1e-9)


def test_intercept_centers_gamma(rng):
    n, m = 12, 5
    covs = gk.CovariateSet(x=np.ones((n, 1)), z=np.ones((m, 1)))
    state = gk.FactorizationState(
        b=rng.normal(size=(m, 1)), gamma=rng.normal(size=(n, 1)),
        u=rng.normal(size=(n, 2)), v=rng.normal(size=(m, 2)))
    out = gk.project_constraints(state, covs, "B1")
    assert np.abs(out.gamma.sum(axis=0)).max() < 1e-10
    assert np.abs(out.u.sum(axis=0)).max() < 1e-10


def test_svd_form_is_fixed_point(rng):
    # already-constrained factors come back unchanged up to column signs
    n, m, d = 15, 6, 2
    a = rng.normal(size=(n, m))
    left, sing, right_t = np.linalg.svd(a, full_matrices=False)
    u = left[:, :d] * sing[:d]
    v = right_t[:d].T
    covs = gk.CovariateSet.empty(n, m)
    state = gk.FactorizationState(np.zeros((m, 0)), np.zeros((n, 0)), u, v)
    out = gk.project_constraints(state, covs, "B1")
    signs = np.sign(np.sum(out.v * v, axis=0))
    assert np.allclose(out.u, u * signs, atol=1e-9)
    assert np.allclose(out.v, v * signs, atol=1e-9)


def test_rotation_breaks_b_but_not_a(rng):
    state, covs = random_state(rng, d=3)
    base = gk.project_constraints(state, covs, "B1")
    theta = 0.7
    rot = np.eye(3)
    rot[:2, :2] = [[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]]
    mixed = base.copy()
    mixed.u = base.u @ rot
    mixed.v = base.v @ rot
    rep = gk.check_constraints(mixed, covs, "B1")
    assert max(rep["xt_gamma"], rep["xt_u"], rep["zt_v"]) < 1e-8
    assert rep["normalization"] > 1e-3


@pytest.mark.parametrize("mode", MODES)
def test_uniqueness_across_reparameterizations(mode, rng):
    # executable identifiability: two parameterizations of one predictor
    # project to identical constrained parameters
    state, covs = random_state(rng, n=25, m=10, d=3, p=2, q=1)
    mix = rng.normal(size=(3, 3)) + 3 * np.eye(3)
    other = state.copy()
    other.u = state.u @ mix
    other.v = state.v @ np.linalg.inv(mix).T
    shift = rng.normal(size=(covs.p, covs.q))
    other.gamma = other.gamma + covs.x @ shift
    other.b = other.b - covs.z @ shift.T
    eta_gap = np.abs(gk.linear_predictor(other, covs)
                     - gk.linear_predictor(state, covs)).max()
    assert eta_gap < 1e-10
    a = gk.project_constraints(state, covs, mode)
    b = gk.project_constraints(other, covs, mode)
    for blk in ("b", "gamma", "u", "v"):
        assert np.allclose(getattr(a, blk), getattr(b, blk), atol=1e-8), blk


def test_b1_singular_values_sorted(rng):
    state, covs = random_state(rng, d=4)
    out = gk.project_constraints(state, covs, "B1")
    diag = np.diag(out.u.T @ out.u)
    assert (np.diff(diag) <= 1e-10).all()


def test_rank_deficient_flagged(rng):
    n, m, d = 10, 6, 3
    u = rng.normal(size=(n, 2))
    v = rng.normal(size=(m, 2))
    state = gk.FactorizationState(
        np.zeros((m, 0)), np.zeros((n, 0)),
        np.hstack([u, u[:, :1]]), np.hstack([v, np.zeros((m, 1))]))
    covs = gk.CovariateSet.empty(n, m)
    out, info = gk.project_constraints(state, covs, "B1", return_info=True)
    assert info["rank_deficient"]
    assert info["effective_rank"] == 2
    assert np.allclose(out.u[:, 2], 0.0)


def test_zero_rank_state_passes(rng):
    state = gk.FactorizationState.zeros(6, 4, p=0, q=0, d=0)
    covs = gk.CovariateSet.empty(6, 4)
    out = gk.project_constraints(state, covs, "B1")
    rep = gk.check_constraints(out, covs, "B1")
    assert rep["normalization"] == 0.0


def test_unknown_mode_rejected(rng):
    state, covs = random_state(rng)
    with pytest.raises(ConfigError):
        gk.project_constraints(state, covs, "B9")


def test_b3_sign_matrix_preserves_product(rng):
    # the final sign sweep satisfies D^2 = I, so U V' cannot change
    state, covs = random_state(rng, d=3)
    eta = gk.linear_predictor(state, covs)
    out = gk.project_constraints(state, covs, "B3")
    assert np.abs(gk.linear_predictor(out, covs) - eta).max() < 1e-10
    top = out.v[:3, :3]
    assert (np.diag(top) > 0).all()
    assert np.abs(top[np.triu_indices(3, k=1)]).max() < 1e-10
