import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from altdesign.asymptotic import (
    FORMS,
    approx_expected_loss,
    kl_project,
    sandwich,
    sandwich_from_matrices,
    table2_objective,
)
from altdesign.core import Design
from altdesign.errors import DimensionMismatch, DomainError, NonFiniteObjective, NonFiniteValue
from altdesign.michaelis import kl_objective
from altdesign.numerics import RandomStream

from conftest import random_spd


def oracle_gen_losses(I, J, theta, theta_tilde, p_gamma, draws, rng):
    """Direct simulation of the two normal expectations behind the generator forms.

    The MLE is drawn from N(beta_tilde, I^-1 J I^-1); the fitted-only block
    is then drawn from its conditional approximate posterior given theta.
    Returns per-draw SI and SE losses. beta_tilde's gamma block is arbitrary
    (the losses do not depend on it), so it is set to zero.
    """
    p = I.shape[0]
    g = p_gamma
    Iinv = np.linalg.inv(I)
    K = Iinv @ J @ Iinv
    beta_tilde = np.concatenate([np.zeros(g), theta_tilde])
    bhat = rng.multivariate_normal(beta_tilde, K, size=draws)
    Igg_inv = np.linalg.inv(I[:g, :g])
    reg = Igg_inv @ I[:g, g:]
    gam = bhat[:, :g] + (bhat[:, g:] - theta) @ reg.T
    gam = gam + rng.multivariate_normal(np.zeros(g), Igg_inv, size=draws)
    beta = np.hstack([gam, np.broadcast_to(theta, (draws, p - g))])
    r = beta - bhat
    se = np.einsum("bi,bi->b", r, r)
    si = (0.5 * p * math.log(2 * math.pi) - 0.5 * np.linalg.slogdet(I)[1]
          + 0.5 * np.einsum("bi,ij,bj->b", r, I, r))
    return si, se


# -- KL projection ----------------------------------------------------------------


def test_kl_project_identical_normal_models():
    theta = 1.7
    # E_y[log N(y; t, 1)] with y ~ N(theta, 1)
    res = kl_project(lambda t: -0.5 * math.log(2 * math.pi) - 0.5 * (1 + (theta - t[0]) ** 2), [0.0])
    assert res.beta_tilde[0] == pytest.approx(theta, abs=1e-6)
    assert res.converged


def test_kl_project_beats_grid_oracle():
    design = Design.on_interval(np.linspace(0.05, 1, 6))
    d3 = kl_objective([90.0, 60.0], design, sigma2=1.0, rho=0.5)
    d2 = lambda t: d3([t[0], t[1], 1.5])  # noqa: E731
    grid = [(a, b) for a in np.linspace(20, 200, 37) for b in np.linspace(20, 200, 37)]
    best = max(d2(np.array(t)) for t in grid)
    res = kl_project(d2, [150.0, 150.0])
    assert res.objective_value >= best - 1e-6


def test_kl_project_positive_coordinates_and_start_checks():
    res = kl_project(lambda t: -(math.log(t[0]) - 1.0) ** 2, [5.0], positive=[0])
    assert res.beta_tilde[0] == pytest.approx(math.e, rel=1e-6)
    with pytest.raises(DomainError):
        kl_project(lambda t: 0.0, [-1.0], positive=[0])
    with pytest.raises(NonFiniteValue):
        kl_project(lambda t: -math.inf, [1.0])


# -- sandwich matrices ------------------------------------------------------------


def test_sandwich_matches_triple_product(rng):
    I, J = random_spd(rng, 4), random_spd(rng, 4)
    mats = sandwich_from_matrices(I, J)
    oracle = np.linalg.inv(I) @ J @ np.linalg.inv(I)
    np.testing.assert_allclose(mats.K_tilde, oracle, atol=1e-8 * np.abs(oracle).max())


def test_identical_models_give_inverse_information(rng):
    I = random_spd(rng, 3)
    mats = sandwich(lambda t: I, lambda t: I, np.zeros(3))
    np.testing.assert_allclose(mats.K_tilde, np.linalg.inv(I), atol=1e-10)


def test_empty_gamma_block(rng):
    I, J = random_spd(rng, 3), random_spd(rng, 3)
    mats = sandwich_from_matrices(I, J, p_gamma=0)
    np.testing.assert_allclose(mats.T_theta, np.linalg.inv(I), atol=1e-10)
    np.testing.assert_array_equal(mats.S_theta, np.eye(3))
    assert mats.P2.shape == (0, 3)


def test_block_quantities(rng):
    I, J = random_spd(rng, 5), random_spd(rng, 5)
    mats = sandwich_from_matrices(I, J, p_gamma=2)
    Iinv = np.linalg.inv(I)
    # T is the theta block of I^-1, the Schur-complement inverse
    np.testing.assert_allclose(mats.T_theta, Iinv[2:, 2:], atol=1e-10)
    P2 = np.linalg.solve(I[:2, :2], I[:2, 2:])
    np.testing.assert_allclose(mats.S_theta, np.eye(3) + P2.T @ P2, atol=1e-10)
    # tr(I^-1) - tr(S T) = tr(I_gg^-1)
    lhs = np.trace(Iinv) - np.trace(mats.S_theta @ mats.T_theta)
    assert lhs == pytest.approx(np.trace(np.linalg.inv(I[:2, :2])), rel=1e-10)


def test_sandwich_input_checks(rng):
    I = random_spd(rng, 3)
    with pytest.raises(DimensionMismatch):
        sandwich_from_matrices(I, random_spd(rng, 2))
    with pytest.raises(DimensionMismatch):
        sandwich_from_matrices(I, I, p_gamma=3)
    bad = I.copy()
    bad[0, 1] += 1.0
    with pytest.raises(DomainError):
        sandwich_from_matrices(bad, I)


# -- approximate objectives ---------------------------------------------------------


@pytest.mark.parametrize("p_gamma", [0, 1, 2])
def test_identical_models_collapse_generator_forms(rng, p_gamma):
    I = random_spd(rng, 4)
    mats = sandwich_from_matrices(I, I, p_gamma)
    th = rng.standard_normal(4 - p_gamma)
    gen_se = table2_objective("gen-SE", th, th, mats)
    gen_si = table2_objective("gen-SI", th, th, mats)
    assert abs(gen_se - table2_objective("comp-TV", th, th, mats)) < 1e-10
    assert abs(gen_si - table2_objective("comp-entropy", th, th, mats)) < 1e-10


def test_generator_forms_match_brute_force():
    rng = np.random.default_rng(31)
    I = np.array([[2.0, 0.6], [0.6, 1.5]])
    J = np.array([[3.0, -0.4], [-0.4, 2.2]])
    mats = sandwich_from_matrices(I, J, p_gamma=1)
    theta, theta_tilde = np.array([0.4]), np.array([-0.3])
    si, se = oracle_gen_losses(I, J, theta, theta_tilde, 1, 200_000, rng)
    for form, draws in (("gen-SI", si), ("gen-SE", se)):
        closed = table2_objective(form, theta, theta_tilde, mats)
        mc_se = draws.std(ddof=1) / math.sqrt(draws.size)
        assert abs(draws.mean() - closed) < 3 * mc_se, form


def test_composite_and_internal_forms(rng):
    I, J = random_spd(rng, 3), random_spd(rng, 3)
    info = random_spd(rng, 3)
    mats = sandwich_from_matrices(I, J, 1)
    th = np.zeros(2)
    n_si = 1.5 * math.log(2 * math.pi)
    assert table2_objective("comp-TV", th, th, mats) == pytest.approx(np.trace(np.linalg.inv(I)))
    assert table2_objective("comp-entropy", th, th, mats) == pytest.approx(
        n_si - 0.5 * np.linalg.slogdet(I)[1] + 1.5)
    assert table2_objective("internal-A", th, th, mats, info) == pytest.approx(np.trace(np.linalg.inv(info)))
    assert table2_objective("internal-D", th, th, mats, info) == pytest.approx(
        n_si - 0.5 * np.linalg.slogdet(info)[1] + 1.5)
    with pytest.raises(DomainError):
        table2_objective("gen-XX", th, th, mats)
    with pytest.raises(DimensionMismatch):
        table2_objective("gen-SE", np.zeros(3), th, mats)


@given(st.integers(0, 10**6), st.sampled_from(["gen-SI", "gen-SE"]))
def test_theta_permutation_invariance(seed, form):
    rng = np.random.default_rng(seed)
    I, J = random_spd(rng, 4), random_spd(rng, 4)
    th, tt = rng.standard_normal(3), rng.standard_normal(3)
    order = np.array([0, 3, 1, 2])  # gamma stays first, theta coordinates permuted
    a = table2_objective(form, th, tt, sandwich_from_matrices(I, J, 1))
    b = table2_objective(form, th[order[1:] - 1], tt[order[1:] - 1],
                         sandwich_from_matrices(I[np.ix_(order, order)], J[np.ix_(order, order)], 1))
    assert a == pytest.approx(b, rel=1e-9)


@given(st.integers(0, 10**6))
def test_gen_se_at_least_comp_tv_when_no_misspecification(seed):
    # with J = I the bias term alone separates the two forms
    rng = np.random.default_rng(seed)
    I = random_spd(rng, 3)
    mats = sandwich_from_matrices(I, I, 1)
    th, tt = rng.standard_normal(2), rng.standard_normal(2)
    assert table2_objective("gen-SE", th, tt, mats) >= table2_objective("comp-TV", th, tt, mats) - 1e-12


# -- prior expectation ------------------------------------------------------------


def test_point_mass_prior():
    est = approx_expected_loss(lambda rng, B: np.full((B, 1), 2.0), lambda th: th[0] ** 3, 50, RandomStream(0))
    assert est.value == 8.0 and est.mc_standard_error == 0.0 and est.degenerate


def test_uniform_prior_second_moment():
    est = approx_expected_loss(lambda rng, B: rng.uniform(0, 1, (B, 1)), lambda th: th[0] ** 2, 10_000,
                               RandomStream(4))
    assert abs(est.value - 1.0 / 3.0) < 3 * est.mc_standard_error


def test_nonfinite_objective_reports_theta():
    with pytest.raises(NonFiniteObjective) as info:
        approx_expected_loss(lambda rng, B: rng.uniform(-1, 1, (B, 1)),
                             lambda th: math.inf if th[0] > 0 else 1.0, 100, RandomStream(1))
    assert info.value.theta[0] > 0


def test_forms_listed():
    assert set(FORMS) == {"gen-SI", "gen-SE", "comp-entropy", "comp-TV", "internal-D", "internal-A"}
