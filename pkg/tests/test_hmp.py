import csv
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bdce.hmp import (BGPrior, DivergenceError, HMPOptions, HMPSolver, MessageState,
                      bg_denoiser, estimate, evaluate_bfe_surrogate, hmp_iterate,
                      initial_state, log_likelihood_ratio, slab_second_moment,
                      update_hyperparams)
from bdce.oracles import denoiser_quadrature
from bdce.selftest import toy_problem

# 2-D quadrature of the slab at (mu, v, lam, chi) = (1, 0.5, 0.3, 2)
QUAD_MEAN = 0.2384174296902350
QUAD_VAR = 0.2530997878171978
QUAD_PI = 0.2980217871127938


def test_denoiser_reference_point():
    mean, var, pi = bg_denoiser(1 + 0j, 0.5, 0.3, 2.0)
    assert abs(mean - QUAD_MEAN) < 1e-8
    assert abs(var - QUAD_VAR) < 1e-8
    assert abs(pi - QUAD_PI) < 1e-8


def test_denoiser_limits():
    mu, v, chi = 0.7 - 0.2j, 0.3, 1.5
    mean, var, pi = bg_denoiser(mu, v, 1 - 1e-15, chi)
    assert mean == pytest.approx(chi / (chi + v) * mu)
    assert var == pytest.approx(chi * v / (chi + v))
    mean, var, _ = bg_denoiser(mu, v, 0.4, 0.0)
    assert mean == 0 and var == 0
    with pytest.raises(ValueError):
        bg_denoiser(mu, 0.0, 0.4, chi)


def test_denoiser_broadcasts():
    mu = np.array([0.1, 1 + 1j, -3j])
    mean, var, pi = bg_denoiser(mu, np.array([0.2, 0.3, 0.4]), 0.2, np.array([1.0, 2.0, 3.0]))
    for k in range(3):
        ref = bg_denoiser(mu[k], [0.2, 0.3, 0.4][k], 0.2, [1.0, 2.0, 3.0][k])
        assert np.allclose([mean[k], var[k], pi[k]], ref)


@settings(max_examples=40, deadline=None)
@given(re=st.floats(-4, 4), im=st.floats(-4, 4), logv=st.floats(-2, 1),
       lam=st.floats(0.02, 0.98), logchi=st.floats(-2, 1))
def test_denoiser_matches_quadrature(re, im, logv, lam, logchi):
    mu, v, chi = complex(re, im), 10.0**logv, 10.0**logchi
    got = bg_denoiser(mu, v, lam, chi)
    ref = denoiser_quadrature(mu, v, lam, chi)
    assert max(abs(a - b) for a, b in zip(got, ref)) < 1e-8
    assert got[1] >= 0


def test_likelihood_ratio_identity(rng):
    mu = rng.normal(size=50) + 1j * rng.normal(size=50)
    v, chi = 10 ** rng.uniform(-2, 1, 50), 10 ** rng.uniform(-2, 1, 50)
    _, _, pi = bg_denoiser(mu, v, 0.2, chi)
    assert np.allclose(1 / (1 + np.exp(log_likelihood_ratio(mu, v, 0.2, chi))), pi, atol=1e-12)


def _state_with(r, v, K):
    return MessageState(beta_hat=np.zeros(K, complex), sigma_beta2=np.ones(K), tau_x=np.ones(K),
                        xi=np.zeros(3, complex), r=np.asarray(r, complex), v_r=np.asarray(v, float))


def test_lambda_update_clamps():
    K = 4
    prior = BGPrior(0.5, np.ones(K))
    high = update_hyperparams(_state_with(np.full(K, 1e3), np.ones(K), K), prior)
    assert high.lam == pytest.approx(1 - 1e-6)
    low = update_hyperparams(_state_with(np.zeros(K), np.ones(K), K), BGPrior(0.5, np.full(K, 1e12)))
    assert low.lam == pytest.approx(1e-6)


def test_lambda_update_is_mean_nonzero_prob(rng):
    K = 7
    r, v = rng.normal(size=K) + 1j * rng.normal(size=K), rng.uniform(0.1, 1, K)
    prior = BGPrior(0.3, rng.uniform(0.5, 2, K))
    _, _, pi = bg_denoiser(r, v, prior.lam, prior.chi)
    assert update_hyperparams(_state_with(r, v, K), prior).lam == pytest.approx(pi.mean(), abs=1e-12)


def test_slab_power_update_uses_nonzero_component(rng):
    K = 5
    r, v = rng.normal(size=K) + 1j * rng.normal(size=K), rng.uniform(0.1, 1, K)
    prior = BGPrior(0.3, rng.uniform(0.5, 2, K))
    mean, var, pi = bg_denoiser(r, v, prior.lam, prior.chi)
    state = replace(_state_with(r, v, K), beta_hat=mean, sigma_beta2=var, nonzero_prob=pi)
    assert np.allclose(slab_second_moment(state, prior), (np.abs(mean) ** 2 + var) / pi)
    fixed = update_hyperparams(state, prior, learn_chi=False, learn_lambda=False)
    assert np.array_equal(fixed.chi, prior.chi) and fixed.lam == prior.lam


def test_prior_validation():
    with pytest.raises(ValueError):
        BGPrior(1.0, np.ones(2))
    with pytest.raises(ValueError):
        BGPrior(0.5, -np.ones(2))


def test_initial_state_energy_matching(rng):
    G, y, _, _ = toy_problem(rng, 6, 16, 1e-2)
    state, prior = initial_state(G, y, 1e-2, 0.1)
    colnorm2 = np.sum(np.abs(G) ** 2, axis=0)
    expect = (np.vdot(y, y).real - 16 * 1e-2) / (0.1 * 6 * colnorm2)
    assert np.allclose(prior.chi, expect)
    assert not np.any(state.beta_hat) and not np.any(state.xi)
    assert np.array_equal(state.sigma_beta2, prior.chi)


def test_toy_problem_matches_enumeration():
    from bdce.oracles import mmse_by_enumeration
    rng = np.random.default_rng(11)
    for _ in range(3):
        G, y, lam, chi = toy_problem(rng, 5, 14, 1e-4)
        opts = HMPOptions(max_iter=20000, tol=1e-13, prior=BGPrior(lam, np.full(5, chi)),
                          learn_lambda=False, learn_chi=False)
        got = estimate(y, G, None, 1e-4, opts).beta_hat
        exact = mmse_by_enumeration(y, G, 1e-4, lam, chi)
        assert np.linalg.norm(got - exact) / np.linalg.norm(exact) < 1e-4


def _two_atom_problem():
    rng = np.random.default_rng(2)
    G = (rng.standard_normal((4, 2)) + 1j * rng.standard_normal((4, 2))) / 2
    z = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    return G, G @ np.array([1.0 + 0.5j, 0.0]) + np.sqrt(5e-3) * z, 1e-2


def _two_atom_error(iters):
    from bdce.oracles import mmse_by_enumeration
    G, y, s2 = _two_atom_problem()
    opts = HMPOptions(max_iter=iters, tol=0.0, prior=BGPrior(0.5, np.ones(2)),
                      learn_lambda=False, learn_chi=False)
    got = estimate(y, G, None, s2, opts).beta_hat
    return np.max(np.abs(got - mmse_by_enumeration(y, G, s2, 0.5, 1.0)))


@pytest.mark.xfail(strict=True, reason="with 4 measurements the fixed point sits ~6e-5 from "
                   "the exact posterior mean and takes ~1000 passes to reach")
def test_two_atom_toy_fifty_passes():
    assert _two_atom_error(50) < 1e-6


def test_two_atom_toy_converged():
    assert _two_atom_error(2000) < 1e-4


def _converged(rng, K=6, m=16, s2=1e-3):
    G, y, lam, chi = toy_problem(rng, K, m, s2)
    opts = HMPOptions(max_iter=20000, tol=1e-14, prior=BGPrior(lam, np.full(K, chi)),
                      learn_lambda=False, learn_chi=False)
    return G, y, s2, estimate(y, G, None, s2, opts)


def test_fixed_point_is_stationary():
    G, y, s2, rep = _converged(np.random.default_rng(0))
    assert rep.converged
    nxt = hmp_iterate(rep.state, G, y, s2, rep.prior)
    assert np.linalg.norm(nxt.beta_hat - rep.state.beta_hat) < 1e-10


def test_surrogate_rises_when_beliefs_are_perturbed():
    rng = np.random.default_rng(0)
    G, y, s2, rep = _converged(rng)
    st0, prior = rep.state, rep.prior
    j0 = evaluate_bfe_surrogate(st0, G, y, s2, prior)
    assert j0 == evaluate_bfe_surrogate(replace(st0), G, y, s2, prior)
    ups = 0
    for _ in range(100):
        noise = rng.standard_normal(len(st0.r)) + 1j * rng.standard_normal(len(st0.r))
        r = st0.r + 0.1 * np.sqrt(st0.v_r / 2) * noise
        mean, var, pi = bg_denoiser(r, st0.v_r, prior.lam, prior.chi)
        moved = replace(st0, r=r, beta_hat=mean, sigma_beta2=var, nonzero_prob=pi)
        ups += evaluate_bfe_surrogate(moved, G, y, s2, prior) >= j0
    assert ups >= 95


def test_surrogate_finite_after_first_pass(rng):
    G, y, _, _ = toy_problem(rng, 8, 20, 1e-2)
    state, prior = initial_state(G, y, 1e-2)
    assert evaluate_bfe_surrogate(state, G, y, 1e-2, prior) == np.inf
    nxt = hmp_iterate(state, G, y, 1e-2, prior)
    assert np.isfinite(evaluate_bfe_surrogate(nxt, G, y, 1e-2, prior))


def test_variances_stay_positive(rng):
    G, y, _, _ = toy_problem(rng, 8, 14, 1e-3)
    solver = HMPSolver(G, y, 1e-3)
    for _ in range(100):
        s = solver.step()
        assert s.sigma_beta2.min() > 0 and s.sigma_s2.min() > 0 and s.v_r.min() > 0


def test_zero_measurement_gives_zero(rng):
    G = (rng.standard_normal((20, 8)) + 1j * rng.standard_normal((20, 8))) / np.sqrt(40)
    rep = estimate(np.zeros(20, complex), G, None, 1e-3)
    assert np.linalg.norm(rep.beta_hat) < 1e-6


def test_noise_free_consistency():
    rng = np.random.default_rng(5)
    m, K = 40, 24
    G = (rng.standard_normal((m, K)) + 1j * rng.standard_normal((m, K))) / np.sqrt(2 * m)
    beta = np.zeros(K, complex)
    beta[[2, 9, 17]] = [1.0, -0.7j, 0.5 + 0.5j]
    y = G @ beta
    rep = estimate(y, G, np.eye(K), 1e-12, HMPOptions(max_iter=2000))
    assert np.linalg.norm(y - G @ rep.beta_hat) / np.linalg.norm(y) < 1e-5
    assert set(np.flatnonzero(np.abs(rep.beta_hat) > 1e-3)) == {2, 9, 17}
    assert np.allclose(rep.h_hat, rep.beta_hat)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises(rng):
    G, y, _, _ = toy_problem(rng, 4, 12, 1e-2)
    y = y.copy()
    y[0] = np.nan
    with pytest.raises(DivergenceError):
        estimate(y, G, None, 1e-2, HMPOptions(max_iter=3))


def test_trace_csv(tmp_path, rng):
    G, y, _, _ = toy_problem(rng, 6, 16, 1e-2)
    rep = estimate(y, G, None, 1e-2, HMPOptions(max_iter=7, tol=0.0))
    assert rep.iterations_used == 7 and len(rep.bfe_trace) == 7
    path = tmp_path / "trace.csv"
    rep.write_trace_csv(path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["iteration", "residual", "bfe", "lambda"]
    assert len(rows) == 8
