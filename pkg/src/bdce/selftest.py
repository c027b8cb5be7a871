"""Fast oracle and property checks that can run outside pytest.

Each check returns ``(name, passed, detail)``; :func:`run_all` runs the lot.
"""

from __future__ import annotations

import numpy as np

from .channel import ScenarioConfig, beam_steering, pilot_frequencies
from .dictionary import basis_columns
from .hmp import BGPrior, HMPOptions, bg_denoiser, estimate
from .mdgpp import QPProblem, solve_qp_box
from .oracles import (denoiser_quadrature, far_field_response, finite_difference_column,
                      mmse_by_enumeration, projected_gradient_qp)


def check_denoiser(rng, n=20):
    worst = 0.0
    for _ in range(n):
        mu = complex(*rng.normal(0, 2, 2))
        v, chi = 10 ** rng.uniform(-2, 1, 2)
        lam = rng.uniform(0.05, 0.95)
        ref = denoiser_quadrature(mu, v, lam, chi)
        got = bg_denoiser(mu, v, lam, chi)
        worst = max(worst, *(abs(a - b) for a, b in zip(got, ref)))
    return "denoiser vs quadrature", bool(worst < 1e-8), f"max abs err {worst:.2e}"


def check_toy_mmse(rng, n=3, sigma2=1e-4):
    worst = 0.0
    for _ in range(n):
        K, m = int(rng.integers(2, 7)), int(rng.integers(12, 20))
        G, y, lam, chi = toy_problem(rng, K, m, sigma2)
        exact = mmse_by_enumeration(y, G, sigma2, lam, chi)
        opts = HMPOptions(max_iter=20000, tol=1e-13, prior=BGPrior(lam, np.full(K, chi)),
                          learn_lambda=False, learn_chi=False)
        got = estimate(y, G, None, sigma2, opts).beta_hat
        worst = max(worst, np.linalg.norm(got - exact) / np.linalg.norm(exact))
    return "HMP vs enumerated MMSE", bool(worst < 1e-4), f"max rel err {worst:.2e}"


def toy_problem(rng, K, m, sigma2, lam=0.3, chi=1.0):
    """Random complex Gaussian ``G`` and a draw from the matching BG prior with
    at least one active coefficient."""
    G = (rng.standard_normal((m, K)) + 1j * rng.standard_normal((m, K))) / np.sqrt(2 * m)
    active = rng.random(K) < lam
    active[rng.integers(K)] = True
    beta = np.zeros(K, dtype=complex)
    beta[active] = np.sqrt(chi / 2) * (rng.standard_normal(active.sum())
                                       + 1j * rng.standard_normal(active.sum()))
    z = rng.standard_normal(m) + 1j * rng.standard_normal(m)
    return G, G @ beta + np.sqrt(sigma2 / 2) * z, lam, chi


def check_qp(rng, n=10):
    worst = 0.0
    for _ in range(n):
        k = int(rng.integers(1, 7))
        A = rng.standard_normal((k + 2, k))
        qp = QPProblem(A.T @ A, rng.normal(0, 3, k), 0.5)
        ref = projected_gradient_qp(qp.P, qp.u, qp.bound)
        worst = max(worst, qp.objective(solve_qp_box(qp, n_sweeps=500)) - qp.objective(ref))
    return "box QP vs projected gradient", bool(worst < 1e-6), f"max objective gap {worst:.2e}"


def check_derivatives(rng, cfg=None, n=5):
    cfg = cfg or ScenarioConfig()
    worst = 0.0
    steps = {"psi": 1e-6, "eta": 1e-6, "tau": 1e-15}
    for _ in range(n):
        psi, eta, tau = rng.uniform(-0.9, 0.9), rng.uniform(0, 0.2), rng.uniform(0, cfg.delay_max)
        _, *ders = basis_columns(psi, eta, tau, cfg, derivatives=True)
        for dom, D in zip(("psi", "eta", "tau"), ders):
            fd = finite_difference_column(psi, eta, tau, cfg, dom, steps[dom])
            worst = max(worst, np.linalg.norm(D[:, 0] - fd) / np.linalg.norm(fd))
    return "derivatives vs finite differences", bool(worst < 1e-5), f"max rel err {worst:.2e}"


def check_far_field(rng, cfg=None, n=20):
    cfg = cfg or ScenarioConfig()
    worst = 0.0
    for f in pilot_frequencies(cfg)[:3]:
        for psi in rng.uniform(-1, 1, n):
            worst = max(worst, np.max(np.abs(beam_steering(0.0, psi, f, cfg)
                                              - far_field_response(psi, f, cfg))))
    return "zero slope gives planar response", bool(worst < 1e-10), f"max abs err {worst:.2e}"


CHECKS = (check_denoiser, check_qp, check_derivatives, check_far_field, check_toy_mmse)


def run_all(seed=0):
    rng = np.random.default_rng(seed)
    return [check(rng) for check in CHECKS]
