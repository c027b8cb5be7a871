"""Brute-force reference computations used to check the fast paths.

None of these call the estimator code they are meant to check.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy.special import logsumexp

from .channel import SPEED_OF_LIGHT, ScenarioConfig
from .dictionary import basis_columns


def denoiser_quadrature(mu, v, lam, chi, n=400, width=8.0):
    """Posterior mean, variance and nonzero probability of a Bernoulli-Gaussian
    coefficient by midpoint quadrature of the slab part on an ``n x n`` grid.

    The grid is centred on the slab-times-likelihood peak and spans ``width``
    standard deviations each way; the spike contributes a point mass at 0.
    """
    mu = complex(mu)
    s2 = chi * v / (chi + v)
    centre = chi / (chi + v) * mu
    half = width * np.sqrt(s2 / 2.0)          # per real dimension
    h = 2.0 * half / n
    t = -half + (np.arange(n) + 0.5) * h
    re, im = np.meshgrid(centre.real + t, centre.imag + t, indexing="ij")
    b = re + 1j * im
    # unnormalized densities, kept in log form until the end
    log_slab = (np.log(lam) - np.log(np.pi * chi) - np.abs(b) ** 2 / chi
                - np.log(np.pi * v) - np.abs(b - mu) ** 2 / v)
    log_spike = np.log1p(-lam) - np.log(np.pi * v) - abs(mu) ** 2 / v
    ref = max(log_slab.max(), log_spike)
    w = np.exp(log_slab - ref) * h * h
    z_slab = w.sum()
    z_spike = np.exp(log_spike - ref)
    z = z_slab + z_spike
    mean = (w * b).sum() / z
    second = (w * np.abs(b) ** 2).sum() / z
    return mean, second - abs(mean) ** 2, z_slab / z


def mmse_by_enumeration(y, G, sigma2, lam, chi):
    """Exact posterior mean of ``beta`` under an i.i.d. Bernoulli-Gaussian prior
    by summing over all ``2**K`` supports."""
    y = np.asarray(y, dtype=complex)
    m, K = G.shape
    chi = np.broadcast_to(np.asarray(chi, dtype=float), (K,))
    log_w, means = [], []
    for bits in itertools.product((0, 1), repeat=K):
        S = np.flatnonzero(bits)
        C = sigma2 * np.eye(m, dtype=complex)
        mean = np.zeros(K, dtype=complex)
        if len(S):
            GS = G[:, S]
            C = C + (GS * chi[S]) @ GS.conj().T
        sign, logdet = np.linalg.slogdet(C)
        Ci_y = np.linalg.solve(C, y)
        ll = -m * np.log(np.pi) - logdet - np.vdot(y, Ci_y).real
        prior = len(S) * np.log(lam) + (K - len(S)) * np.log1p(-lam)
        if len(S):
            mean[S] = chi[S] * (G[:, S].conj().T @ Ci_y)
        log_w.append(ll + prior)
        means.append(mean)
    log_w = np.asarray(log_w)
    w = np.exp(log_w - logsumexp(log_w))
    return np.tensordot(w, np.asarray(means), axes=1)


def projected_gradient_qp(P, u, bound, max_iter=200000, tol=1e-15):
    """Minimize ``x^T P x - 2 u^T x`` over ``|x_k| <= bound`` with accelerated
    projected gradient descent."""
    P = np.asarray(P, dtype=float)
    u = np.asarray(u, dtype=float)
    L = 2.0 * max(np.linalg.eigvalsh(P).max(), 1e-300)
    x = np.zeros(len(u))
    z, t = x.copy(), 1.0
    for _ in range(max_iter):
        grad = 2.0 * (P @ z - u)
        x_new = np.clip(z - grad / L, -bound, bound)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        z = x_new + (t - 1.0) / t_new * (x_new - x)
        if np.max(np.abs(x_new - x)) < tol * max(1.0, bound):
            x = x_new
            break
        x, t = x_new, t_new
    return x


def finite_difference_column(psi, eta, tau, cfg: ScenarioConfig, domain, step):
    """Central difference of one basis vector with respect to ``domain``."""
    args = {"psi": psi, "eta": eta, "tau": tau}
    hi, lo = dict(args), dict(args)
    hi[domain] += step
    lo[domain] -= step
    up = basis_columns(hi["psi"], hi["eta"], hi["tau"], cfg)[:, 0]
    dn = basis_columns(lo["psi"], lo["eta"], lo["tau"], cfg)[:, 0]
    return (up - dn) / (2.0 * step)


def far_field_response(psi, f, cfg: ScenarioConfig) -> np.ndarray:
    """Planar-wavefront ULA response, unit norm."""
    n = np.arange(cfg.N) - cfg.n_o
    return np.exp(-2j * np.pi * f / SPEED_OF_LIGHT * n * cfg.d_spacing * psi) / np.sqrt(cfg.N)


def scalar_phase_entry(eta, psi, f, n, cfg: ScenarioConfig) -> complex:
    """One entry of the phase steering vector, written out term by term."""
    dn = n - cfg.n_o
    arg = dn * cfg.d_spacing * psi + (dn * cfg.d_spacing) ** 2 * eta
    return complex(np.cos(2 * np.pi * f / SPEED_OF_LIGHT * arg),
                   -np.sin(2 * np.pi * f / SPEED_OF_LIGHT * arg))


def scalar_amplitude(eta, psi, cfg: ScenarioConfig) -> np.ndarray:
    """Amplitude profile from explicit per-antenna distances ``r^(n)``."""
    if eta == 0:
        return np.full(cfg.N, 1.0 / np.sqrt(cfg.N))
    r = (1.0 - psi**2) / eta
    out = np.empty(cfg.N)
    for n in range(cfg.N):
        dn = (n - cfg.n_o) * cfg.d_spacing
        out[n] = 1.0 / (r + dn * psi + dn * dn * (1.0 - psi**2) / r)
    return out / np.sqrt(np.sum(out**2))
