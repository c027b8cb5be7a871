"""Angle-slope-delay sampling grid and the beam-delay transformation matrix.

Column ``k`` of ``U`` is the basis vector of the grid tuple
``(psi[k_an], eta[k_sl], tau[k_de])`` with
``k = k_de * K_an * K_sl + k_an * K_sl + k_sl``.  ``U_psi``, ``U_eta`` and
``U_tau`` hold the analytic first derivatives of each column with respect to
its own angle, slope and delay.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .channel import (SPEED_OF_LIGHT, ScenarioConfig, beam_steering,
                      pilot_frequencies)

log = logging.getLogger(__name__)

DEFAULT_MEMORY_LIMIT = 2 * 1024**3


@dataclass(frozen=True)
class SamplingGrid:
    psi_grid: np.ndarray
    eta_grid: np.ndarray
    tau_grid: np.ndarray
    psi_delta: float
    eta_delta: float
    tau_delta: float
    eta_fallback: bool = False

    @property
    def K_an(self) -> int:
        return len(self.psi_grid)

    @property
    def K_sl(self) -> int:
        return len(self.eta_grid)

    @property
    def K_de(self) -> int:
        return len(self.tau_grid)

    @property
    def K(self) -> int:
        return self.K_an * self.K_sl * self.K_de

    def tuples(self):
        """Per-column ``(psi, eta, tau)`` arrays of length ``K``."""
        k = np.arange(self.K)
        k_an, k_sl, k_de = index_map(k, self)
        return self.psi_grid[k_an], self.eta_grid[k_sl], self.tau_grid[k_de]

    def intervals(self) -> dict:
        return {"psi": self.psi_delta, "eta": self.eta_delta, "tau": self.tau_delta}


def slope_coherence(delta_eta, cfg: ScenarioConfig) -> float:
    """|c(0, 0, fc)^H c(delta_eta, 0, fc)| for unit-norm steering vectors."""
    c0 = beam_steering(0.0, 0.0, cfg.fc, cfg)
    c1 = beam_steering(delta_eta, 0.0, cfg.fc, cfg)
    return float(abs(np.vdot(c0, c1)))


def _slope_interval(cfg: ScenarioConfig, threshold, n_scan=512, n_bisect=60):
    """First slope spacing at which adjacent-sample coherence reaches
    ``threshold``; ``None`` if it never does within ``[0, eta_max]``."""
    grid = np.linspace(0.0, cfg.eta_max, n_scan + 1)[1:]
    prev = 0.0
    for x in grid:
        if slope_coherence(x, cfg) <= threshold:
            lo, hi = prev, x
            break
        prev = x
    else:
        return None
    for _ in range(n_bisect):
        mid = 0.5 * (lo + hi)
        if slope_coherence(mid, cfg) <= threshold:
            hi = mid
        else:
            lo = mid
    return hi


def build_grid(cfg: ScenarioConfig, eta_coherence_threshold: float = 0.5) -> SamplingGrid:
    """Uniform midpoint sampling of angle, slope and delay."""
    if not 0 < eta_coherence_threshold < 1:
        raise ValueError("coherence threshold must lie in (0, 1)")
    psi_delta = 2.0 / cfg.N
    K_an = math.ceil(round(2.0 / psi_delta, 9))
    psi_grid = -1.0 + (np.arange(K_an) + 0.5) * psi_delta

    tau_delta = 1.0 / (cfg.Np * cfg.df_pilot)
    K_de = max(1, math.ceil(round(cfg.delay_max / tau_delta, 9)))
    tau_grid = (np.arange(K_de) + 0.5) * tau_delta

    eta_delta = _slope_interval(cfg, eta_coherence_threshold)
    fallback = eta_delta is None
    if fallback:
        log.warning(
            "slope coherence never drops to %.3g for N=%d; using a single slope sample",
            eta_coherence_threshold, cfg.N,
        )
        eta_delta = cfg.eta_max
        eta_grid = np.array([cfg.eta_max / 2])
    else:
        K_sl = max(1, math.ceil(round(cfg.eta_max / eta_delta, 9)))
        eta_grid = (np.arange(K_sl) + 0.5) * eta_delta
    return SamplingGrid(psi_grid, eta_grid, tau_grid, psi_delta, eta_delta,
                        tau_delta, fallback)


def index_map(k, grid: SamplingGrid):
    """Flat column index to ``(k_an, k_sl, k_de)``; works on arrays."""
    k = np.asarray(k)
    if np.any(k < 0) or np.any(k >= grid.K):
        raise IndexError(f"flat index outside [0, {grid.K})")
    plane = grid.K_an * grid.K_sl
    k_de = k // plane
    k_an = (k % plane) // grid.K_sl
    k_sl = k % grid.K_sl
    if k.ndim == 0:
        return int(k_an), int(k_sl), int(k_de)
    return k_an, k_sl, k_de


def flat_index(k_an, k_sl, k_de, grid: SamplingGrid):
    return k_de * grid.K_an * grid.K_sl + k_an * grid.K_sl + k_sl


def _beam_block(psi, eta, freqs, cfg: ScenarioConfig):
    """Beam steering vectors and their psi/eta derivatives.

    ``psi`` and ``eta`` are 1-D arrays of equal length J; returns three arrays
    of shape (Np, N, J).  Where the distance model is invalid the amplitude
    falls back to uniform with zero derivative.
    """
    psi = np.atleast_1d(np.asarray(psi, dtype=float))
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    x = ((np.arange(cfg.N) - cfg.n_o) * cfg.d_spacing)[:, None]   # (N, 1)

    ex = eta[None, :] * x
    E = (1.0 - psi[None, :] ** 2) + ex * psi[None, :] + ex**2
    dE_dpsi = -2.0 * psi[None, :] + ex
    dE_deta = x * psi[None, :] + 2.0 * eta[None, :] * x**2

    valid = np.all(E > 0, axis=0)
    E_safe = np.where(valid[None, :], E, 1.0)
    w = 1.0 / E_safe
    nw = np.linalg.norm(w, axis=0)
    b = w / nw

    def amp_grad(dE):
        dw = -dE / E_safe**2
        db = dw / nw - w * np.sum(w * dw, axis=0) / nw**3
        return np.where(valid[None, :], db, 0.0)

    db_dpsi = amp_grad(dE_dpsi)
    db_deta = amp_grad(dE_deta)

    kp = (2.0 * np.pi * np.asarray(freqs) / SPEED_OF_LIGHT)[:, None, None]
    phase = x * psi[None, :] + x**2 * eta[None, :]                  # (N, J)
    a = np.exp(-1j * kp * phase[None])                              # (Np, N, J)
    c = a * b[None]
    c_psi = a * (-1j * kp * x[None] * b[None] + db_dpsi[None])
    c_eta = a * (-1j * kp * (x**2)[None] * b[None] + db_deta[None])
    return c, c_psi, c_eta


def basis_columns(psi, eta, tau, cfg: ScenarioConfig, derivatives=False):
    """Basis vectors for arbitrary (psi, eta, tau) tuples, shape (N*Np, J).

    With ``derivatives`` also returns the three partial-derivative matrices.
    """
    freqs = pilot_frequencies(cfg)
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    c, c_psi, c_eta = _beam_block(psi, eta, freqs, cfg)
    d = np.exp(-2j * np.pi * freqs[:, None] * tau[None, :])[:, None, :]   # (Np, 1, J)
    shape = (cfg.Np * cfg.N, -1)
    u = (d * c).reshape(shape)
    if not derivatives:
        return u
    u_psi = (d * c_psi).reshape(shape)
    u_eta = (d * c_eta).reshape(shape)
    u_tau = (d * c * (-2j * np.pi * freqs)[:, None, None]).reshape(shape)
    return u, u_psi, u_eta, u_tau


@dataclass(frozen=True)
class Dictionary:
    U: np.ndarray
    U_psi: np.ndarray
    U_eta: np.ndarray
    U_tau: np.ndarray
    grid: SamplingGrid

    @property
    def K(self) -> int:
        return self.U.shape[1]

    def derivative(self, domain: str) -> np.ndarray:
        return {"psi": self.U_psi, "eta": self.U_eta, "tau": self.U_tau}[domain]


def dictionary_nbytes(grid: SamplingGrid, cfg: ScenarioConfig) -> int:
    return 4 * cfg.N * cfg.Np * grid.K * np.dtype(complex).itemsize


def config_key(grid: SamplingGrid, cfg: ScenarioConfig) -> str:
    payload = {
        "cfg": cfg.to_dict(),
        "psi": grid.psi_grid.tolist(),
        "eta": grid.eta_grid.tolist(),
        "tau": grid.tau_grid.tolist(),
    }
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def build_dictionary(grid: SamplingGrid, cfg: ScenarioConfig, *, cache_dir=None,
                     memory_limit=DEFAULT_MEMORY_LIMIT) -> Dictionary:
    """Materialize ``U`` and its derivative matrices densely.

    With ``cache_dir`` the matrices are stored as ``dict_<key>.npz`` where the
    key hashes the scenario and grid, and reused on later calls.
    """
    nbytes = dictionary_nbytes(grid, cfg)
    if nbytes > memory_limit:
        raise MemoryError(
            f"dictionary needs {nbytes / 1024**3:.2f} GiB "
            f"(N*Np={cfg.N * cfg.Np}, K={grid.K} = {grid.K_an}x{grid.K_sl}x{grid.K_de}, "
            f"4 complex matrices); limit is {memory_limit / 1024**3:.2f} GiB"
        )
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / f"dict_{config_key(grid, cfg)}.npz"
        if path.exists():
            with np.load(path) as z:
                return Dictionary(z["U"], z["U_psi"], z["U_eta"], z["U_tau"], grid)

    freqs = pilot_frequencies(cfg)
    psi_j = np.repeat(grid.psi_grid, grid.K_sl)          # j = k_an * K_sl + k_sl
    eta_j = np.tile(grid.eta_grid, grid.K_an)
    c, c_psi, c_eta = _beam_block(psi_j, eta_j, freqs, cfg)
    d = np.exp(-2j * np.pi * freqs[:, None] * grid.tau_grid[None, :])   # (Np, K_de)
    dd = d[:, None, :, None]                                             # (Np, 1, K_de, 1)
    shape = (cfg.Np * cfg.N, grid.K)
    U = (dd * c[:, :, None, :]).reshape(shape)
    U_psi = (dd * c_psi[:, :, None, :]).reshape(shape)
    U_eta = (dd * c_eta[:, :, None, :]).reshape(shape)
    U_tau = (U.reshape(cfg.Np, -1) * (-2j * np.pi * freqs)[:, None]).reshape(shape)
    out = Dictionary(U, U_psi, U_eta, U_tau, grid)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savez(path, U=U, U_psi=U_psi, U_eta=U_eta, U_tau=U_tau)
    return out


def on_grid_beta(paths, grid: SamplingGrid, tol=1e-12):
    """Sparse gain vector for paths whose parameters sit exactly on the grid."""
    beta = np.zeros(grid.K, dtype=complex)
    for p in paths:
        k_an = int(np.argmin(abs(grid.psi_grid - p.psi)))
        k_sl = int(np.argmin(abs(grid.eta_grid - p.eta)))
        k_de = int(np.argmin(abs(grid.tau_grid - p.tau)))
        if (abs(grid.psi_grid[k_an] - p.psi) > tol
                or abs(grid.eta_grid[k_sl] - p.eta) > tol * max(1.0, grid.eta_delta)
                or abs(grid.tau_grid[k_de] - p.tau) > tol * grid.tau_delta):
            raise ValueError(f"path {p} is not on the grid")
        beta[flat_index(k_an, k_sl, k_de, grid)] += p.alpha
    return beta
