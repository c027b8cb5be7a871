"""Hybrid-precoder pilot observations ``y = F_bar^H h + z``.

Received vectors use the measurement-major ordering: entry ``m * Np + p``
is measurement ``m`` on pilot subcarrier ``p``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ScenarioConfig


@dataclass(frozen=True)
class HybridPrecoder:
    """Per-subcarrier phase-shifter matrices, ``blocks[p]`` is ``F_p`` (N x M)."""

    blocks: np.ndarray

    @property
    def Np(self) -> int:
        return self.blocks.shape[0]

    @property
    def N(self) -> int:
        return self.blocks.shape[1]

    @property
    def M(self) -> int:
        return self.blocks.shape[2]

    def dense(self) -> np.ndarray:
        """``F_bar = blkdiag(F_0, ..., F_{Np-1})`` with rows/columns in the
        channel and received-signal orderings respectively."""
        Np, N, M = self.blocks.shape
        F = np.zeros((Np * N, M * Np), dtype=complex)
        for p in range(Np):
            F[p * N:(p + 1) * N, np.arange(M) * Np + p] = self.blocks[p]
        return F


@dataclass(frozen=True)
class ReceivedSignal:
    y: np.ndarray
    sigma_z2: float


def build_precoder(rng: np.random.Generator, cfg: ScenarioConfig) -> HybridPrecoder:
    """Random uniform phases scaled to modulus ``1/sqrt(N)``."""
    theta = rng.uniform(0.0, 2.0 * np.pi, size=(cfg.Np, cfg.N, cfg.M))
    return HybridPrecoder(np.exp(1j * theta) / np.sqrt(cfg.N))


def apply_measurement(h, F: HybridPrecoder) -> np.ndarray:
    """Noiseless observation ``F_bar^H h`` in ``m * Np + p`` order.

    ``h`` may also be a matrix whose columns are channel vectors (e.g. the
    dictionary), giving ``F_bar^H U`` with the same row ordering.
    """
    h = np.asarray(h)
    Np, N, M = F.blocks.shape
    if h.shape[0] != Np * N:
        raise ValueError(f"channel length {h.shape[0]} != N*Np = {N * Np}")
    hb = h.reshape((Np, N) + h.shape[1:])
    if h.ndim == 1:
        s = np.einsum("pnm,pn->mp", F.blocks.conj(), hb)
        return s.reshape(M * Np)
    s = np.matmul(F.blocks.conj().transpose(0, 2, 1), hb)   # (Np, M, K)
    return s.transpose(1, 0, 2).reshape(M * Np, -1)


def adjoint_measurement(s, F: HybridPrecoder) -> np.ndarray:
    """``F_bar s``: maps a received-signal-ordered vector back to channel space."""
    Np, N, M = F.blocks.shape
    s = np.asarray(s)
    if s.shape[0] != M * Np:
        raise ValueError(f"signal length {s.shape[0]} != M*Np = {M * Np}")
    sb = s.reshape((M, Np) + s.shape[1:]).swapaxes(0, 1)     # (Np, M, ...)
    if s.ndim == 1:
        return np.einsum("pnm,pm->pn", F.blocks, sb).reshape(Np * N)
    return np.matmul(F.blocks, sb).reshape(Np * N, -1)


def calibrate_noise(s, snr_db) -> float:
    """Per-element noise variance giving the requested received SNR."""
    s = np.asarray(s)
    energy = float(np.vdot(s, s).real)
    if energy <= 0:
        raise ValueError("cannot calibrate noise against a zero signal")
    return energy / s.size * 10.0 ** (-snr_db / 10.0)


def add_noise(s, sigma_z2, rng: np.random.Generator) -> ReceivedSignal:
    if sigma_z2 < 0:
        raise ValueError("noise variance must be non-negative")
    s = np.asarray(s, dtype=complex)
    if sigma_z2 == 0:
        return ReceivedSignal(s.copy(), 0.0)
    z = (rng.standard_normal(s.shape) + 1j * rng.standard_normal(s.shape))
    return ReceivedSignal(s + np.sqrt(sigma_z2 / 2.0) * z, float(sigma_z2))
