"""Greedy and genie-aided reference estimators."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class SompResult:
    support: list
    beta_ls: np.ndarray
    h_hat: np.ndarray | None
    residual_norms: list = field(default_factory=list)

    def beta_full(self, K) -> np.ndarray:
        beta = np.zeros(K, dtype=complex)
        beta[self.support] = self.beta_ls
        return beta


def somp_estimate(y, G, max_atoms, residual_tol=0.0, U=None, rank_tol=1e-10) -> SompResult:
    """Orthogonal matching pursuit over the columns of ``G``.

    The per-subcarrier frequency dependence lives inside ``G``, so a single
    joint residual covers all subcarriers.  Stops after ``max_atoms`` atoms or
    once ``||r||^2 <= residual_tol``.  An atom whose addition makes the
    least-squares problem rank deficient is dropped and barred from
    reselection.
    """
    y = np.asarray(y, dtype=complex)
    norms = np.linalg.norm(G, axis=0)
    norms = np.where(norms > 0, norms, np.inf)
    support: list[int] = []
    banned = np.zeros(G.shape[1], dtype=bool)
    beta = np.zeros(0, dtype=complex)
    resid = y.copy()
    history = [float(np.linalg.norm(resid))]
    if max_atoms <= 0 or np.vdot(y, y).real <= residual_tol or not np.any(y):
        return SompResult([], beta, _synth(U, [], beta, y), history)

    while len(support) < max_atoms and np.vdot(resid, resid).real > residual_tol:
        corr = np.abs(G.conj().T @ resid) / norms
        corr[banned] = -1.0
        corr[support] = -1.0
        k = int(np.argmax(corr))
        if corr[k] <= 0:
            break
        trial = support + [k]
        A = G[:, trial]
        sv = np.linalg.svd(A, compute_uv=False)
        if sv[-1] <= rank_tol * sv[0]:
            banned[k] = True
            continue
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        support, beta = trial, coef
        resid = y - A @ coef
        history.append(float(np.linalg.norm(resid)))
    return SompResult(support, beta, _synth(U, support, beta, y), history)


def _synth(U, support, beta, y):
    if U is None:
        return None
    if len(support) == 0:
        return np.zeros(U.shape[0], dtype=complex)
    return U[:, support] @ beta


def ls_oracle(y, G, true_support, U=None, rank_tol=1e-10):
    """Least-squares gains on a known support; returns ``(h_hat, beta_ls)``.

    Raises ``np.linalg.LinAlgError`` if the restricted matrix is rank
    deficient.
    """
    support = list(true_support)
    if not support:
        n = G.shape[0] if U is None else U.shape[0]
        return np.zeros(n, dtype=complex), np.zeros(0, dtype=complex)
    A = G[:, support]
    sv = np.linalg.svd(A, compute_uv=False)
    if sv[-1] <= rank_tol * sv[0]:
        raise np.linalg.LinAlgError("restricted matrix is rank deficient")
    beta, *_ = np.linalg.lstsq(A, np.asarray(y, dtype=complex), rcond=None)
    h_hat = A @ beta if U is None else U[:, support] @ beta
    return h_hat, beta
