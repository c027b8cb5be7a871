"""Two-stage estimation with per-grid-point perturbations.

Stage 1 runs HMP on the full dictionary.  Stage 2 keeps the strongest
columns, replaces each retained column by its first-order expansion around
the grid tuple, and alternates single HMP passes with box-constrained
quadratic updates of the angle, slope and delay offsets.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .dictionary import Dictionary, index_map
from .hmp import (DivergenceError, EstimateReport, HMPOptions, HMPSolver,
                  estimate)
from .measurement import HybridPrecoder, apply_measurement

log = logging.getLogger(__name__)

DOMAINS = ("psi", "eta", "tau")


class FlopCounter:
    """Tally of real floating-point operations in the refinement stage.

    A complex multiply-add counts as 8 real flops.
    """

    def __init__(self):
        self.total = 0

    def add(self, n):
        self.total += int(n)

    def cmatmul(self, m, k, n):
        self.add(8 * m * k * n)


@dataclass
class Perturbations:
    d_psi: np.ndarray
    d_eta: np.ndarray
    d_tau: np.ndarray
    bounds: dict

    @classmethod
    def zeros(cls, K_ref, bounds) -> "Perturbations":
        return cls(np.zeros(K_ref), np.zeros(K_ref), np.zeros(K_ref), dict(bounds))

    def get(self, domain) -> np.ndarray:
        return getattr(self, "d_" + domain)

    def set(self, domain, value):
        setattr(self, "d_" + domain, np.asarray(value, dtype=float))

    def in_boxes(self) -> bool:
        return all(np.all(np.abs(self.get(d)) <= self.bounds[d]) for d in DOMAINS)


@dataclass
class PrunedModel:
    support: np.ndarray
    U_ref: np.ndarray
    U_psi_ref: np.ndarray
    U_eta_ref: np.ndarray
    U_tau_ref: np.ndarray
    G_ref: np.ndarray | None = None

    @property
    def K_ref(self) -> int:
        return len(self.support)

    def derivative(self, domain) -> np.ndarray:
        return getattr(self, f"U_{domain}_ref")

    @classmethod
    def from_dictionary(cls, D: Dictionary, support, gain_orthogonal=False) -> "PrunedModel":
        s = np.asarray(support)
        U = D.U[:, s]
        ders = [D.U_psi[:, s], D.U_eta[:, s], D.U_tau[:, s]]
        if gain_orthogonal:
            ders = [gain_orthogonal_derivative(U, X) for X in ders]
        return cls(s, U, *ders)


def gain_orthogonal_derivative(U, X) -> np.ndarray:
    """Remove from each column of ``X`` its component along the matching
    column of ``U``.

    That component only rescales and rotates the column, which the complex
    gain already absorbs; left in, it dominates the delay derivative through
    the carrier term ``-2j*pi*fc*u`` and the angle derivative through the
    mean array offset.
    """
    coef = np.einsum("ik,ik->k", U.conj(), X) / np.einsum("ik,ik->k", U.conj(), U).real
    return X - U * coef


@dataclass
class QPProblem:
    """Minimize ``x^T P x - 2 u^T x`` subject to ``|x_k| <= bound``."""

    P: np.ndarray
    u: np.ndarray
    bound: float

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(x @ self.P @ x - 2.0 * self.u @ x)


@dataclass
class MDGPPOptions:
    T_ini: int = 100
    T_ref: int = 30
    E_th: float = 0.05
    n_sweeps: int = 3
    order: tuple = DOMAINS
    use_s_hat: bool = False
    gain_orthogonal: bool = True
    hmp: HMPOptions = field(default_factory=HMPOptions)


@dataclass
class TwoStageReport(EstimateReport):
    support: np.ndarray | None = None
    perturbations: Perturbations | None = None
    initial: EstimateReport | None = None
    fell_back: bool = False
    refinement_trace: list = field(default_factory=list)
    flops: int = 0

    def write_refinement_csv(self, path):
        """Write ``iteration,nmse_proxy,max_d_psi,max_d_eta,max_d_tau`` rows."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "nmse_proxy", "max_d_psi", "max_d_eta", "max_d_tau"])
            for row in self.refinement_trace:
                writer.writerow([row["iteration"]] + [f"{row[k]:.9e}" for k in
                                ("nmse_proxy", "max_d_psi", "max_d_eta", "max_d_tau")])


def prune(beta, E_th) -> np.ndarray:
    """Indices with ``|beta_k| >= E_th * max|beta|``, ascending."""
    if not 0 <= E_th <= 1:
        raise ValueError("E_th must lie in [0, 1]")
    mag = np.abs(np.asarray(beta))
    peak = mag.max(initial=0.0)
    if peak == 0:
        raise ValueError("cannot prune an all-zero coefficient vector")
    keep = mag >= E_th * peak
    if E_th == 0:
        keep &= mag > 0
    return np.flatnonzero(keep)


def assemble_perturbed(model: PrunedModel, pert: Perturbations) -> np.ndarray:
    """First-order perturbed columns ``U + U_psi diag(d_psi) + ...``."""
    return (model.U_ref + model.U_psi_ref * pert.d_psi + model.U_eta_ref * pert.d_eta
            + model.U_tau_ref * pert.d_tau)


def build_qp(G_x, G_rest, s_hat, beta_hat, sigma_beta2, bound, gram=None,
             counter: FlopCounter | None = None) -> QPProblem:
    """Quadratic model of ``E||s - (G_rest + G_x diag(x)) beta||^2`` in ``x``.

    ``G_x`` is the measured derivative matrix of the domain being updated and
    ``G_rest`` the measured dictionary with the other domains' offsets
    applied.  Expectation is over independent coefficient beliefs with means
    ``beta_hat`` and variances ``sigma_beta2``.
    """
    G_x = np.asarray(G_x)
    G_rest = np.asarray(G_rest)
    m, K = G_x.shape
    if G_rest.shape != (m, K) or len(beta_hat) != K or len(sigma_beta2) != K or len(s_hat) != m:
        raise ValueError("dimension mismatch in QP inputs")
    if gram is None:
        gram = G_x.conj().T @ G_x
        if counter:
            counter.cmatmul(K, m, K)
    moments = np.outer(beta_hat, beta_hat.conj()) + np.diag(sigma_beta2)
    P = np.real(gram.conj() * moments)
    P = 0.5 * (P + P.T)
    resid = s_hat - G_rest @ beta_hat
    cross = np.einsum("ik,ik->k", G_x.conj(), G_rest)
    u = np.real(beta_hat.conj() * (G_x.conj().T @ resid)) - np.real(cross) * sigma_beta2
    if counter:
        counter.cmatmul(m, K, 1)
        counter.cmatmul(K, m, 1)
        counter.add(8 * m * K + 8 * K * K)
    return QPProblem(P, u, float(bound))


def _regularized(qp: QPProblem):
    K = len(qp.u)
    eps = 1e-10 * float(np.trace(qp.P)) / max(K, 1)
    return qp.P + eps * np.eye(K), eps


def solve_qp_box(qp: QPProblem, n_sweeps=3, x0=None, history=None,
                 counter: FlopCounter | None = None) -> np.ndarray:
    """Box-constrained minimizer by closed form or cyclic coordinate descent.

    The unconstrained optimum is returned when it lies strictly inside the
    box.  Otherwise coordinate descent starts from whichever of ``x0`` and
    the clipped unconstrained optimum has the lower objective.  When
    ``history`` is a list, the objective after every coordinate update is
    appended to it.
    """
    P, eps = _regularized(qp)
    u, b = qp.u, qp.bound
    K = len(u)
    if counter:
        counter.add(K**3 // 3 + 2 * K * K)
    starts = []
    if eps > 0:
        try:
            x_free = np.linalg.solve(P, u)
        except np.linalg.LinAlgError:
            x_free = None
        if x_free is not None and np.all(np.isfinite(x_free)):
            if np.all(np.abs(x_free) < b):
                return x_free
            starts.append(np.clip(x_free, -b, b))
    if x0 is not None:
        starts.append(np.clip(np.asarray(x0, dtype=float), -b, b))
    if not starts:
        starts.append(np.zeros(K))

    def obj(x):
        return float(x @ P @ x - 2.0 * u @ x)

    x = min(starts, key=obj).copy()
    Px = P @ x
    for _ in range(n_sweeps):
        for k in range(K):
            pkk = P[k, k]
            if pkk <= 0:
                continue
            off = Px[k] - pkk * x[k]
            new = min(max((u[k] - off) / pkk, -b), b)
            delta = new - x[k]
            if delta != 0.0:
                Px += P[:, k] * delta
                x[k] = new
            if history is not None:
                history.append(float(x @ Px - 2.0 * u @ x))
        if counter:
            counter.add(4 * K * K)
    return x


def restrict_qp(qp: QPProblem, B) -> QPProblem:
    """The same QP over ``x = B z`` (e.g. one offset shared per grid line)."""
    B = np.asarray(B, dtype=float)
    return QPProblem(B.T @ qp.P @ B, B.T @ qp.u, qp.bound)


def shared_offset_basis(support, grid, domain) -> np.ndarray:
    """0/1 matrix tying offsets of retained columns that share a grid value in
    ``domain``; columns of the result index the distinct grid values."""
    k_an, k_sl, k_de = index_map(np.asarray(support), grid)
    key = {"psi": k_an, "eta": k_sl, "tau": k_de}[domain]
    values, inv = np.unique(key, return_inverse=True)
    B = np.zeros((len(support), len(values)))
    B[np.arange(len(support)), inv] = 1.0
    return B


def two_stage_estimate(y, D: Dictionary, F: HybridPrecoder, sigma_z2,
                       opts: MDGPPOptions | None = None, G=None,
                       counter: FlopCounter | None = None) -> TwoStageReport:
    """Prune after a full-dictionary HMP run, then refine gains and offsets.

    ``G`` may pass a precomputed ``F_bar^H U`` to skip the stage-1
    measurement.  See :func:`refine` for the second stage.
    """
    opts = opts or MDGPPOptions()
    y = np.asarray(y, dtype=complex)
    if G is None:
        G = apply_measurement(D.U, F)
    hopts = HMPOptions(**{**opts.hmp.__dict__, "max_iter": opts.T_ini})
    first = estimate(y, G, D.U, sigma_z2, hopts)
    return refine(y, D, F, sigma_z2, first, prune(first.beta_hat, opts.E_th), opts, G,
                  counter)


def refine(y, D: Dictionary, F: HybridPrecoder, sigma_z2, first: EstimateReport, support,
           opts: MDGPPOptions | None = None, G=None,
           counter: FlopCounter | None = None) -> TwoStageReport:
    """Alternate HMP passes and offset QPs on the columns in ``support``,
    starting from the stage-1 report ``first``.

    The offset updates fit the received ``y``; with ``opts.use_s_hat`` they
    fit the posterior mean of the noiseless signal instead, which at low
    pseudo-variance collapses onto the model's own prediction and lets the
    offsets drift.  Stage 2 counts as diverged when it produces non-finite
    values or ends with ``||y - G_ref beta||^2 > ||y||^2``; the stage-1
    estimate is then returned with ``fell_back`` set.  ``counter`` tallies
    the arithmetic of this stage only.
    """
    opts = opts or MDGPPOptions()
    counter = counter or FlopCounter()
    y = np.asarray(y, dtype=complex)
    if G is None:
        G = apply_measurement(D.U, F)
    hopts = HMPOptions(**{**opts.hmp.__dict__, "max_iter": opts.T_ini})
    support = np.asarray(support)
    if support.size == 0:
        raise ValueError("empty support")

    model = PrunedModel.from_dictionary(D, support, opts.gain_orthogonal)
    halves = {d: 0.5 * v for d, v in D.grid.intervals().items()}
    pert = Perturbations.zeros(model.K_ref, halves)

    m, Kr = G.shape[0], model.K_ref
    G0 = G[:, support]
    G_d = {d: apply_measurement(model.derivative(d), F) for d in DOMAINS}
    grams = {d: G_d[d].conj().T @ G_d[d] for d in DOMAINS}
    counter.cmatmul(m, F.N, 3 * Kr)          # three measured derivative blocks
    counter.cmatmul(Kr, m, 3 * Kr)           # their Gram matrices

    def measured(skip=None):
        out = G0.copy()
        for d in DOMAINS:
            if d != skip:
                out += G_d[d] * pert.get(d)
        counter.add(8 * m * Kr * (2 if skip else 3))
        return out

    solver = HMPSolver(G0, y, sigma_z2, hopts, state=first.state.restrict(support),
                       prior=first.prior.restrict(support))
    solver.rho = hopts.rho_init
    ynorm2 = max(float(np.vdot(y, y).real), 1e-300)
    rtrace, bfe_trace = [], list(first.bfe_trace)
    fell_back = False
    for t in range(1, opts.T_ref + 1):
        G_ref = measured()
        solver.set_matrix(G_ref)
        try:
            state = solver.step()
        except DivergenceError as exc:
            log.warning("refinement diverged at iteration %d: %s", t, exc)
            fell_back = True
            break
        counter.cmatmul(m, Kr, 6)            # one HMP pass: G, G^H and |G|^2 products
        bfe_trace.append(solver.bfe)
        s_hat = state.s_hat if (opts.use_s_hat and t > 1 and state.s_hat is not None) else y
        for d in opts.order:
            qp = build_qp(G_d[d], measured(skip=d), s_hat, state.beta_hat,
                          state.sigma_beta2, halves[d], gram=grams[d], counter=counter)
            pert.set(d, solve_qp_box(qp, opts.n_sweeps, x0=pert.get(d), counter=counter))
        G_now = measured()
        resid = y - G_now @ state.beta_hat
        rtrace.append({"iteration": t,
                       "nmse_proxy": float(np.vdot(resid, resid).real) / ynorm2,
                       "max_d_psi": float(np.max(np.abs(pert.d_psi))),
                       "max_d_eta": float(np.max(np.abs(pert.d_eta))),
                       "max_d_tau": float(np.max(np.abs(pert.d_tau)))})
        if not np.all(np.isfinite(pert.d_psi + pert.d_eta + pert.d_tau)):
            fell_back = True
            break
    if rtrace and not fell_back and not rtrace[-1]["nmse_proxy"] <= 1.0:
        # the refined fit explains y worse than the zero estimate does
        log.warning("refinement diverged: residual energy %.3g of ||y||^2",
                    rtrace[-1]["nmse_proxy"])
        fell_back = True

    if fell_back or not solver.state.is_finite():
        return TwoStageReport(first.beta_hat, first.h_hat, first.prior, first.bfe_trace,
                              first.iterations_used, first.state, first.converged,
                              first.trace, support=support, initial=first,
                              fell_back=True, refinement_trace=rtrace,
                              flops=counter.total)

    beta_full = np.zeros(D.K, dtype=complex)
    beta_full[support] = solver.state.beta_hat
    h_hat = assemble_perturbed(model, pert) @ solver.state.beta_hat
    return TwoStageReport(beta_full, h_hat, solver.prior, bfe_trace,
                          first.iterations_used + opts.T_ref, solver.state,
                          first.converged, first.trace, support=support,
                          perturbations=pert, initial=first, fell_back=False,
                          refinement_trace=rtrace, flops=counter.total)
