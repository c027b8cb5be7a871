"""Hybrid message passing (HMP) for the Bernoulli-Gaussian sparse model
``y = G beta + z`` with learned sparsity and per-index slab powers.

The Lagrange multipliers of the constrained Bethe free energy are negative
precisions.  :class:`MessageState` keeps the equivalent positive variances
instead; the mapping to the multiplier names is

==================  =========================================
field               multiplier
==================  =========================================
``v_p``             ``-1 / varsigma^{s,b_s}``
``xi``              ``xi^{s,b_s}`` (unchanged)
``p_hat``           ``mu^{s,b_s}``
``w_s``             ``-1 / varsigma^{s,b_{s beta}}``
``mu_s_ext``        ``mu^{s,b_{s beta}}``
``v_s``             ``-pi^{s,b_s}``
``tau_x``           ``-1 / varsigma^{beta,b_{s beta}}``
``q``               ``-pi^{beta,b_beta}``
``v_r``             ``-1 / varsigma^{beta,b_beta}``
``r``               ``mu^beta``
==================  =========================================
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

log = logging.getLogger(__name__)

VAR_FLOOR = 1e-12


class DivergenceError(RuntimeError):
    """Raised when the iteration produces non-finite values despite damping."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []


@dataclass(frozen=True)
class BGPrior:
    """Bernoulli-Gaussian prior ``(1-lam) delta(b) + lam CN(b; 0, chi_k)``."""

    lam: float
    chi: np.ndarray

    def __post_init__(self):
        if not 0 < self.lam < 1:
            raise ValueError("sparsity level must lie in (0, 1)")
        if np.any(np.asarray(self.chi) < 0):
            raise ValueError("slab powers must be non-negative")

    def restrict(self, idx) -> "BGPrior":
        return BGPrior(self.lam, np.asarray(self.chi)[idx])


@dataclass(frozen=True)
class MessageState:
    """All per-iteration quantities of the message schedule.

    Length ``M*Np``: ``v_p, xi, p_hat, s_hat, sigma_s2, w_s, mu_s_ext, v_s``.
    Length ``K``: ``tau_x, q, v_r, r, beta_hat, sigma_beta2, nonzero_prob``.
    """

    beta_hat: np.ndarray
    sigma_beta2: np.ndarray
    tau_x: np.ndarray
    xi: np.ndarray
    v_p: np.ndarray | None = None
    p_hat: np.ndarray | None = None
    s_hat: np.ndarray | None = None
    sigma_s2: np.ndarray | None = None
    w_s: np.ndarray | None = None
    mu_s_ext: np.ndarray | None = None
    v_s: np.ndarray | None = None
    q: np.ndarray | None = None
    v_r: np.ndarray | None = None
    r: np.ndarray | None = None
    nonzero_prob: np.ndarray | None = None

    def restrict(self, idx) -> "MessageState":
        """Keep only the beta-side entries in ``idx``; signal-side unchanged."""
        kw = {}
        for name in ("beta_hat", "sigma_beta2", "tau_x", "q", "v_r", "r", "nonzero_prob"):
            val = getattr(self, name)
            kw[name] = None if val is None else val[idx]
        return replace(self, **kw)

    def is_finite(self) -> bool:
        for val in self.__dict__.values():
            if val is not None and not np.all(np.isfinite(val)):
                return False
        return True


@dataclass
class HMPOptions:
    max_iter: int = 200
    tol: float = 1e-6
    lambda_init: float = 0.1
    lambda_min: float = 1e-6
    learn_lambda: bool = True
    learn_chi: bool = True
    rho_init: float = 0.8
    rho_min: float = 0.02
    rho_growth: float = 1.1
    damping_retries: int = 5
    bfe_slack: float = 1e-8
    var_floor: float = VAR_FLOOR
    prior: BGPrior | None = None


@dataclass
class EstimateReport:
    beta_hat: np.ndarray
    h_hat: np.ndarray | None
    prior: BGPrior
    bfe_trace: list
    iterations_used: int
    state: MessageState
    converged: bool = False
    trace: list = field(default_factory=list)

    def write_trace_csv(self, path):
        """Write ``iteration,residual,bfe,lambda`` rows."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "residual", "bfe", "lambda"])
            for row in self.trace:
                writer.writerow([row["iteration"], f"{row['residual']:.9e}",
                                 f"{row['bfe']:.9e}", f"{row['lambda']:.9e}"])


def _log_cn0(x2, var):
    """log CN(x; 0, var) given ``|x|^2``."""
    return -np.log(np.pi * var) - x2 / var


def log_likelihood_ratio(mu, v, lam, chi):
    """``log LR`` = log of zero-vs-nonzero posterior odds for pseudo-observation
    ``mu`` with pseudo-variance ``v``."""
    m2 = np.abs(mu) ** 2
    return (np.log1p(-lam) + _log_cn0(m2, v)) - (np.log(lam) + _log_cn0(m2, chi + v))


def bg_denoiser(mu, v, lam, chi):
    """Posterior moments of ``[(1-lam) delta + lam CN(0, chi)] * CN(beta; mu, v)``.

    Returns ``(post_mean, post_var, nonzero_prob)``; broadcasts over arrays.
    """
    v = np.asarray(v, dtype=float)
    if np.any(v <= 0):
        raise ValueError("pseudo-variance must be positive")
    chi = np.asarray(chi, dtype=float)
    pi = expit(-log_likelihood_ratio(mu, v, lam, chi))
    gain = chi / (chi + v)
    slab_mean = gain * mu
    post_mean = pi * slab_mean
    post_var = pi * gain * v + pi * (1.0 - pi) * np.abs(slab_mean) ** 2
    return post_mean, post_var, pi


def initial_state(G, y, sigma_z2, lambda_init=0.1, var_floor=VAR_FLOOR):
    """Zero mean, energy-matched slab power; returns ``(state, prior)``."""
    m, K = G.shape
    colnorm2 = np.sum(np.abs(G) ** 2, axis=0)
    energy = float(np.vdot(y, y).real)
    excess = max(energy - m * sigma_z2, 1e-2 * energy)
    chi0 = excess / (lambda_init * K * np.maximum(colnorm2, var_floor))
    chi0 = np.maximum(chi0, var_floor)
    state = MessageState(
        beta_hat=np.zeros(K, dtype=complex),
        sigma_beta2=chi0.copy(),
        tau_x=chi0.copy(),
        xi=np.zeros(m, dtype=complex),
    )
    return state, BGPrior(lambda_init, chi0)


def _relaxed(base, correction, floor):
    """``1/(1/base - correction)`` guarded so it stays positive."""
    inv = 1.0 / base - correction
    out = np.where(inv > 0, 1.0 / np.where(inv > 0, inv, 1.0), base)
    return np.maximum(out, floor)


def hmp_iterate(state: MessageState, G, y, sigma_z2, prior: BGPrior, absG2=None,
                var_floor=VAR_FLOOR) -> MessageState:
    """One undamped pass of the HMP message schedule."""
    if absG2 is None:
        absG2 = np.abs(G) ** 2
    mnp = G.shape[0]
    s2 = max(float(sigma_z2), var_floor)

    # signal side
    v_p = np.maximum(absG2 @ state.tau_x, var_floor)
    p_hat = G @ state.beta_hat + state.xi * v_p
    s_hat = (v_p * y + s2 * p_hat) / (v_p + s2)
    sigma_s2 = np.maximum(v_p * s2 / (v_p + s2), var_floor)
    w_s = np.maximum(1.0 / np.maximum(1.0 / sigma_s2 - 1.0 / v_p, 1.0 / (s2 * 1e12)), var_floor)
    mu_s_ext = -state.xi * w_s + s_hat
    xi = -(mu_s_ext - p_hat) / (v_p + w_s)
    v_s = np.maximum((1.0 - sigma_s2 / v_p) / v_p, 0.0)

    # coefficient side
    q = np.maximum(absG2.T @ v_s, var_floor)
    v_r = _relaxed_minus(1.0 / q, state.tau_x / mnp, var_floor)
    r = state.beta_hat - v_r * (G.conj().T @ xi)
    beta_hat, sigma_beta2, pi = bg_denoiser(r, v_r, prior.lam, prior.chi)
    sigma_beta2 = np.maximum(sigma_beta2, var_floor)
    tau_x = _relaxed(sigma_beta2, 1.0 / (mnp * v_r), var_floor)

    return MessageState(beta_hat=beta_hat, sigma_beta2=sigma_beta2, tau_x=tau_x,
                        xi=xi, v_p=v_p, p_hat=p_hat, s_hat=s_hat, sigma_s2=sigma_s2,
                        w_s=w_s, mu_s_ext=mu_s_ext, v_s=v_s, q=q, v_r=v_r, r=r,
                        nonzero_prob=pi)


def _relaxed_minus(base, correction, floor):
    out = base - correction
    return np.maximum(np.where(out > 0, out, base), floor)


def slab_second_moment(state: MessageState, prior: BGPrior) -> np.ndarray:
    """``E{|beta_k|^2 | beta_k != 0}`` under the current coefficient beliefs.

    Equals ``(|beta_hat|^2 + sigma_beta2) / nonzero_prob`` for the undamped
    denoiser output, but is computed from the slab component directly so it
    stays finite when the nonzero probability underflows.
    """
    if state.r is None:
        pi = np.maximum(state.nonzero_prob if state.nonzero_prob is not None else 1.0, 1e-300)
        return (np.abs(state.beta_hat) ** 2 + state.sigma_beta2) / pi
    chi = np.asarray(prior.chi, dtype=float)
    gain = chi / (chi + state.v_r)
    return np.abs(gain * state.r) ** 2 + gain * state.v_r


def update_hyperparams(state: MessageState, prior: BGPrior, lambda_min=1e-6,
                       learn_lambda=True, learn_chi=True) -> BGPrior:
    """EM-style updates of the slab powers and the sparsity level.

    The slab power of index ``k`` is set to the second moment of ``beta_k``
    restricted to its nonzero component; the spike carries no information
    about the slab width.
    """
    chi = prior.chi
    if learn_chi:
        chi = slab_second_moment(state, prior)
    lam = prior.lam
    if learn_lambda and state.r is not None:
        lr = np.exp(np.minimum(log_likelihood_ratio(state.r, state.v_r, prior.lam, prior.chi), 700.0))
        lam = float(np.mean(1.0 / (1.0 + lr)))
        lam = min(max(lam, lambda_min), 1.0 - lambda_min)
    return BGPrior(lam, np.asarray(chi, dtype=float))


def evaluate_bfe_surrogate(state: MessageState, G, y, sigma_z2, prior: BGPrior,
                           absG2=None) -> float:
    """Bethe-free-energy style cost of the current beliefs.

    Sum of the KL divergences of the coefficient beliefs from the prior plus
    the expected negative log-likelihood of ``y`` under a Gaussian belief on
    ``G beta`` with mean ``G beta_hat`` and variance ``|G|^2 sigma_beta2``.
    """
    if state.r is None:
        return np.inf
    if absG2 is None:
        absG2 = np.abs(G) ** 2
    s2 = max(float(sigma_z2), VAR_FLOOR)
    v, r = state.v_r, state.r
    r2 = np.abs(r) ** 2
    log_z = np.logaddexp(np.log(prior.lam) + _log_cn0(r2, prior.chi + v),
                         np.log1p(-prior.lam) + _log_cn0(r2, v))
    kl = (-np.log(np.pi * v)
          - (np.abs(state.beta_hat - r) ** 2 + state.sigma_beta2) / v
          - log_z)
    resid = y - G @ state.beta_hat
    nu = absG2 @ state.sigma_beta2
    data = y.size * np.log(np.pi * s2) + (np.vdot(resid, resid).real + nu.sum()) / s2
    return float(kl.sum() + data)


def _damp(old: MessageState, new: MessageState, rho, mnp, var_floor):
    if rho >= 1.0:
        return new
    beta = rho * new.beta_hat + (1 - rho) * old.beta_hat
    var = rho * new.sigma_beta2 + (1 - rho) * old.sigma_beta2
    xi = rho * new.xi + (1 - rho) * old.xi
    tau_x = _relaxed(var, 1.0 / (mnp * new.v_r), var_floor)
    return replace(new, beta_hat=beta, sigma_beta2=var, xi=xi, tau_x=tau_x)


class HMPSolver:
    """Stateful driver: holds ``G``, the message state, prior and damping.

    :func:`estimate` wraps it for the full-dictionary case; the two-stage
    refinement drives :meth:`step` directly with a changing ``G``.
    """

    def __init__(self, G, y, sigma_z2, opts: HMPOptions | None = None,
                 state=None, prior=None):
        self.opts = opts or HMPOptions()
        self.y = np.asarray(y, dtype=complex)
        self.sigma_z2 = float(sigma_z2)
        self.set_matrix(G)
        if state is None:
            state, prior0 = initial_state(self.G, self.y, self.sigma_z2,
                                          self.opts.lambda_init, self.opts.var_floor)
            prior = prior or self.opts.prior or prior0
        self.state = state
        self.prior = prior
        self.rho = self.opts.rho_init
        self.bfe = np.inf

    def set_matrix(self, G):
        self.G = np.asarray(G)
        self.absG2 = np.abs(self.G) ** 2
        self.bfe = np.inf

    def surrogate(self, state) -> float:
        return evaluate_bfe_surrogate(state, self.G, self.y, self.sigma_z2,
                                      self.prior, self.absG2)

    def step(self, learn=True) -> MessageState:
        o = self.opts
        old = self.state
        if old.r is not None:
            self.bfe = self.surrogate(old)      # prior or G may have changed
        cand = hmp_iterate(old, self.G, self.y, self.sigma_z2, self.prior,
                           self.absG2, o.var_floor)
        mnp = self.G.shape[0]
        accepted = None
        for _ in range(o.damping_retries + 1):
            trial = _damp(old, cand, self.rho, mnp, o.var_floor)
            if trial.is_finite():
                j = self.surrogate(trial)
                if np.isfinite(j) and j <= self.bfe + o.bfe_slack + 1e-12 * abs(j):
                    accepted = (trial, j)
                    self.rho = min(1.0, self.rho * o.rho_growth)
                    break
                if accepted is None or (np.isfinite(j) and j < accepted[1]):
                    accepted = (trial, j)
            if self.rho <= o.rho_min:
                break
            self.rho = max(o.rho_min, self.rho / 2)
        if accepted is None or not accepted[0].is_finite():
            raise DivergenceError("non-finite HMP state after damping retries")
        self.state, self.bfe = accepted
        if learn:
            self.prior = update_hyperparams(self.state, self.prior, o.lambda_min,
                                            o.learn_lambda, o.learn_chi)
        return self.state


def estimate(y, G, U=None, sigma_z2=1e-10, opts: HMPOptions | None = None) -> EstimateReport:
    """Run HMP to convergence; ``h_hat = U @ beta_hat`` when ``U`` is given."""
    opts = opts or HMPOptions()
    solver = HMPSolver(G, y, sigma_z2, opts)
    trace, bfe_trace = [], []
    converged = False
    t = 0
    ynorm = max(np.linalg.norm(solver.y), 1e-300)
    for t in range(1, opts.max_iter + 1):
        prev = solver.state.beta_hat
        try:
            state = solver.step()
        except DivergenceError as exc:
            exc.trace = trace
            raise
        bfe_trace.append(solver.bfe)
        resid = np.linalg.norm(solver.y - solver.G @ state.beta_hat) / ynorm
        trace.append({"iteration": t, "residual": float(resid),
                      "bfe": float(solver.bfe), "lambda": solver.prior.lam})
        nb = np.linalg.norm(state.beta_hat)
        change = np.linalg.norm(state.beta_hat - prev)
        if (nb == 0 and change == 0) or (nb > 0 and change / nb < opts.tol):
            converged = True
            break
    beta = solver.state.beta_hat
    h_hat = None if U is None else U @ beta
    return EstimateReport(beta, h_hat, solver.prior, bfe_trace, t, solver.state,
                          converged, trace)
