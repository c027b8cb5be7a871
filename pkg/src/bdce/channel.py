"""Spatial-frequency channel synthesis for a ULA under spherical-wave
propagation and beam squint.

Channel vectors are subcarrier-major: entry ``p * N + n`` holds antenna ``n``
on pilot subcarrier ``p``. The reference antenna defaults to ``n_o = 0``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

SPEED_OF_LIGHT = 299792458.0


@dataclass(frozen=True)
class ScenarioConfig:
    """Array, pilot and propagation parameters (SI units).

    ``d_spacing`` is always derived as half a wavelength at ``fc``.
    ``tau_max`` of ``None`` means a quarter of the pilot-grid period,
    ``0.25 / df_pilot``.
    """

    fc: float = 30e9
    df_pilot: float = 25e6
    N: int = 64
    Np: int = 16
    Nrf: int = 8
    Nps: int = 4
    r_min: float = 3.0
    L: int = 3
    n_o: int = 0
    tau_max: float | None = None
    snr_db: float = 15.0
    d_spacing: float = field(init=False)

    def __post_init__(self):
        if self.fc <= 0:
            raise ValueError("fc must be positive")
        if self.N < 1 or self.Np < 1:
            raise ValueError("N and Np must be >= 1")
        if self.Nrf < 1 or self.Nps < 1:
            raise ValueError("Nrf and Nps must be >= 1")
        if self.r_min <= 0:
            raise ValueError("r_min must be positive")
        if not 0 <= self.n_o < self.N:
            raise ValueError("reference antenna index outside the array")
        if self.df_pilot <= 0:
            raise ValueError("df_pilot must be positive")
        if self.tau_max is not None and self.tau_max <= 0:
            raise ValueError("tau_max must be positive")
        object.__setattr__(self, "d_spacing", SPEED_OF_LIGHT / (2.0 * self.fc))

    @property
    def M(self) -> int:
        """Measurements per subcarrier, ``Nrf * Nps``."""
        return self.Nrf * self.Nps

    @property
    def eta_max(self) -> float:
        return 1.0 / self.r_min

    @property
    def delay_max(self) -> float:
        if self.tau_max is None:
            return 0.25 / self.df_pilot
        return self.tau_max

    @property
    def bandwidth(self) -> float:
        return self.Np * self.df_pilot

    @classmethod
    def full_scale(cls, **changes) -> "ScenarioConfig":
        """The large configuration (N=256, Np=64, Nrf=16, Nps=8, L=6)."""
        base = dict(N=256, Np=64, Nrf=16, Nps=8, L=6)
        base.update(changes)
        return cls(**base)

    def with_(self, **changes) -> "ScenarioConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        out = asdict(self)
        out.pop("d_spacing")
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        known = {f.name for f in fields(cls) if f.init}
        unknown = set(data) - known - {"d_spacing"}
        if unknown:
            raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**{k: v for k, v in data.items() if k in known})


def load_config(path) -> ScenarioConfig:
    """Read a :class:`ScenarioConfig` from a JSON key-value file."""
    data = json.loads(Path(path).read_text())
    return ScenarioConfig.from_dict(data.get("scenario", data))


@dataclass(frozen=True)
class PathParams:
    """One propagation path.

    ``psi`` is the sine of the arrival angle, ``eta = (1 - psi**2) / r`` the
    slope and ``tau`` the delay to the reference antenna.
    """

    alpha: complex
    psi: float
    eta: float
    tau: float

    @property
    def distance(self) -> float:
        if self.eta == 0:
            return np.inf
        return (1.0 - self.psi**2) / self.eta


def pilot_frequencies(cfg: ScenarioConfig) -> np.ndarray:
    p = np.arange(cfg.Np)
    return cfg.fc + (p - cfg.Np / 2) * cfg.df_pilot


def pilot_frequency(p: int, cfg: ScenarioConfig) -> float:
    if not 0 <= p < cfg.Np:
        raise IndexError(f"subcarrier index {p} outside [0, {cfg.Np})")
    return cfg.fc + (p - cfg.Np / 2) * cfg.df_pilot


def _offsets(cfg: ScenarioConfig) -> np.ndarray:
    return (np.arange(cfg.N) - cfg.n_o) * cfg.d_spacing


def phase_steering(eta, psi, f, cfg: ScenarioConfig) -> np.ndarray:
    """Phase term of the near-field steering vector at frequency ``f``."""
    x = _offsets(cfg)
    return np.exp(-2j * np.pi * f / SPEED_OF_LIGHT * (x * psi + x**2 * eta))


def _amplitude_denominators(eta, psi, cfg):
    # (1 - psi^2) + eta*dn*d*psi + (eta*dn*d)^2 equals eta * r^(n), so the
    # normalized reciprocal is the same vector and stays finite at eta = 0.
    x = eta * _offsets(cfg)
    return (1.0 - psi**2) + x * psi + x**2


def amplitude_steering(eta, psi, cfg: ScenarioConfig) -> np.ndarray:
    """Unit-norm amplitude profile ``rho / r^(n)`` across the array.

    Raises ``ValueError`` when the second-order distance model gives a
    non-positive antenna distance.
    """
    if eta < 0:
        raise ValueError("slope must be non-negative")
    if eta == 0:
        return np.full(cfg.N, 1.0 / np.sqrt(cfg.N))
    den = _amplitude_denominators(eta, psi, cfg)
    if np.any(den <= 0):
        raise ValueError(
            f"distance model invalid for eta={eta:g}, psi={psi:g}: "
            "non-positive antenna distance"
        )
    w = 1.0 / den
    return w / np.linalg.norm(w)


def amplitude_is_valid(eta, psi, cfg: ScenarioConfig) -> bool:
    return eta == 0 or bool(np.all(_amplitude_denominators(eta, psi, cfg) > 0))


def in_taylor_regime(eta, psi, cfg: ScenarioConfig) -> bool:
    """True when the reconstructed distance exceeds the array aperture."""
    if eta == 0:
        return True
    r = (1.0 - psi**2) / eta
    return r > cfg.N * cfg.d_spacing and amplitude_is_valid(eta, psi, cfg)


def beam_steering(eta, psi, f, cfg: ScenarioConfig) -> np.ndarray:
    """``c(eta, psi, f) = a(eta, psi, f) * b(eta, psi)``; unit norm."""
    return phase_steering(eta, psi, f, cfg) * amplitude_steering(eta, psi, cfg)


def delay_steering(tau, cfg: ScenarioConfig, freqs=None) -> np.ndarray:
    if tau < 0:
        raise ValueError("delay must be non-negative")
    f = pilot_frequencies(cfg) if freqs is None else np.asarray(freqs)
    return np.exp(-2j * np.pi * f * tau)


def path_response(path: PathParams, cfg: ScenarioConfig, freqs=None) -> np.ndarray:
    """Unit-gain response ``[d(tau) (x) 1_N] o c_bar(eta, psi)``, shape (Np*N,)."""
    f = pilot_frequencies(cfg) if freqs is None else np.asarray(freqs, dtype=float)
    b = amplitude_steering(path.eta, path.psi, cfg)
    x = _offsets(cfg)
    phase = x * path.psi + x**2 * path.eta
    a = np.exp(-2j * np.pi * f[:, None] / SPEED_OF_LIGHT * phase[None, :])
    d = np.exp(-2j * np.pi * f * path.tau)
    return (d[:, None] * a * b[None, :]).ravel()


def synthesize_channel(paths, cfg: ScenarioConfig, freqs=None) -> np.ndarray:
    """Superpose path responses into a length ``N*Np`` channel vector.

    ``freqs`` overrides the pilot frequencies (e.g. all equal to ``fc`` to
    switch off beam squint).
    """
    h = np.zeros(cfg.N * cfg.Np, dtype=complex)
    for path in paths:
        h += path.alpha * path_response(path, cfg, freqs)
    return h


def sample_paths(rng: np.random.Generator, cfg: ScenarioConfig, eta_max=None,
                 max_tries=1000) -> list[PathParams]:
    """Draw ``cfg.L`` random paths with unit total power.

    Draws whose reconstructed distance falls inside the array aperture are
    rejected and redrawn.
    """
    if cfg.L < 1:
        raise ValueError("need at least one path")
    eta_hi = cfg.eta_max if eta_max is None else float(eta_max)
    tau_hi = cfg.delay_max
    params = []
    for _ in range(cfg.L):
        for _ in range(max_tries):
            psi = rng.uniform(-1.0, 1.0)
            eta = rng.uniform(0.0, eta_hi)
            tau = rng.uniform(0.0, tau_hi)
            if in_taylor_regime(eta, psi, cfg):
                break
        else:
            raise RuntimeError("could not draw a valid path; check eta_max")
        params.append((psi, eta, tau))
    g = (rng.standard_normal(cfg.L) + 1j * rng.standard_normal(cfg.L)) / np.sqrt(2)
    g /= np.linalg.norm(g)
    return [PathParams(complex(a), psi, eta, tau) for a, (psi, eta, tau) in zip(g, params)]
