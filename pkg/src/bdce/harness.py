"""Monte-Carlo experiment driver: parameter sweeps, NMSE aggregation, CSV.

Every trial draws its randomness from ``SeedSequence([seed, trial])`` so a
run is reproducible regardless of how trials are scheduled across worker
processes.  Within a trial the same channel, precoder phases and unit noise
realization are reused for every sweep value where the shapes allow it.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .baselines import ls_oracle, somp_estimate
from .channel import ScenarioConfig, path_response, sample_paths, synthesize_channel
from .dictionary import build_dictionary, build_grid
from .hmp import HMPOptions, estimate
from .mdgpp import MDGPPOptions, two_stage_estimate
from .measurement import apply_measurement, build_precoder, calibrate_noise

log = logging.getLogger(__name__)

SWEEP_VARS = ("snr_db", "n_pilot_symbols", "eta_max", "bandwidth")
ESTIMATORS = ("hmp", "mdgpp", "somp", "oracle")
CSV_HEADER = ["sweep_var", "sweep_value", "estimator", "nmse_db", "trials", "wall_ms"]
NMSE_FLOOR_DB = -300.0


@dataclass
class ExperimentSpec:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    sweep_var: str = "snr_db"
    values: tuple = (15.0,)
    trials: int = 50
    seed: int = 0
    estimators: tuple = ("hmp", "mdgpp", "somp", "oracle")
    out: str | None = None
    workers: int = 1
    timing: bool = False
    max_failed_frac: float = 0.0
    eta_coherence_threshold: float = 0.5
    hmp_iters: int = 200
    T_ini: int = 100
    T_ref: int = 30
    E_th: float = 0.05
    n_sweeps: int = 3
    somp_atoms: int | None = None

    def __post_init__(self):
        self.values = tuple(float(v) for v in self.values)
        self.estimators = tuple(self.estimators)
        self.validate()

    def validate(self):
        if self.trials < 1:
            raise ValueError("need at least one trial")
        if self.sweep_var not in SWEEP_VARS:
            raise ValueError(f"unknown sweep variable {self.sweep_var!r}; choose from {SWEEP_VARS}")
        if not self.values:
            raise ValueError("empty sweep")
        bad = set(self.estimators) - set(ESTIMATORS)
        if bad or not self.estimators:
            raise ValueError(f"unknown estimators {sorted(bad)}; choose from {ESTIMATORS}")
        for v in self.values:
            if not math.isfinite(v):
                raise ValueError("sweep values must be finite")
            if self.sweep_var == "n_pilot_symbols" and (v < 1 or v != int(v)):
                raise ValueError("pilot-symbol counts must be positive integers")
            if self.sweep_var in ("eta_max", "bandwidth") and v <= 0:
                raise ValueError(f"{self.sweep_var} values must be positive")
        if not 0 <= self.max_failed_frac <= 1:
            raise ValueError("max_failed_frac must lie in [0, 1]")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentSpec":
        data = dict(data)
        scenario = ScenarioConfig.from_dict(data.pop("scenario", {}))
        sweep = data.pop("sweep", None)
        if sweep is not None:
            data.setdefault("sweep_var", sweep.get("var", "snr_db"))
            data.setdefault("values", sweep.get("values", (15.0,)))
        known = {f.name for f in fields(cls)} - {"scenario"}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown experiment keys: {sorted(unknown)}")
        return cls(scenario=scenario, **data)

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["scenario"] = self.scenario.to_dict()
        out["values"] = list(self.values)
        out["estimators"] = list(self.estimators)
        return out


def load_spec(path) -> ExperimentSpec:
    return ExperimentSpec.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class NmseRecord:
    sweep_var: str
    sweep_value: float
    estimator: str
    nmse_db: float
    trials: int
    wall_ms: float | None = None
    flagged: int = 0


def nmse_ratio(h_hat, h) -> float:
    h = np.asarray(h)
    den = float(np.vdot(h, h).real)
    if den <= 0:
        raise ValueError("true channel has zero norm")
    e = np.asarray(h_hat) - h
    return float(np.vdot(e, e).real) / den


def nmse_db(h_hats, h_trues) -> float:
    """``10 log10`` of the mean per-trial normalized squared error."""
    if len(h_hats) != len(h_trues) or not h_trues:
        raise ValueError("need matching, non-empty estimate and truth lists")
    return ratio_to_db(np.mean([nmse_ratio(a, b) for a, b in zip(h_hats, h_trues)]))


def ratio_to_db(mean_ratio) -> float:
    if mean_ratio <= 0:
        return NMSE_FLOOR_DB
    return max(10.0 * math.log10(mean_ratio), NMSE_FLOOR_DB)


def scenario_for(spec: ExperimentSpec, value: float):
    """Scenario and path-sampling slope limit for one sweep value."""
    cfg = spec.scenario
    eta_max = None
    if spec.sweep_var == "snr_db":
        cfg = cfg.with_(snr_db=value)
    elif spec.sweep_var == "n_pilot_symbols":
        cfg = cfg.with_(Nps=int(value))
    elif spec.sweep_var == "eta_max":
        eta_max = value
    elif spec.sweep_var == "bandwidth":
        cfg = cfg.with_(df_pilot=value / cfg.Np)
    return cfg, eta_max


_DICT_CACHE: dict = {}


def _dictionary(cfg: ScenarioConfig, threshold):
    key = (tuple(sorted(cfg.to_dict().items())), threshold)
    if key not in _DICT_CACHE:
        if len(_DICT_CACHE) > 4:
            _DICT_CACHE.clear()
        grid = build_grid(cfg, threshold)
        _DICT_CACHE[key] = build_dictionary(grid, cfg)
    return _DICT_CACHE[key]


def trial_seeds(seed: int, trial: int):
    """Independent generators for paths, precoder phases and noise."""
    children = np.random.SeedSequence([int(seed), int(trial)]).spawn(3)
    return [np.random.default_rng(c) for c in children]


def run_trial(spec: ExperimentSpec, value: float, trial: int) -> dict:
    """One Monte-Carlo draw at one sweep value.

    Returns ``{estimator: (nmse_ratio or None, wall_s, error or None)}``.
    """
    cfg, eta_max = scenario_for(spec, value)
    D = _dictionary(cfg, spec.eta_coherence_threshold)
    rng_paths, rng_prec, rng_noise = trial_seeds(spec.seed, trial)
    paths = sample_paths(rng_paths, cfg, eta_max=eta_max)
    h = synthesize_channel(paths, cfg)
    F = build_precoder(rng_prec, cfg)
    G = apply_measurement(D.U, F)
    s = apply_measurement(h, F)
    sigma_z2 = calibrate_noise(s, cfg.snr_db)
    z = rng_noise.standard_normal((2, s.size))
    y = s + math.sqrt(sigma_z2 / 2.0) * (z[0] + 1j * z[1])

    out = {}
    for name in spec.estimators:
        t0 = time.perf_counter()
        try:
            if name == "hmp":
                h_hat = estimate(y, G, D.U, sigma_z2, HMPOptions(max_iter=spec.hmp_iters)).h_hat
            elif name == "mdgpp":
                opts = MDGPPOptions(T_ini=spec.T_ini, T_ref=spec.T_ref, E_th=spec.E_th,
                                    n_sweeps=spec.n_sweeps)
                h_hat = two_stage_estimate(y, D, F, sigma_z2, opts, G=G).h_hat
            elif name == "somp":
                atoms = cfg.L if spec.somp_atoms is None else spec.somp_atoms
                h_hat = somp_estimate(y, G, atoms, s.size * sigma_z2, D.U).h_hat
            else:
                U_true = np.stack([path_response(p, cfg) for p in paths], axis=1)
                h_hat, _ = ls_oracle(y, apply_measurement(U_true, F), range(len(paths)), U_true)
            ratio = nmse_ratio(h_hat, h)
            if not math.isfinite(ratio):
                raise FloatingPointError("non-finite NMSE")
            out[name] = (ratio, time.perf_counter() - t0, None)
        except Exception as exc:                      # flagged and excluded
            out[name] = (None, time.perf_counter() - t0, f"{type(exc).__name__}: {exc}")
    return out


def _work(args):
    spec, vi, value, trial = args
    return vi, trial, run_trial(spec, value, trial)


@dataclass
class ExperimentResult:
    records: list
    flagged: list
    breached: bool
    total: int = 0

    @property
    def flagged_frac(self) -> float:
        return len(self.flagged) / self.total if self.total else 0.0


def run_experiment(spec: ExperimentSpec) -> ExperimentResult:
    spec.validate()
    units = [(spec, vi, v, t) for vi, v in enumerate(spec.values) for t in range(spec.trials)]
    workers = max(1, int(spec.workers))
    if workers == 1:
        raw = [_work(u) for u in units]
    else:
        chunk = max(1, len(units) // (4 * workers))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            raw = list(pool.map(_work, units, chunksize=chunk))
    raw.sort(key=lambda r: (r[0], r[1]))

    records, flagged = [], []
    for vi, value in enumerate(spec.values):
        rows = [r[2] for r in raw if r[0] == vi]
        for name in spec.estimators:
            ratios, wall = [], 0.0
            for trial, row in enumerate(rows):
                ratio, dt, err = row[name]
                wall += dt
                if ratio is None:
                    flagged.append((value, name, trial, err))
                    log.warning("trial %d of %s at %s=%g flagged: %s",
                                trial, name, spec.sweep_var, value, err)
                else:
                    ratios.append(ratio)
            db = ratio_to_db(float(np.mean(ratios))) if ratios else float("nan")
            records.append(NmseRecord(spec.sweep_var, value, name, db, len(ratios),
                                      1e3 * wall if spec.timing else None,
                                      spec.trials - len(ratios)))
    total = len(spec.values) * len(spec.estimators) * spec.trials
    breached = len(flagged) > spec.max_failed_frac * total
    result = ExperimentResult(records, flagged, breached, total)
    if spec.out:
        write_csv(records, spec.out)
    return result


def format_csv(records) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in records:
        writer.writerow([r.sweep_var, f"{r.sweep_value:g}", r.estimator,
                         "nan" if math.isnan(r.nmse_db) else f"{r.nmse_db:.6f}",
                         r.trials, "" if r.wall_ms is None else f"{r.wall_ms:.1f}"])
    return buf.getvalue()


def write_csv(records, path):
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_csv(records))


def max_workers() -> int:
    return os.cpu_count() or 1
