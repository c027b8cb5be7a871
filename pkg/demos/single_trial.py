"""One off-grid desk-scale trial: every estimator on the same pilots.

Run with ``python3 demos/single_trial.py [seed]``.
"""

import sys
import time

import numpy as np

from bdce import (ScenarioConfig, apply_measurement, build_dictionary, build_grid,
                  build_precoder, calibrate_noise, estimate, ls_oracle, nmse_db, path_response,
                  sample_paths, somp_estimate, synthesize_channel, two_stage_estimate)

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
rng = np.random.default_rng(seed)
cfg = ScenarioConfig(snr_db=15.0)

grid = build_grid(cfg)
D = build_dictionary(grid, cfg)
print(f"grid {grid.K_an} x {grid.K_sl} x {grid.K_de} = {D.K} columns, "
      f"slope step {grid.eta_delta:.4f}")

paths = sample_paths(rng, cfg)
for p in paths:
    print(f"  path psi={p.psi:+.3f} eta={p.eta:.3f} tau={p.tau * 1e9:.2f} ns |g|={abs(p.alpha):.2f}")
h = synthesize_channel(paths, cfg)
F = build_precoder(rng, cfg)
s = apply_measurement(h, F)
sigma2 = calibrate_noise(s, cfg.snr_db)
y = s + np.sqrt(sigma2 / 2) * (rng.standard_normal(s.size) + 1j * rng.standard_normal(s.size))
G = apply_measurement(D.U, F)

def show(name, h_hat, t0):
    print(f"{name:>8}: {nmse_db([h_hat], [h]):7.2f} dB  ({1e3 * (time.perf_counter() - t0):.0f} ms)")

t0 = time.perf_counter()
show("hmp", estimate(y, G, D.U, sigma2).h_hat, t0)
t0 = time.perf_counter()
two = two_stage_estimate(y, D, F, sigma2, G=G)
show("mdgpp", two.h_hat, t0)
print(f"          refined {len(two.support)} atoms, fell back: {two.fell_back}")
t0 = time.perf_counter()
show("somp", somp_estimate(y, G, cfg.L, y.size * sigma2, D.U).h_hat, t0)
U_true = np.stack([path_response(p, cfg) for p in paths], axis=1)
t0 = time.perf_counter()
show("oracle", ls_oracle(y, apply_measurement(U_true, F), range(cfg.L), U_true)[0], t0)
