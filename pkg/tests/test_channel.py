import json

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from bdce.channel import (SPEED_OF_LIGHT, PathParams, ScenarioConfig, amplitude_is_valid,
                          amplitude_steering, beam_steering, delay_steering, load_config,
                          path_response, phase_steering, pilot_frequencies, pilot_frequency,
                          sample_paths, synthesize_channel)
from bdce.oracles import far_field_response, scalar_amplitude, scalar_phase_entry


def test_pilot_frequencies_centered_on_carrier(cfg):
    f = pilot_frequencies(cfg)
    assert len(f) == cfg.Np
    assert f[cfg.Np // 2] == cfg.fc
    assert np.allclose(np.diff(f), cfg.df_pilot)
    assert pilot_frequency(3, cfg) == f[3]
    with pytest.raises(IndexError):
        pilot_frequency(cfg.Np, cfg)


def test_half_wavelength_spacing(cfg):
    assert cfg.d_spacing == pytest.approx(SPEED_OF_LIGHT / cfg.fc / 2)


@pytest.mark.parametrize("bad", [dict(fc=0), dict(N=0), dict(Nrf=0), dict(r_min=-1),
                                 dict(n_o=64), dict(df_pilot=0), dict(tau_max=-1.0)])
def test_config_rejects_bad_values(bad):
    with pytest.raises(ValueError):
        ScenarioConfig(**bad)


def test_config_round_trip(tmp_path, cfg):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"scenario": cfg.with_(N=32).to_dict()}))
    assert load_config(p) == cfg.with_(N=32)
    with pytest.raises(ValueError, match="unknown"):
        ScenarioConfig.from_dict({"antennas": 4})


def test_full_scale_preset():
    big = ScenarioConfig.full_scale()
    assert (big.N, big.Np, big.Nrf, big.Nps, big.L) == (256, 64, 16, 8, 6)
    assert ScenarioConfig.full_scale(snr_db=5).snr_db == 5


def test_phase_matches_scalar_oracle(cfg):
    psi, eta, f = 0.31, 0.12, pilot_frequency(5, cfg)
    a = phase_steering(eta, psi, f, cfg)
    ref = [scalar_phase_entry(eta, psi, f, n, cfg) for n in range(cfg.N)]
    assert np.allclose(a, ref, atol=1e-12)


@pytest.mark.parametrize("psi,eta", [(0.0, 0.2), (-0.7, 0.05), (0.5, 0.3)])
def test_amplitude_matches_distance_oracle(cfg, psi, eta):
    assert np.allclose(amplitude_steering(eta, psi, cfg), scalar_amplitude(eta, psi, cfg),
                       atol=1e-12)


def test_amplitude_zero_slope_is_uniform(cfg):
    b = amplitude_steering(0.0, 0.4, cfg)
    assert np.allclose(b, 1 / np.sqrt(cfg.N))


def test_invalid_distance_model_raises(cfg):
    # endfire with a large slope drives the far-end distance negative
    psi, eta = -0.999, 30.0
    assert not amplitude_is_valid(eta, psi, cfg)
    with pytest.raises(ValueError, match="non-positive"):
        amplitude_steering(eta, psi, cfg)
    with pytest.raises(ValueError):
        amplitude_steering(-0.1, 0.0, cfg)


def test_zero_slope_is_planar(cfg):
    for f in pilot_frequencies(cfg):
        assert np.allclose(beam_steering(0.0, -0.2, f, cfg), far_field_response(-0.2, f, cfg),
                           atol=1e-12)


def test_single_frequency_removes_squint(cfg):
    path = PathParams(1.0, 0.4, 0.1, 3e-9)
    h = path_response(path, cfg, freqs=np.full(cfg.Np, cfg.fc)).reshape(cfg.Np, cfg.N)
    assert np.max(np.abs(h - h[0])) < 1e-12
    squinted = path_response(path, cfg).reshape(cfg.Np, cfg.N)
    ratio = squinted / squinted[0]
    # with squint the per-subcarrier ratio is no longer a scalar
    assert np.ptp(np.angle(ratio[-1])) > 1e-3


def test_delay_steering(cfg):
    d = delay_steering(2e-9, cfg)
    assert np.allclose(np.abs(d), 1)
    assert np.allclose(d, np.exp(-2j * np.pi * pilot_frequencies(cfg) * 2e-9))
    with pytest.raises(ValueError):
        delay_steering(-1e-9, cfg)


def test_path_response_structure(cfg):
    p = PathParams(1.0, 0.2, 0.05, 1e-9)
    h = path_response(p, cfg).reshape(cfg.Np, cfg.N)
    f = pilot_frequencies(cfg)
    for k in (0, 7, cfg.Np - 1):
        expect = np.exp(-2j * np.pi * f[k] * p.tau) * beam_steering(p.eta, p.psi, f[k], cfg)
        assert np.allclose(h[k], expect, atol=1e-12)


def test_synthesize_superposes(cfg):
    paths = [PathParams(0.6, 0.1, 0.0, 0.0), PathParams(-0.8j, -0.5, 0.2, 2e-9)]
    h = synthesize_channel(paths, cfg)
    expect = 0.6 * path_response(paths[0], cfg) - 0.8j * path_response(paths[1], cfg)
    assert np.allclose(h, expect)
    assert h.shape == (cfg.N * cfg.Np,)


def test_sample_paths(cfg):
    a = sample_paths(np.random.default_rng(5), cfg)
    b = sample_paths(np.random.default_rng(5), cfg)
    assert a == b
    assert len(a) == cfg.L
    assert sum(abs(p.alpha) ** 2 for p in a) == pytest.approx(1.0)
    for p in a:
        assert -1 <= p.psi <= 1 and 0 <= p.eta <= cfg.eta_max and 0 <= p.tau <= cfg.delay_max
        assert p.distance > cfg.N * cfg.d_spacing
    low = sample_paths(np.random.default_rng(5), cfg, eta_max=0.01)
    assert all(p.eta <= 0.01 for p in low)


@settings(max_examples=60, deadline=None)
@given(psi=st.floats(-1, 1), eta=st.floats(0, 1 / 3), p=st.integers(0, 15))
def test_steering_unit_norm_and_modulus(psi, eta, p):
    cfg = ScenarioConfig()
    assume(amplitude_is_valid(eta, psi, cfg))
    f = pilot_frequency(p, cfg)
    assert np.allclose(np.abs(phase_steering(eta, psi, f, cfg)), 1.0, atol=1e-12)
    assert np.linalg.norm(beam_steering(eta, psi, f, cfg)) == pytest.approx(1.0, abs=1e-12)
