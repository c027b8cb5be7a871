"""Beam-delay domain channel estimation for wideband near-field arrays."""

from .baselines import SompResult, ls_oracle, somp_estimate
from .channel import (PathParams, ScenarioConfig, beam_steering, load_config, path_response,
                      sample_paths, synthesize_channel)
from .dictionary import Dictionary, SamplingGrid, build_dictionary, build_grid
from .harness import ExperimentSpec, NmseRecord, nmse_db, run_experiment
from .hmp import BGPrior, HMPOptions, bg_denoiser, estimate
from .mdgpp import MDGPPOptions, two_stage_estimate
from .measurement import HybridPrecoder, apply_measurement, build_precoder, calibrate_noise

__all__ = [
    "BGPrior", "Dictionary", "ExperimentSpec", "HMPOptions", "HybridPrecoder", "MDGPPOptions",
    "NmseRecord", "PathParams", "SamplingGrid", "ScenarioConfig", "SompResult",
    "apply_measurement", "beam_steering", "bg_denoiser", "build_dictionary", "build_grid",
    "build_precoder", "calibrate_noise", "estimate", "load_config", "ls_oracle", "nmse_db",
    "path_response", "run_experiment", "sample_paths", "somp_estimate", "synthesize_channel",
    "two_stage_estimate",
]
