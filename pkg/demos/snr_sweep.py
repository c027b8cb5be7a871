"""A short SNR sweep through the harness, printed as CSV.

Ten trials per point keeps it around a minute on one core; the acceptance
numbers use fifty.  Run with ``python3 demos/snr_sweep.py``.
"""

from bdce import ExperimentSpec, ScenarioConfig, run_experiment
from bdce.harness import format_csv

spec = ExperimentSpec(scenario=ScenarioConfig(), sweep_var="snr_db", values=(0, 5, 10, 15),
                      trials=10, seed=3, estimators=("hmp", "somp", "oracle"), timing=True)
result = run_experiment(spec)
print(format_csv(result.records), end="")
if result.flagged:
    print(f"# {len(result.flagged)} of {result.total} runs flagged")
