"""Pilot: reduced closed-loop cohort, 5 arms (criterion 6/7 orderings)."""
import sys
import time

sys.path.insert(0, "/root/pkg/src")

from hepdose.dosing import PolicySpec
from hepdose.simulator import (SimulationConfig, ptc_scenario_policy,
                               run_cohort, synth_cohort)

ARMS = [
    ptc_scenario_policy(10, "median_deviation"),
    ptc_scenario_policy(10, "indicator"),
    ptc_scenario_policy(10, "band_deviation"),
    PolicySpec(kind="naive"),
    PolicySpec(kind="weight_based"),
]

t0 = time.perf_counter()
cohort = synth_cohort(5, seed=0)
config = SimulationConfig(total_hours=240, warmstart_hours=72,
                          replan_interval=6, replicates=2, seed=0,
                          policy=ARMS[0], workers=1, k_mesh_points=24)
report = run_cohort(cohort, ARMS, config)
for name in report.policy_names:
    a = report.aggregates[name]
    print(f"{name:30s} tic={a['time_in_control']:.4f} dev={a['mean_deviation']:.4f} "
          f"fail={a['failures']} max_cycle={a['max_cycle_time']:.2f}s")
print("elapsed", round(time.perf_counter() - t0, 1), "s")
