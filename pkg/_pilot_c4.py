"""Pilot: posterior concentration and MAP error decay (criterion 4 design)."""
import sys
import time

import numpy as np

sys.path.insert(0, "/root/pkg/src")

from hepdose.dynamics import PatientParams, sample_observation, simulate
from hepdose.estimation import ObservationSeries, scenario_table
from hepdose.simulator import B_BAR_5, SCENARIO_ALPHAS

TRUE = PatientParams(alpha=0.5, k=30.0, b=B_BAR_5[3], yb=30.0)
SCALE = 2.0
HORIZONS = (48, 120, 240)


def excitation_doses(rng, T, hi, block=6):
    doses = np.zeros(T)
    t, high = 0, True
    while t < T:
        level = rng.uniform(0.6 * hi, hi) if high else rng.uniform(0, 0.25 * hi)
        doses[t:t + block] = level
        t += block
        high = not high
    return doses


def record(seed, T=240, every=2):
    rng = np.random.default_rng(seed)
    hi = 2.0 * TRUE.yb * (1 - TRUE.alpha) / (7.5 * TRUE.b)
    doses = excitation_doses(rng, T, hi)
    traj = simulate(TRUE, doses)
    assert not traj.clamped.any()
    times = np.arange(every, T + 1, every)
    values = np.maximum(
        [sample_observation(v, SCALE, rng) for v in traj.y[times]], 0.0)
    return ObservationSeries(doses=doses, times=times, values=values,
                             noise_scale=SCALE).validate()


def truncate(obs, T):
    keep = obs.times <= T
    return ObservationSeries(doses=obs.doses[:T], times=obs.times[keep],
                             values=obs.values[keep],
                             noise_scale=obs.noise_scale).validate()


t0 = time.perf_counter()
n_rep = 10
weights = {T: [] for T in HORIZONS}
b_errs = {T: [] for T in HORIZONS}
k_errs = {T: [] for T in HORIZONS}
for r in range(n_rep):
    full = record(seed=1000 + r)
    for T in HORIZONS:
        table = scenario_table(truncate(full, T), SCENARIO_ALPHAS, B_BAR_5)
        idx = next(s.index for s in table.scenarios
                   if s.alpha == TRUE.alpha and s.b == TRUE.b)
        weights[T].append(table.scenarios[idx].weight)
        m = table.map_scenario
        b_errs[T].append(abs(m.b - TRUE.b) / TRUE.b)
        k_errs[T].append(abs(m.k - TRUE.k) / TRUE.k)

for T in HORIZONS:
    print(f"T={T:3d}  median w*={np.median(weights[T]):.4f}  "
          f"min w*={min(weights[T]):.4f}  "
          f"median |db|/b={np.median(b_errs[T]):.4g}  "
          f"median |dk|/k={np.median(k_errs[T]):.4g}")
print("elapsed:", round(time.perf_counter() - t0, 1), "s for", n_rep, "reps")
