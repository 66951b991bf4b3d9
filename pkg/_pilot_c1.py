"""Pilot: matched piecewise-vs-saturating kinetics (criterion 1 design)."""
import math
import sys
import time

import numpy as np

sys.path.insert(0, "/root/pkg/src")
sys.path.insert(0, "/root/pkg/tests")

from hepdose.dynamics import mm_exact, roll_x
from oracles import ode_mm

rng = np.random.default_rng(20260819)
t0 = time.perf_counter()
offsets, ode_errs, final_fracs = [], [], []
for i in range(20):
    alpha = rng.uniform(0.35, 0.75)
    k = rng.uniform(3.0, 120.0)
    c = rng.uniform(2.0, 10.0)
    bp = k / (1.0 - alpha)
    x0 = c * bp
    vmax, km = k, k / (-math.log(alpha))
    T = int(math.ceil((x0 - bp) / k)) + 80
    times = np.arange(T + 1, dtype=float)
    x_pw = roll_x(alpha, k, np.zeros(T), x0=x0)
    x_mm = mm_exact(x0, vmax, km, times)

    assert x_pw[0] == x0, "piecewise start"
    a0 = abs(x_mm[0] - x0)
    assert a0 <= 1e-9 * x0, f"mm start gap {a0}"

    assert np.all(np.diff(x_pw) < 0), "piecewise not strictly decreasing"
    assert np.all(np.diff(x_mm) < 0), "mm not strictly decreasing"
    final_fracs.append(max(x_pw[-1], x_mm[-1]) / x0)

    x_ode = ode_mm(x0, vmax, km, times)
    ode_errs.append(float(np.max(np.abs(x_mm - x_ode))))

    gap = np.abs(x_pw - x_mm)
    t_star = int(np.argmax(gap))
    t_cross = int(np.argmax(x_pw <= bp))  # first hour in first-order regime
    offsets.append(t_star - t_cross)

el = time.perf_counter() - t0
print("offsets t* - t_cross:", sorted(offsets))
print("max |mm - ode|:", max(ode_errs))
print("max final/x0):", max(final_fracs))
print("elapsed:", round(el, 2), "s")
