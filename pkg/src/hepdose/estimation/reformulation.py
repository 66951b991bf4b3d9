"""Mixed-integer linear encoding of the piecewise heparin dynamics.

The estimation problem can be posed monolithically as a MILP by (i)
substituting z = b*x and c = b*k so the b-bilinearity disappears, (ii)
selecting the elimination rate out of the finite admissible set with a
one-hot indicator vector iota and auxiliary products w_it ~ alpha_i * z_t,
and (iii) replacing the two-branch decay map with big-M if-then rows driven
by a per-hour branch indicator nu_t (nu_t = 1 on the subtractive branch).

This package estimates through decomposition instead, so the encoding is
not solved here; it exists to *certify equivalence*: any simulated
trajectory must satisfy the encoded system exactly with the natural
indicator assignment, and any assignment satisfying the system must decode
back to a valid trajectory.  Every big-M constant is computed from the
declared variable boxes by interval arithmetic, never hard-coded, and a
row that an indicator claims tight must hold as an exact equality -- the
check never lets big-M slack excuse a claimed-tight row.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..dynamics import (DEFAULT_DOMAINS, DEFAULT_GAMMAS, Domains,
                        GlobalDecayRates, PatientParams, Trajectory)
from ..errors import InvalidParameterError

TIGHT_TOL = 1e-8        # claimed-tight rows must hold to this absolute slack


@dataclass(frozen=True)
class BigM:
    """Interval-arithmetic row bounds for one horizon and dose sequence.

    ``z_max`` bounds z = b*x over the full box; ``c_lo``/``c_hi`` bound
    c = b*k.  Arrays are per-hour because the dose enters some rows.
    """
    z_max: float
    c_lo: float
    c_hi: float
    w_rows: np.ndarray          # (m,)  |w_it - alpha_i z_t| cap when iota_i = 0
    branch1_hi: float           # r1 upper bound (r1 = z_{t+1} - w_t - b u_t)
    branch1_lo: np.ndarray      # (T,) -r1 lower bound magnitude
    branch2_hi: float           # r2 upper bound (r2 = z_{t+1} - z_t + c - b u_t)
    branch2_lo: np.ndarray      # (T,)
    switch_hi: float            # s upper bound  (s = z_t - c - w_t)
    switch_lo: float            # -s lower bound magnitude


def big_m_bounds(doses: Sequence[float],
                 domains: Domains = DEFAULT_DOMAINS,
                 alphas: Sequence[float] = None) -> BigM:
    doses = np.asarray(doses, dtype=float)
    alphas = tuple(alphas) if alphas is not None else domains.alpha_set
    a_max = max(alphas)
    b_lo, b_hi = domains.b_range
    k_lo, k_hi = domains.k_range
    z_max = b_hi * domains.x_max
    c_lo, c_hi = b_lo * k_lo, b_hi * k_hi
    w_rows = np.array([a * z_max for a in alphas])
    branch1_lo = np.maximum(0.0, a_max * z_max + b_hi * doses)
    branch2_hi = z_max + c_hi
    branch2_lo = np.maximum(0.0, z_max - c_lo + b_hi * doses)
    switch_hi = max(0.0, z_max - c_lo)
    switch_lo = max(0.0, c_hi + a_max * z_max)
    return BigM(z_max=z_max, c_lo=c_lo, c_hi=c_hi, w_rows=w_rows,
                branch1_hi=z_max, branch1_lo=branch1_lo,
                branch2_hi=branch2_hi, branch2_lo=branch2_lo,
                switch_hi=switch_hi, switch_lo=switch_lo)


@dataclass
class Assignment:
    """A complete variable assignment for the encoded system."""
    b: float
    c: float
    z: np.ndarray               # (T+1,)
    w: np.ndarray               # (T,)   selected product per hour
    w_i: np.ndarray             # (m, T) per-rate products
    iota: np.ndarray            # (m,)   one-hot rate selector
    nu: np.ndarray              # (T,)   1 on the subtractive branch
    y: np.ndarray               # (T+1,)
    yb_path: np.ndarray         # (T+1,)
    yb: float


@dataclass
class CheckReport:
    ok: bool
    violations: list = field(default_factory=list)

    def add(self, row: str, detail: str):
        self.ok = False
        self.violations.append((row, detail))


def encode_trajectory(params: PatientParams,
                      doses: Sequence[float],
                      traj: Trajectory,
                      alphas: Sequence[float] = None,
                      domains: Domains = DEFAULT_DOMAINS) -> Assignment:
    """The natural assignment for a simulated trajectory: z = b*x, one-hot
    at the trajectory's rate, products zeroed off the selected rate, branch
    indicators read off the switch function."""
    doses = np.asarray(doses, dtype=float)
    alphas = tuple(alphas) if alphas is not None else domains.alpha_set
    if bool(np.any(traj.clamped)):
        raise InvalidParameterError(
            "clamped trajectories do not satisfy the unclamped encoding")
    sel = [i for i, a in enumerate(alphas) if abs(a - params.alpha) < 1e-12]
    if len(sel) != 1:
        raise InvalidParameterError(
            f"alpha={params.alpha} must match exactly one admissible rate")
    m = len(alphas)
    T = len(doses)
    z = params.b * traj.x
    c = params.b * params.k
    iota = np.zeros(m)
    iota[sel[0]] = 1.0
    w_i = np.zeros((m, T))
    w_i[sel[0]] = params.alpha * z[:T]
    w = w_i.sum(axis=0)
    nu = (z[:T] > c + w).astype(float)
    return Assignment(b=params.b, c=c, z=z.copy(), w=w, w_i=w_i, iota=iota,
                      nu=nu, y=traj.y.copy(), yb_path=traj.yb_t.copy(),
                      yb=params.yb)


def check_assignment(assign: Assignment,
                     doses: Sequence[float],
                     gammas: GlobalDecayRates = DEFAULT_GAMMAS,
                     domains: Domains = DEFAULT_DOMAINS,
                     alphas: Sequence[float] = None,
                     atol: float = TIGHT_TOL) -> CheckReport:
    """Verify every row of the encoded system.

    Indicator-relaxed rows are checked against their interval big-M; rows
    the indicators claim tight are checked as exact equalities at ``atol``.
    """
    doses = np.asarray(doses, dtype=float)
    alphas = tuple(alphas) if alphas is not None else domains.alpha_set
    mm = big_m_bounds(doses, domains, alphas)
    g = gammas
    T = len(doses)
    rep = CheckReport(ok=True)
    a = assign

    # --- variable boxes and integrality -----------------------------------
    if not (domains.b_range[0] - atol <= a.b <= domains.b_range[1] + atol):
        rep.add("box:b", f"b={a.b}")
    if not (mm.c_lo - atol <= a.c <= mm.c_hi + atol):
        rep.add("box:c", f"c={a.c}")
    if a.z.min() < -atol or a.z.max() > mm.z_max + atol:
        rep.add("box:z", f"z range [{a.z.min()}, {a.z.max()}]")
    for arr, name in ((a.iota, "iota"), (a.nu, "nu")):
        if np.any(np.minimum(np.abs(arr), np.abs(arr - 1.0)) > atol):
            rep.add(f"integrality:{name}", "non-binary entry")
    if abs(a.iota.sum() - 1.0) > atol:
        rep.add("one-hot", f"sum={a.iota.sum()}")
    paths = np.concatenate([a.y, a.yb_path, [a.yb]])
    if paths.min() < -atol or paths.max() > domains.y_max + atol:
        rep.add("box:y", f"range [{paths.min()}, {paths.max()}]")

    # --- linear response rows (exact) --------------------------------------
    y_next = g.gamma1 * a.y[:T] + (1.0 - g.gamma1) * a.yb_path[:T] + a.z[1:]
    if np.max(np.abs(a.y[1:] - y_next)) > atol:
        rep.add("response:y", f"max residual {np.max(np.abs(a.y[1:] - y_next))}")
    w_next = (g.gamma2 * a.yb_path[:T] + g.gamma3 * a.y[:T]
              + g.gamma4 * a.yb)
    if np.max(np.abs(a.yb_path[1:] - w_next)) > atol:
        rep.add("response:baseline",
                f"max residual {np.max(np.abs(a.yb_path[1:] - w_next))}")

    # --- rate-selection rows ------------------------------------------------
    if np.max(np.abs(a.w - a.w_i.sum(axis=0))) > atol:
        rep.add("product:sum", "w != sum_i w_i")
    for i, alpha_i in enumerate(alphas):
        resid = a.w_i[i] - alpha_i * a.z[:T]
        slack = mm.w_rows[i] * (1.0 - a.iota[i])
        if a.iota[i] > 0.5:
            if np.max(np.abs(resid)) > atol:
                rep.add(f"product:tight[{i}]",
                        f"max residual {np.max(np.abs(resid))}")
        elif np.any(np.abs(resid) > slack + atol):
            rep.add(f"product:relaxed[{i}]", "big-M row violated")

    # --- branch rows ----------------------------------------------------------
    r1 = a.z[1:] - a.w - a.b * doses
    r2 = a.z[1:] - a.z[:T] + a.c - a.b * doses
    s = a.z[:T] - a.c - a.w
    for t in range(T):
        on = a.nu[t] > 0.5
        if not on:
            if abs(r1[t]) > atol:
                rep.add(f"branch1:tight[{t}]", f"residual {r1[t]}")
            if s[t] > atol:
                rep.add(f"switch:decay[{t}]", f"s={s[t]} > 0")
            if not (-mm.branch2_lo[t] - atol <= r2[t] <= mm.branch2_hi + atol):
                rep.add(f"branch2:relaxed[{t}]", "big-M row violated")
        else:
            if abs(r2[t]) > atol:
                rep.add(f"branch2:tight[{t}]", f"residual {r2[t]}")
            if s[t] < -atol:
                rep.add(f"switch:subtract[{t}]", f"s={s[t]} < 0")
            if not (-mm.branch1_lo[t] - atol <= r1[t] <= mm.branch1_hi + atol):
                rep.add(f"branch1:relaxed[{t}]", "big-M row violated")
    return rep


def decode_assignment(assign: Assignment,
                      alphas: Sequence[float] = None,
                      domains: Domains = DEFAULT_DOMAINS):
    """Map an assignment back to original coordinates:
    (alpha, k, b, x-path).  Raises when the one-hot selector is ambiguous."""
    alphas = tuple(alphas) if alphas is not None else domains.alpha_set
    hot = np.flatnonzero(assign.iota > 0.5)
    if len(hot) != 1:
        raise InvalidParameterError("rate selector is not one-hot")
    alpha = alphas[int(hot[0])]
    if assign.b <= 0.0:
        raise InvalidParameterError("b must be positive to invert z = b*x")
    return alpha, assign.c / assign.b, assign.b, assign.z / assign.b
