"""Profile log-likelihood of one (alpha, b, k) kinetic hypothesis.

Observation noise is Laplace, so maximizing the likelihood over the latent
aPTT trajectory is an L1 fit subject to the linear aPTT recursion and box
bounds -- a linear program.  Because the recursion is linear with known
coefficients once the heparin path is rolled out, every latent variable is
affine in just three unknowns: the initial aPTT ``y0``, the initial baseline
``yb0`` and the set point ``yb``:

    y_t   =  A_t y0 + c_t yb0 + d_t yb + e_t
    yb_t  =  B_t y0 + c'_t yb0 + d'_t yb + e'_t

with (A, B, c, c', d, d') fixed by the decay rates and ``e`` the convolution
of the heparin contribution ``z_t = b x_t`` with the impulse response.  The
LP solved here is therefore the exact projection of the full-trajectory LP
onto those three columns plus the residual splits.  Box bounds on the latent
path are enforced lazily: the fit is solved, violated hours get their range
rows added, and the LP is re-solved -- identical optimum, far fewer rows.

The full-trajectory LP is kept in `full_likelihood_lp` so tests can verify
the projection and the dual mapping against the unreduced formulation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from .. import lp_kernel
from ..dynamics import (DEFAULT_DOMAINS, DEFAULT_GAMMAS, Domains,
                        GlobalDecayRates, roll_x)
from ..errors import InvalidParameterError
from .observations import ObservationSeries

NEG_INF = float("-inf")


@lru_cache(maxsize=64)
def _kernels(gammas: GlobalDecayRates, T: int):
    """Impulse responses and homogeneous coefficients up to horizon T.

    ``A[s]``/``B[s]`` give the response of y / yb_t to a unit z-impulse s
    hours earlier; (c, cp) and (d, dp) carry the influence of yb0 and yb.
    ``A`` doubles as the y0 coefficient and ``B`` as its baseline twin.
    """
    g1, g2, g3, g4 = gammas.gamma1, gammas.gamma2, gammas.gamma3, gammas.gamma4
    A = np.empty(T + 1)
    B = np.empty(T + 1)
    c = np.empty(T + 1)
    cp = np.empty(T + 1)
    d = np.empty(T + 1)
    dp = np.empty(T + 1)
    A[0], B[0] = 1.0, 0.0
    c[0], cp[0] = 0.0, 1.0
    d[0], dp[0] = 0.0, 0.0
    for s in range(T):
        A[s + 1] = g1 * A[s] + (1.0 - g1) * B[s]
        B[s + 1] = g3 * A[s] + g2 * B[s]
        c[s + 1] = g1 * c[s] + (1.0 - g1) * cp[s]
        cp[s + 1] = g3 * c[s] + g2 * cp[s]
        d[s + 1] = g1 * d[s] + (1.0 - g1) * dp[s]
        dp[s + 1] = g3 * d[s] + g2 * dp[s] + g4
    return A, B, c, cp, d, dp


def _forced_terms(z: np.ndarray, A: np.ndarray, B: np.ndarray, T: int):
    """Convolve the heparin contribution with the impulse responses."""
    e = np.zeros(T + 1)
    ep = np.zeros(T + 1)
    if T:
        conv_a = np.convolve(z[1:], A[:T])
        conv_b = np.convolve(z[1:], B[:T])
        e[1:] = conv_a[:T]
        ep[1:] = conv_b[:T]
    return e, ep


@dataclass
class OptCut:
    """Tangent over-estimator of the profile value in z-space:
    value(z') <= lam . z' + g  for every admissible z'."""
    lam: np.ndarray
    g: float


@dataclass
class FeasCut:
    """Infeasibility certificate mapped to z-space: any feasible z' must
    satisfy  const - coef . z' <= cap."""
    coef: np.ndarray
    const: float
    cap: float

    def admits(self, z_tail: np.ndarray, slack: float = 1e-7) -> bool:
        return self.const - float(self.coef @ z_tail) <= self.cap + slack


@dataclass
class ProfileResult:
    value: float                      # profile log-likelihood (-inf if infeasible)
    yb: Optional[float] = None
    y0: Optional[float] = None
    yb0: Optional[float] = None
    y_path: Optional[np.ndarray] = None
    yb_path: Optional[np.ndarray] = None
    opt_cut: Optional[OptCut] = None
    feas_cut: Optional[FeasCut] = None
    lp_iterations: int = 0
    generated_rows: int = 0

    @property
    def feasible(self) -> bool:
        return self.value > NEG_INF


def _map_rows_to_z(weights, row_times, row_is_baseline, A, B, T):
    """Accumulate per-row weights into a length-T vector over z_1..z_T using
    each row's impulse response (A for aPTT rows, B for baseline rows)."""
    out = np.zeros(T)
    for w, t, is_b in zip(weights, row_times, row_is_baseline):
        if w == 0.0 or t == 0:
            continue
        k = B if is_b else A
        out[:t] += w * k[t - 1::-1][:t]
    return out


def profile_loglik(obs: ObservationSeries,
                   alpha: float,
                   b: float,
                   k: float,
                   gammas: GlobalDecayRates = DEFAULT_GAMMAS,
                   domains: Domains = DEFAULT_DOMAINS,
                   need_cut: bool = False,
                   need_path: bool = False) -> ProfileResult:
    """Maximize the Laplace log-likelihood over (y0, yb0, yb) at fixed
    kinetics.  ``need_cut`` additionally returns the z-space tangent (or the
    infeasibility certificate); ``need_path`` returns the fitted paths."""
    T = obs.horizon
    n_obs = obs.count
    scale = obs.noise_scale
    y_max = domains.y_max

    x = roll_x(alpha, k, obs.doses, domains.x_max)
    z = b * x
    A, B, c, cp, d, dp = _kernels(gammas, T)
    e, ep = _forced_terms(z, A, B, T)

    tt = obs.times
    phi_obs = np.column_stack([A[tt], c[tt], d[tt]])
    rhs_obs = obs.values - e[tt]

    extra = []           # (t, is_baseline) range rows added lazily
    const_norm = -n_obs * math.log(2.0 * scale)

    for _round in range(2 * T + 2):
        n_extra = len(extra)
        n_cols = 3 + 2 * n_obs + n_extra
        rows = n_obs + n_extra
        Amat = np.zeros((rows, n_cols))
        rhs = np.empty(rows)
        Amat[:n_obs, :3] = phi_obs
        cols_p = 3 + 2 * np.arange(n_obs)
        Amat[np.arange(n_obs), cols_p] = 1.0
        Amat[np.arange(n_obs), cols_p + 1] = -1.0
        rhs[:n_obs] = rhs_obs
        for j, (t, is_b) in enumerate(extra):
            if is_b:
                Amat[n_obs + j, :3] = (B[t], cp[t], dp[t])
                rhs[n_obs + j] = y_max - ep[t]
            else:
                Amat[n_obs + j, :3] = (A[t], c[t], d[t])
                rhs[n_obs + j] = y_max - e[t]
            Amat[n_obs + j, 3 + 2 * n_obs + j] = 1.0
        cost = np.zeros(n_cols)
        cost[3:3 + 2 * n_obs] = 1.0
        lower = np.zeros(n_cols)
        upper = np.concatenate([np.full(3, y_max),
                                np.full(2 * n_obs, np.inf),
                                np.full(n_extra, y_max)])
        problem = lp_kernel.LpProblem(c=cost, A=Amat, rhs=rhs,
                                      lower=lower, upper=upper)
        if n_extra == 0:
            basis = np.where(rhs_obs >= 0, cols_p, cols_p + 1)
            start_basis, start_status = lp_kernel.warm_start(n_cols, basis)
            sol = lp_kernel.solve(problem, start_basis=start_basis,
                                  start_status=start_status)
        else:
            sol = lp_kernel.solve(problem)

        if sol.status == "infeasible":
            result = ProfileResult(value=NEG_INF, lp_iterations=sol.iterations,
                                   generated_rows=n_extra)
            if need_cut:
                f = sol.farkas
                cap = lp_kernel.farkas_cap(problem, f)
                base = np.concatenate([obs.values, np.full(n_extra, y_max)])
                r_times = np.concatenate([tt, [t for t, _ in extra]]).astype(int)
                r_isb = np.concatenate([np.zeros(n_obs, bool),
                                        [isb for _, isb in extra]])
                coef = _map_rows_to_z(f, r_times, r_isb, A, B, T)
                result.feas_cut = FeasCut(coef=coef, const=float(f @ base), cap=cap)
            return result
        if sol.status != "optimal":  # pragma: no cover - bounded by construction
            raise InvalidParameterError("likelihood LP reported unbounded")

        w = sol.x[:3]
        y_path = w[0] * A + w[1] * c + w[2] * d + e
        yb_path = w[0] * B + w[1] * cp + w[2] * dp + ep
        tol = lp_kernel.FEAS_TOL * max(1.0, y_max)
        known = {(t, isb) for t, isb in extra}
        viol = []
        for t in range(T + 1):
            if (y_path[t] < -tol or y_path[t] > y_max + tol) and (t, False) not in known:
                viol.append((t, False))
            if (yb_path[t] < -tol or yb_path[t] > y_max + tol) and (t, True) not in known:
                viol.append((t, True))
        if viol:
            extra.extend(viol)
            continue

        value = -sol.objective / scale + const_norm
        result = ProfileResult(value=value, yb=float(w[2]), y0=float(w[0]),
                               yb0=float(w[1]), lp_iterations=sol.iterations,
                               generated_rows=len(extra))
        if need_path:
            result.y_path = y_path
            result.yb_path = yb_path
        if need_cut:
            pi = sol.duals
            r_times = np.concatenate([tt, [t for t, _ in extra]]).astype(int)
            r_isb = np.concatenate([np.zeros(n_obs, bool),
                                    [isb for _, isb in extra]])
            lam = _map_rows_to_z(pi / scale, r_times, r_isb, A, B, T)
            g = value - float(lam @ z[1:])
            result.opt_cut = OptCut(lam=lam, g=g)
        return result
    raise InvalidParameterError("path-bound row generation failed to settle")


def log_likelihood_at(obs: ObservationSeries,
                      alpha: float,
                      b: float,
                      k: float,
                      gammas: GlobalDecayRates = DEFAULT_GAMMAS,
                      domains: Domains = DEFAULT_DOMAINS):
    """Profile log-likelihood and its maximizing initial conditions.

    Returns ``(value, (yb, y0, yb0), y_path)``; the value is ``-inf`` (with
    empty companions) when the kinetic hypothesis cannot keep the latent
    trajectory inside its box at all.
    """
    res = profile_loglik(obs, alpha, b, k, gammas=gammas, domains=domains,
                         need_path=True)
    if not res.feasible:
        return NEG_INF, None, None
    return res.value, (res.yb, res.y0, res.yb0), res.y_path


def full_likelihood_lp(obs: ObservationSeries,
                       alpha: float,
                       b: float,
                       k: float,
                       gammas: GlobalDecayRates = DEFAULT_GAMMAS,
                       domains: Domains = DEFAULT_DOMAINS):
    """The unprojected trajectory LP: one column per latent hour.

    Variables are [y_0..y_T, yb_0..yb_T, yb, p_1..p_n, q_1..q_n]; rows are
    the two recursions per hour plus one residual row per observation.  Used
    to verify the projected fit and its duals; the y-recursion row for hour
    t has right-hand side z_{t+1}, so its dual prices the heparin signal.
    """
    T = obs.horizon
    n_obs = obs.count
    x = roll_x(alpha, k, obs.doses, domains.x_max)
    z = b * x
    g = gammas
    ny = T + 1
    n_cols = 2 * ny + 1 + 2 * n_obs
    rows = 2 * T + n_obs
    Amat = np.zeros((rows, n_cols))
    rhs = np.empty(rows)
    for t in range(T):
        Amat[t, t + 1] = 1.0
        Amat[t, t] = -g.gamma1
        Amat[t, ny + t] = -(1.0 - g.gamma1)
        rhs[t] = z[t + 1]
        r = T + t
        Amat[r, ny + t + 1] = 1.0
        Amat[r, ny + t] = -g.gamma2
        Amat[r, t] = -g.gamma3
        Amat[r, 2 * ny] = -g.gamma4
        rhs[r] = 0.0
    for i, (t, v) in enumerate(zip(obs.times, obs.values)):
        r = 2 * T + i
        Amat[r, t] = 1.0
        Amat[r, 2 * ny + 1 + 2 * i] = 1.0
        Amat[r, 2 * ny + 1 + 2 * i + 1] = -1.0
        rhs[r] = v
    cost = np.zeros(n_cols)
    cost[2 * ny + 1:] = 1.0
    lower = np.zeros(n_cols)
    upper = np.concatenate([np.full(2 * ny + 1, domains.y_max),
                            np.full(2 * n_obs, np.inf)])
    return lp_kernel.LpProblem(c=cost, A=Amat, rhs=rhs, lower=lower, upper=upper)
