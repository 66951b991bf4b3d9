r"""Discrete-time heparin / aPTT patient dynamics.

Heparin elimination follows Michaelis-Menten kinetics: clearance saturates at
high blood levels (zero-order, constant decrement) and becomes proportional
at low levels (first-order, constant fraction).  On an hourly grid the model
uses the piecewise-linear form

    x_{t+1} = u_t + / alpha * x_t   if x_t <= k / (1 - alpha)
              \ x_t - k             otherwise

where ``x`` is the heparin level (IU), ``u_t`` the dose given during hour
``t`` (IU), ``alpha`` the hourly retention fraction and ``k`` the zero-order
hourly elimination (IU/h).  The two branches agree at the breakpoint
``k / (1 - alpha)``, so the map is continuous.

The measured effect is the activated partial thromboplastin time (aPTT,
seconds).  It relaxes toward a slowly drifting internal baseline and is
shifted additively by circulating heparin:

    y_{t+1}  = gamma1 * (y_t - yb_t) + yb_t + b * x_{t+1}
    yb_{t+1} = gamma2 * yb_t + gamma3 * y_t + gamma4 * yb

``y`` is the aPTT, ``yb_t`` the drifting baseline, ``yb`` the patient's
homeostatic set point, and ``b`` (s/IU) the patient's sensitivity to heparin.
Because ``gamma2 + gamma3 + gamma4 = 1``, the dose-free system has the unique
fixed point ``y = yb_t = yb`` and returns to it after excursions.

The continuous-time Michaelis-Menten curve is also available in closed form
(`mm_exact`) through the Lambert W function; it serves as the reference the
hourly breakpoint map is checked against in the extreme-concentration limits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidParameterError, NumericError

# Smallest admissible retention fraction; alpha below this is treated as a
# parameter error rather than silently collapsing to instant elimination.
ALPHA_FLOOR = 1e-6

# Candidate retention fractions used throughout estimation: the half-life
# grid {1, 1.25, 1.5, 1.75, 2} hours mapped through alpha = 0.5**(1/h) and
# rounded to three decimals.
DEFAULT_ALPHA_SET = (0.500, 0.574, 0.630, 0.673, 0.707)


@dataclass(frozen=True)
class Domains:
    """Box domains for states, doses and patient parameters.

    Estimation searches inside these boxes and the simulator clamps states to
    them, so they double as the safety envelope of every computation.
    """

    alpha_set: tuple = DEFAULT_ALPHA_SET  # admissible retention fractions
    b_range: tuple = (0.1, 10.0)          # sensitivity b, s/IU
    k_range: tuple = (0.1, 5000.0)        # zero-order elimination k, IU/h
    y_max: float = 150.0                  # aPTT and baseline cap, s
    x_max: float = 5000.0                 # heparin level cap, IU
    u_max: float = 3000.0                 # per-hour dose cap, IU

    def __post_init__(self):
        if not self.alpha_set or any(not (ALPHA_FLOOR <= a < 1.0) for a in self.alpha_set):
            raise InvalidParameterError(f"alpha_set must lie in [{ALPHA_FLOOR}, 1): {self.alpha_set}")
        for name, (lo, hi) in (("b_range", self.b_range), ("k_range", self.k_range)):
            if not (0 < lo <= hi):
                raise InvalidParameterError(f"{name} must satisfy 0 < lo <= hi, got {(lo, hi)}")
        if min(self.y_max, self.x_max, self.u_max) <= 0:
            raise InvalidParameterError("y_max, x_max and u_max must be positive")


DEFAULT_DOMAINS = Domains()


@dataclass(frozen=True)
class GlobalDecayRates:
    """Population-level decay rates of the aPTT recursion.

    gamma1 pulls the aPTT toward the current baseline; gamma2..gamma4 mix the
    baseline from its own past, the recent aPTT, and the homeostatic set
    point.  The mix must be convex (sum to one) for the set point to be a
    fixed point of the dose-free system.
    """

    gamma1: float = 0.80
    gamma2: float = 0.85
    gamma3: float = 0.05
    gamma4: float = 0.10

    def __post_init__(self):
        g = (self.gamma1, self.gamma2, self.gamma3, self.gamma4)
        if any(not (0.0 < v < 1.0) for v in g):
            raise InvalidParameterError(f"decay rates must lie in (0,1): {g}")
        if abs(self.gamma2 + self.gamma3 + self.gamma4 - 1.0) > 1e-9:
            raise InvalidParameterError(
                f"gamma2+gamma3+gamma4 must equal 1, got {self.gamma2 + self.gamma3 + self.gamma4!r}")

    def spectral_radius(self) -> float:
        """Spectral radius of the dose-free (y, yb_t) update matrix.

        A radius below one means homeostasis: the dose-free system contracts
        to the set point from any start.
        """
        m = np.array([[self.gamma1, 1.0 - self.gamma1],
                      [self.gamma3, self.gamma2]])
        return float(max(abs(np.linalg.eigvals(m))))


DEFAULT_GAMMAS = GlobalDecayRates()


@dataclass(frozen=True)
class PatientParams:
    """Per-patient parameters of the dynamics.

    ``yb`` is the homeostatic aPTT set point; ``y0`` and ``yb0`` give the
    state at hour zero (they default to the set point, i.e. a patient at
    rest).
    """

    alpha: float          # hourly retention fraction, in (0,1)
    k: float              # zero-order elimination, IU/h
    b: float              # aPTT shift per IU of circulating heparin, s/IU
    yb: float             # homeostatic aPTT set point, s
    y0: float = None      # initial aPTT, s (default: yb)
    yb0: float = None     # initial baseline, s (default: yb)

    def __post_init__(self):
        if self.y0 is None:
            object.__setattr__(self, "y0", self.yb)
        if self.yb0 is None:
            object.__setattr__(self, "yb0", self.yb)

    def validate(self, domains: Domains = DEFAULT_DOMAINS) -> "PatientParams":
        if not (ALPHA_FLOOR <= self.alpha < 1.0):
            raise InvalidParameterError(f"alpha={self.alpha} outside [{ALPHA_FLOOR}, 1)")
        if self.k <= 0:
            raise InvalidParameterError(f"k={self.k} must be positive")
        if self.b <= 0:
            raise InvalidParameterError(f"b={self.b} must be positive")
        for name, v in (("yb", self.yb), ("y0", self.y0), ("yb0", self.yb0)):
            if not (0.0 <= v <= domains.y_max):
                raise InvalidParameterError(f"{name}={v} outside [0, {domains.y_max}]")
        return self

    @property
    def breakpoint(self) -> float:
        """Heparin level where elimination switches between branches."""
        return self.k / (1.0 - self.alpha)


@dataclass(frozen=True)
class PatientState:
    """Full dynamic state at an integer hour."""

    hour: int
    x: float       # heparin level, IU
    y: float       # aPTT, s
    yb_t: float    # drifting baseline, s


@dataclass
class Trajectory:
    """Simulated path of states; ``clamped[t]`` flags hours where the raw
    update left the state box and was projected back onto it."""

    states: list          # PatientState, one per hour, index = hour
    clamped: np.ndarray   # bool, same length as states

    def __len__(self):
        return len(self.states)

    @property
    def x(self) -> np.ndarray:
        return np.array([s.x for s in self.states])

    @property
    def y(self) -> np.ndarray:
        return np.array([s.y for s in self.states])

    @property
    def yb_t(self) -> np.ndarray:
        return np.array([s.yb_t for s in self.states])


def _decay(x: float, alpha: float, k: float) -> float:
    """One hour of dose-free heparin elimination."""
    if x <= k / (1.0 - alpha):
        return alpha * x
    return x - k


def step(state: PatientState,
         dose: float,
         params: PatientParams,
         gammas: GlobalDecayRates = DEFAULT_GAMMAS,
         domains: Domains = DEFAULT_DOMAINS) -> tuple:
    """Advance the patient one hour under ``dose`` IU of heparin.

    Returns ``(next_state, clamped)``.  ``clamped`` is True when the raw
    update left the state box and was projected back; estimation deliberately
    probes parameter corners where that happens, so it is reported rather
    than raised.
    """
    params.validate(domains)
    if not (0.0 <= dose <= domains.u_max):
        raise InvalidParameterError(f"dose={dose} outside [0, {domains.u_max}]")

    g = gammas
    x_next = dose + _decay(state.x, params.alpha, params.k)
    y_next = g.gamma1 * (state.y - state.yb_t) + state.yb_t + params.b * x_next
    yb_next = g.gamma2 * state.yb_t + g.gamma3 * state.y + g.gamma4 * params.yb

    clamped = False
    if not (0.0 <= x_next <= domains.x_max):
        x_next = min(max(x_next, 0.0), domains.x_max)
        clamped = True
    if not (0.0 <= y_next <= domains.y_max):
        y_next = min(max(y_next, 0.0), domains.y_max)
        clamped = True
    if not (0.0 <= yb_next <= domains.y_max):
        yb_next = min(max(yb_next, 0.0), domains.y_max)
        clamped = True

    return PatientState(state.hour + 1, x_next, y_next, yb_next), clamped


def simulate(params: PatientParams,
             doses: Sequence[float],
             gammas: GlobalDecayRates = DEFAULT_GAMMAS,
             domains: Domains = DEFAULT_DOMAINS,
             x0: float = 0.0) -> Trajectory:
    """Roll the dynamics from hour 0 under the given hourly doses.

    ``doses[t]`` is administered during hour ``t`` and lands in the hour
    ``t+1`` state, so the trajectory has ``len(doses) + 1`` states.  The
    initial state is ``(x0, params.y0, params.yb0)``.
    """
    params.validate(domains)
    doses = np.asarray(doses, dtype=float)
    if doses.ndim != 1:
        raise InvalidParameterError("doses must be a flat sequence")
    if doses.size and (doses.min() < 0.0 or doses.max() > domains.u_max):
        raise InvalidParameterError(f"doses must lie in [0, {domains.u_max}]")
    if not (0.0 <= x0 <= domains.x_max):
        raise InvalidParameterError(f"x0={x0} outside [0, {domains.x_max}]")

    x, y, yb_t, flags = _roll_arrays(
        params.alpha, params.k, params.b, params.yb, params.y0, params.yb0,
        doses, gammas, domains, x0)
    states = [PatientState(t, float(x[t]), float(y[t]), float(yb_t[t]))
              for t in range(len(doses) + 1)]
    return Trajectory(states=states, clamped=flags)


def _roll_arrays(alpha, k, b, yb, y0, yb0, doses, gammas, domains, x0=0.0):
    """Array core of `simulate`; no validation, returns (x, y, yb_t, clamped)."""
    n = len(doses)
    x = np.empty(n + 1)
    y = np.empty(n + 1)
    w = np.empty(n + 1)
    clamped = np.zeros(n + 1, dtype=bool)
    x[0], y[0], w[0] = x0, y0, yb0
    g1, g2, g3, g4 = gammas.gamma1, gammas.gamma2, gammas.gamma3, gammas.gamma4
    brk = k / (1.0 - alpha)
    for t in range(n):
        xn = doses[t] + (alpha * x[t] if x[t] <= brk else x[t] - k)
        yn = g1 * (y[t] - w[t]) + w[t] + b * xn
        wn = g2 * w[t] + g3 * y[t] + g4 * yb
        c = False
        if xn < 0.0 or xn > domains.x_max:
            xn = min(max(xn, 0.0), domains.x_max)
            c = True
        if yn < 0.0 or yn > domains.y_max:
            yn = min(max(yn, 0.0), domains.y_max)
            c = True
        if wn < 0.0 or wn > domains.y_max:
            wn = min(max(wn, 0.0), domains.y_max)
            c = True
        x[t + 1], y[t + 1], w[t + 1], clamped[t + 1] = xn, yn, wn, c
    return x, y, w, clamped


def roll_x(alpha: float, k: float, doses: np.ndarray,
           x_max: float = DEFAULT_DOMAINS.x_max, x0: float = 0.0) -> np.ndarray:
    """Heparin level path only (the y-recursion never feeds back into x).

    Used heavily by estimation, which profiles the aPTT variables separately
    and only needs the deterministic x path.  Clamps at the box like
    `simulate` does; x cannot go negative because both branches of the decay
    map are nonnegative on [0, x_max].
    """
    n = len(doses)
    x = np.empty(n + 1)
    x[0] = x0
    brk = k / (1.0 - alpha)
    for t in range(n):
        xn = doses[t] + (alpha * x[t] if x[t] <= brk else x[t] - k)
        x[t + 1] = xn if xn <= x_max else x_max
    return x


def _lambert_w(eta: float, tol: float = 1e-12, max_iter: int = 80) -> float:
    """Principal-branch Lambert W evaluated as W(exp(eta)).

    Working with the exponent ``eta = log z`` sidesteps overflow for the
    large arguments the Michaelis-Menten curve produces at high initial
    concentrations.  Solves ``w + log w = eta`` for ``w > 0`` by Newton's
    method, which is monotone and locally quadratic here.
    """
    if eta == -math.inf:
        return 0.0
    if eta < -36.0:
        # w = exp(eta) * (1 + O(exp(eta))); correction below machine epsilon.
        return math.exp(eta)
    w = eta - math.log(eta) if eta > 1.0 else math.exp(min(eta, 1.0))
    for _ in range(max_iter):
        step_w = (w + math.log(w) - eta) * w / (w + 1.0)
        w -= step_w
        if abs(step_w) <= tol:
            return w
    raise NumericError(f"Lambert W iteration did not converge for eta={eta}")


def mm_exact(x1: float, vmax: float, km: float, t) -> np.ndarray:
    """Closed-form Michaelis-Menten concentration at time(s) ``t``.

    Solves dx/dt = -vmax * x / (x + km) from ``x(0) = x1``:

        x(t) = km * W( (x1/km) * exp( x1/km - (vmax/km) * t ) )

    with W the principal Lambert W branch.  ``t`` may be a scalar or an
    array of nonnegative times.
    """
    if x1 < 0 or vmax <= 0 or km <= 0:
        raise InvalidParameterError(f"require x1 >= 0, vmax > 0, km > 0; got {(x1, vmax, km)}")
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    if t_arr.size and t_arr.min() < 0:
        raise InvalidParameterError("times must be nonnegative")
    if x1 == 0.0:
        out = np.zeros_like(t_arr)
        return out[0] if np.isscalar(t) or np.ndim(t) == 0 else out

    ratio = x1 / km
    log_ratio = math.log(ratio)
    out = np.empty_like(t_arr)
    for i, ti in enumerate(t_arr):
        eta = log_ratio + ratio - (vmax / km) * ti
        out[i] = km * _lambert_w(eta)
    return float(out[0]) if np.ndim(t) == 0 else out


def sample_observation(y_true: float, scale: float, rng) -> float:
    """Draw one noisy aPTT reading: truth plus Laplace(0, scale) noise.

    ``rng`` is an integer seed or a ``numpy.random.Generator``; passing a
    Generator lets a caller thread one stream through a whole episode.
    """
    if scale <= 0:
        raise InvalidParameterError(f"noise scale must be positive, got {scale}")
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    return float(y_true + gen.laplace(0.0, scale))


def therapeutic_range(yb: float) -> tuple:
    """Target aPTT band for a patient with set point ``yb``: [1.5 yb, 2.5 yb]."""
    if yb <= 0:
        raise InvalidParameterError(f"yb must be positive, got {yb}")
    return (1.5 * yb, 2.5 * yb)
