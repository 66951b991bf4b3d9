"""Receding-horizon dose planning.

A plan covers the next ``n`` hours after planning time ``T``.  Candidate
dose sequences are scored by rolling the patient model forward under each
scenario's full parameter set and summing an hourly loss against that
scenario's own therapeutic band; the planner minimizes the scenario-weighted
average.  Two optimizers share the objective: exhaustive enumeration at
small scale (the oracle) and coordinate descent on a dose mesh for
production use.  Two clinical baselines are included: the fixed-step
adjustment rule and a per-kilogram protocol table.

The dose mesh is arithmetic ({0, step, 2*step, ...}).  When no explicit
mesh is given the step adapts to the scenario table so the mesh brackets
each scenario's band-holding dose; the conventional fixed step
(`DEFAULT_MESH_STEP`) is far coarser than the band-holding dose of a
high-sensitivity patient, which would leave such a planner only the
all-zero plan.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .dynamics import (DEFAULT_DOMAINS, DEFAULT_GAMMAS, Domains,
                       GlobalDecayRates, PatientParams, simulate)
from .errors import ConfigError, InvalidParameterError, PlanningFailedError
from .estimation.search import EstimateResult, Scenario, ScenarioTable

LOSS_KINDS = ("indicator", "band_deviation", "median_deviation")

NAIVE_STEP = 200.0          # IU/h adjustment of the fixed-step rule
DEFAULT_MESH_STEP = 100.0   # IU conventional mesh granularity
MESH_LEVELS = 31            # adaptive meshes keep this many levels


# ---------------------------------------------------------------------------
# Loss functions


@dataclass(frozen=True)
class LossSpec:
    """Hourly loss against the therapeutic band [1.5*yb, 2.5*yb].

    ``w_sub``/``w_super`` weigh shortfall below the band and excess above
    it (below/above the band median for ``median_deviation``).
    """
    kind: str
    w_sub: float = 1.0
    w_super: float = 1.0

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise InvalidParameterError(
                f"loss kind must be one of {LOSS_KINDS}, got {self.kind!r}")
        if self.w_sub < 0 or self.w_super < 0:
            raise InvalidParameterError("asymmetry weights must be >= 0")


def hourly_loss(y, yb, spec: LossSpec):
    """Loss of aPTT value(s) ``y`` against the band of baseline ``yb``.

    Broadcasts over arrays: ``y`` and ``yb`` may be any compatible shapes.
    """
    y = np.asarray(y, dtype=float)
    yb = np.asarray(yb, dtype=float)
    lo, hi = 1.5 * yb, 2.5 * yb
    if spec.kind == "indicator":
        return spec.w_sub * (y < lo) + spec.w_super * (y > hi)
    if spec.kind == "band_deviation":
        return (spec.w_sub * np.maximum(lo - y, 0.0)
                + spec.w_super * np.maximum(y - hi, 0.0))
    mid = 2.0 * yb
    return (spec.w_sub * np.maximum(mid - y, 0.0)
            + spec.w_super * np.maximum(y - mid, 0.0))


def scenario_loss(scenario: Scenario,
                  past_doses: Sequence[float],
                  candidate: Sequence[float],
                  loss: LossSpec,
                  gammas: GlobalDecayRates = DEFAULT_GAMMAS,
                  domains: Domains = DEFAULT_DOMAINS) -> float:
    """Rollout loss of ``candidate`` under one scenario.

    Replays the scenario's model from hour 0 over the concatenated dose
    history and sums the hourly loss over the candidate's hours, using the
    scenario's own profiled baseline for the band — the planner never sees
    the true one.
    """
    candidate = np.asarray(candidate, dtype=float)
    if candidate.ndim != 1 or candidate.size == 0:
        raise InvalidParameterError("candidate must be a nonempty 1-d sequence")
    if np.any(candidate < 0.0) or np.any(candidate > domains.u_max):
        raise InvalidParameterError(
            f"candidate doses must lie in [0, {domains.u_max}]")
    doses = np.concatenate([np.asarray(past_doses, dtype=float), candidate])
    traj = simulate(scenario.params, doses, gammas, domains)
    tail = traj.y[len(doses) - candidate.size + 1:]
    return float(np.sum(hourly_loss(tail, scenario.yb, spec=loss)))


# ---------------------------------------------------------------------------
# Plans and policy descriptions


@dataclass(frozen=True)
class DosePlan:
    """Planned doses for hours T+1 .. T+n."""
    time: int                      # planning hour T
    horizon: int                   # n
    doses: np.ndarray              # (n,) IU, each in [0, u_max]
    expected_loss: float           # scenario-weight-weighted rollout loss
    scenario_losses: np.ndarray    # per table scenario; NaN where infeasible

    def validate(self, weights: Optional[np.ndarray] = None,
                 domains: Domains = DEFAULT_DOMAINS) -> "DosePlan":
        if len(self.doses) != self.horizon or self.horizon < 1:
            raise InvalidParameterError("plan length must equal its horizon")
        if np.any(self.doses < 0.0) or np.any(self.doses > domains.u_max):
            raise InvalidParameterError("plan violates dose bounds")
        if weights is not None:
            live = weights > 0.0
            agg = float(weights[live] @ self.scenario_losses[live])
            if not math.isclose(agg, self.expected_loss, abs_tol=1e-9,
                                rel_tol=1e-9):
                raise InvalidParameterError(
                    "expected loss does not match the weighted scenario losses")
        return self


@dataclass(frozen=True)
class PolicySpec:
    """Description of a dosing policy, consumed by the simulator."""
    kind: str                                   # ptc_sg | ptc_mle | naive | weight_based
    loss: LossSpec = LossSpec("median_deviation")
    horizon: int = 6
    grid: Optional[Tuple[tuple, tuple]] = None  # (alphas, bs) for ptc_sg
    mesh_step: Optional[float] = None           # None: adapt to scenarios
    label: Optional[str] = None                 # report key; None derives one

    def __post_init__(self):
        if self.kind not in ("ptc_sg", "ptc_mle", "naive", "weight_based"):
            raise InvalidParameterError(f"unknown policy kind {self.kind!r}")
        if self.horizon < 1:
            raise InvalidParameterError("horizon must be >= 1")
        if self.kind == "ptc_sg":
            if (self.grid is None or len(self.grid) != 2
                    or not len(self.grid[0]) or not len(self.grid[1])):
                raise InvalidParameterError(
                    "ptc_sg needs a nonempty (alphas, bs) scenario grid")
        if self.mesh_step is not None and self.mesh_step <= 0:
            raise InvalidParameterError("mesh_step must be positive")

    @property
    def name(self) -> str:
        """Report key: the label if set, else derived from kind and loss."""
        if self.label:
            return self.label
        if self.kind == "ptc_sg":
            m = len(self.grid[0]) * len(self.grid[1])
            return f"ptc_sg{m}[{self.loss.kind}]"
        if self.kind == "ptc_mle":
            return f"ptc_mle[{self.loss.kind}]"
        return self.kind


# ---------------------------------------------------------------------------
# Fast batched rollout over scenarios x candidates


class _ScenarioBatch:
    """Packed arrays for the live (feasible, weight > 0) scenarios."""

    def __init__(self, table: ScenarioTable, past_doses, gammas, domains):
        live = [s for s in table.scenarios if s.feasible and s.weight > 0.0]
        if not live:
            raise PlanningFailedError(
                "scenario table has no feasible scenario with positive weight")
        self.table = table
        self.live = live
        self.indices = np.array([s.index for s in live])
        self.weights = np.array([s.weight for s in live])
        self.alpha = np.array([s.alpha for s in live])
        self.b = np.array([s.b for s in live])
        self.k = np.array([s.k for s in live])
        self.yb = np.array([s.yb for s in live])
        ends = [_terminal_state(s, past_doses, gammas, domains) for s in live]
        self.x_end = np.array([e[0] for e in ends])
        self.y_end = np.array([e[1] for e in ends])
        self.w_end = np.array([e[2] for e in ends])
        self.brk = self.k / (1.0 - self.alpha)

    def losses(self, cands: np.ndarray, loss: LossSpec,
               gammas: GlobalDecayRates, domains: Domains) -> np.ndarray:
        """(m, C) rollout losses for a (C, n) candidate matrix.

        Continues each scenario from its state at planning time; identical
        arithmetic (and clamping) to `dynamics.simulate`, so it agrees with
        `scenario_loss` exactly.
        """
        g = gammas
        m = self.alpha.size
        C, n = cands.shape
        x = np.broadcast_to(self.x_end[:, None], (m, C)).copy()
        y = np.broadcast_to(self.y_end[:, None], (m, C)).copy()
        w = np.broadcast_to(self.w_end[:, None], (m, C)).copy()
        alpha = self.alpha[:, None]
        b = self.b[:, None]
        k = self.k[:, None]
        yb = self.yb[:, None]
        brk = self.brk[:, None]
        total = np.zeros((m, C))
        for j in range(n):
            u = cands[None, :, j]
            # y sees the raw x update; the box clamp applies to the stored
            # state only — same order as the reference rollout.
            x_raw = u + np.where(x <= brk, alpha * x, x - k)
            y_new = g.gamma1 * (y - w) + w + b * x_raw
            w_new = g.gamma2 * w + g.gamma3 * y + g.gamma4 * yb
            x = np.clip(x_raw, 0.0, domains.x_max)
            np.clip(y_new, 0.0, domains.y_max, out=y_new)
            np.clip(w_new, 0.0, domains.y_max, out=w_new)
            y, w = y_new, w_new
            total += hourly_loss(y, yb, loss)
        return total

    def objective(self, cands: np.ndarray, loss: LossSpec,
                  gammas: GlobalDecayRates, domains: Domains) -> np.ndarray:
        """(C,) weighted objective for a (C, n) candidate matrix."""
        return self.weights @ self.losses(cands, loss, gammas, domains)


def _terminal_state(scenario: Scenario, past_doses, gammas, domains):
    if (scenario.x_end is not None and scenario.y_end is not None
            and scenario.yb_end is not None):
        return scenario.x_end, scenario.y_end, scenario.yb_end
    traj = simulate(scenario.params, np.asarray(past_doses, dtype=float),
                    gammas, domains)
    return float(traj.x[-1]), float(traj.y[-1]), float(traj.yb_t[-1])


# ---------------------------------------------------------------------------
# Planners


def adaptive_dose_mesh(table: ScenarioTable,
                       domains: Domains = DEFAULT_DOMAINS,
                       gammas: GlobalDecayRates = DEFAULT_GAMMAS,
                       levels: int = MESH_LEVELS) -> np.ndarray:
    """Arithmetic mesh scaled to the scenario table.

    The top level is twice the largest dose any live scenario needs to hold
    the upper band edge at steady state (capped at u_max), so every
    scenario's useful dose range is interior to the mesh.
    """
    live = [s for s in table.scenarios if s.feasible and s.weight > 0.0]
    if not live:
        raise PlanningFailedError("scenario table has no live scenario")
    dc = _dc_gain(gammas)
    tops = []
    for s in live:
        x_hold = 1.5 * s.yb / (dc * s.b)          # x holding y at 2.5*yb
        tops.append(2.0 * x_hold * (1.0 - s.alpha))
    top = min(float(max(tops)), domains.u_max)
    if top <= 0.0:
        raise PlanningFailedError("degenerate dose scale")
    return np.linspace(0.0, top, levels)


def _dc_gain(g: GlobalDecayRates) -> float:
    """Steady-state d(y)/d(b*x) under constant heparin level.

    Solving the fixed point of y = g1*(y-w) + w + b*x and
    w = g2*w + g3*y + g4*yb gives y = yb + b*x*(g3+g4)/(g4*(1-g1));
    7.5 at the default decay rates.
    """
    return (g.gamma3 + g.gamma4) / (g.gamma4 * (1.0 - g.gamma1))


def mesh_from_step(step: float,
                   domains: Domains = DEFAULT_DOMAINS) -> np.ndarray:
    """Arithmetic mesh {0, step, 2*step, ...} up to u_max."""
    if step <= 0:
        raise InvalidParameterError("mesh step must be positive")
    n_steps = int(math.floor(domains.u_max / step + 1e-9))
    return step * np.arange(n_steps + 1)


def plan_ptc_sgm(table: ScenarioTable,
                 past_doses: Sequence[float],
                 loss: LossSpec,
                 n: int = 6,
                 dose_mesh: Optional[Sequence[float]] = None,
                 mode: str = "mesh_search",
                 prev_plan: Optional[Sequence[float]] = None,
                 gammas: GlobalDecayRates = DEFAULT_GAMMAS,
                 domains: Domains = DEFAULT_DOMAINS) -> DosePlan:
    """Minimize the scenario-weighted rollout loss over the next n hours.

    ``mesh_search`` runs coordinate descent over the dose mesh with a fixed
    multi-start roster (lowest level, one step up, previous plan shifted) to
    a local fixed point per start; ``exact_small`` (n <= 4 and mesh <= 8
    levels) enumerates every sequence and is the oracle the mesh search is
    tested against.  Ties break to the lexicographically smallest sequence.
    """
    if n < 1:
        raise InvalidParameterError("horizon must be >= 1")
    if mode not in ("mesh_search", "exact_small"):
        raise InvalidParameterError(f"unknown mode {mode!r}")
    past_doses = np.asarray(past_doses, dtype=float)
    batch = _ScenarioBatch(table, past_doses, gammas, domains)
    if dose_mesh is None:
        mesh = adaptive_dose_mesh(table, domains, gammas)
    else:
        mesh = np.asarray(dose_mesh, dtype=float)
        if mesh.ndim != 1 or mesh.size == 0:
            raise InvalidParameterError("dose mesh must be a nonempty 1-d array")
        mesh = np.unique(mesh)
        if mesh[0] < 0.0 or mesh[-1] > domains.u_max:
            raise InvalidParameterError("dose mesh violates [0, u_max]")

    if mode == "exact_small":
        if n > 4 or mesh.size > 8:
            raise InvalidParameterError(
                "exact_small is limited to n <= 4 and at most 8 mesh levels")
        cands = np.array(list(itertools.product(mesh, repeat=n)))
        objs = batch.objective(cands, loss, gammas, domains)
        best = int(np.argmin(objs))        # first minimum = lexicographic
        doses = cands[best]
    else:
        doses = _mesh_search(batch, mesh, n, loss, prev_plan, gammas, domains)

    return _finish_plan(batch, past_doses, doses, loss, gammas, domains)


def _mesh_search(batch, mesh, n, loss, prev_plan, gammas, domains):
    # Fixed start roster: all-lowest-level, all-one-step, previous plan
    # shifted one hour (snapped onto the mesh).
    starts = [np.full(n, mesh[0]), np.full(n, mesh[min(1, mesh.size - 1)])]
    if prev_plan is not None:
        prev = np.asarray(prev_plan, dtype=float)
        shifted = np.concatenate([prev[1:], prev[-1:]]) if prev.size else np.zeros(n)
        shifted = np.resize(shifted, n)
        # snap onto the mesh
        idx = np.argmin(np.abs(shifted[:, None] - mesh[None, :]), axis=1)
        starts.append(mesh[idx])
    results = [_descend(batch, mesh, start, loss, gammas, domains)
               for start in starts]
    results.sort(key=lambda r: (r[0], r[1]))
    return results[0][2]


def _descend(batch, mesh, start, loss, gammas, domains):
    """Coordinate descent to a fixed point of one- and two-hour moves.

    Single-hour sweeps alone can stall on schedules where shifting a dose
    between two hours only helps when done jointly, so once they are
    exhausted every hour pair is swept over the full mesh x mesh grid; any
    improvement hands control back to the cheap single-hour sweeps.
    """
    cur = start.copy()
    n = cur.size
    cur_obj = float(batch.objective(cur[None, :], loss, gammas, domains)[0])
    pairs = list(itertools.combinations(range(n), 2))
    pair_levels = np.array(list(itertools.product(mesh, mesh)))
    for _ in range(64):
        improved = False
        for j in range(n):
            cands = np.repeat(cur[None, :], mesh.size, axis=0)
            cands[:, j] = mesh
            objs = batch.objective(cands, loss, gammas, domains)
            i_best = int(np.argmin(objs))
            if objs[i_best] < cur_obj - 1e-12:
                cur = cands[i_best]
                cur_obj = float(objs[i_best])
                improved = True
        if improved:
            continue
        for j1, j2 in pairs:
            cands = np.repeat(cur[None, :], pair_levels.shape[0], axis=0)
            cands[:, j1] = pair_levels[:, 0]
            cands[:, j2] = pair_levels[:, 1]
            objs = batch.objective(cands, loss, gammas, domains)
            i_best = int(np.argmin(objs))
            if objs[i_best] < cur_obj - 1e-12:
                cur = cands[i_best]
                cur_obj = float(objs[i_best])
                improved = True
        if not improved:
            break
    return cur_obj, tuple(cur), cur


def _finish_plan(batch, past_doses, doses, loss, gammas, domains):
    per_live = batch.losses(doses[None, :], loss, gammas, domains)[:, 0]
    expected = float(batch.weights @ per_live)
    all_losses = np.full(len(batch.table.scenarios), np.nan)
    all_losses[batch.indices] = per_live
    weights = np.array([s.weight for s in batch.table.scenarios])
    plan = DosePlan(time=int(len(past_doses)), horizon=int(doses.size),
                    doses=np.asarray(doses, dtype=float),
                    expected_loss=expected, scenario_losses=all_losses)
    return plan.validate(weights, domains)


def plan_ptc_mle(estimate: EstimateResult,
                 past_doses: Sequence[float],
                 loss: LossSpec,
                 n: int = 6,
                 dose_mesh: Optional[Sequence[float]] = None,
                 mode: str = "mesh_search",
                 prev_plan: Optional[Sequence[float]] = None,
                 gammas: GlobalDecayRates = DEFAULT_GAMMAS,
                 domains: Domains = DEFAULT_DOMAINS) -> DosePlan:
    """Plan as if the point estimate were the truth: a singleton table."""
    p = estimate.params
    sc = Scenario(index=0, alpha=p.alpha, b=p.b, feasible=True, k=p.k,
                  yb=p.yb, y0=p.y0, yb0=p.yb0,
                  log_post=estimate.log_posterior, raw_weight=1.0, weight=1.0)
    table = ScenarioTable(scenarios=[sc], map_index=0,
                          map_value=estimate.log_posterior,
                          low_information=False, diagnostics={})
    return plan_ptc_sgm(table, past_doses, loss, n=n, dose_mesh=dose_mesh,
                        mode=mode, prev_plan=prev_plan, gammas=gammas,
                        domains=domains)


# ---------------------------------------------------------------------------
# Baseline policies


def naive_policy(last_dose: float, label: str,
                 domains: Domains = DEFAULT_DOMAINS) -> float:
    """Fixed-step rule: +step when sub-therapeutic, -step when super,
    unchanged in band; clamped to the dose box."""
    if not (0.0 <= last_dose <= domains.u_max):
        raise InvalidParameterError(
            f"last dose {last_dose} outside [0, {domains.u_max}]")
    if label not in ("sub", "therapeutic", "super"):
        raise InvalidParameterError(f"unknown label {label!r}")
    delta = {"sub": NAIVE_STEP, "therapeutic": 0.0, "super": -NAIVE_STEP}[label]
    return float(min(max(last_dose + delta, 0.0), domains.u_max))


DEFAULT_PROTOCOL_TABLE = {
    # Representative per-kilogram nomogram (absolute aPTT thresholds in
    # seconds around an institutional target band); editable stand-in, not
    # taken from any specific hospital document.
    "target_band": [46.0, 70.0],
    "initial": {
        "low": {"bolus_per_kg": 80.0, "rate_per_kg": 18.0, "bolus_cap": 10000.0},
        "high": {"bolus_per_kg": 60.0, "rate_per_kg": 12.0, "bolus_cap": 5000.0},
    },
    "titration": [
        {"aptt_below": 35.0, "rebolus_per_kg": 80.0, "rate_delta_per_kg": 4.0,
         "hold_hours": 0},
        {"aptt_below": 46.0, "rebolus_per_kg": 40.0, "rate_delta_per_kg": 2.0,
         "hold_hours": 0},
        {"aptt_below": 71.0, "rebolus_per_kg": 0.0, "rate_delta_per_kg": 0.0,
         "hold_hours": 0},
        {"aptt_below": 91.0, "rebolus_per_kg": 0.0, "rate_delta_per_kg": -2.0,
         "hold_hours": 0},
        {"aptt_below": None, "rebolus_per_kg": 0.0, "rate_delta_per_kg": -3.0,
         "hold_hours": 1},
    ],
}


@dataclass(frozen=True)
class WeightBasedAction:
    """One protocol step: an immediate bolus, the infusion rate to run
    until the next check, and how long to hold the drip first."""
    bolus: float
    rate: float
    hold_hours: int


def validate_protocol_table(table: dict) -> dict:
    """Check the protocol table shape; raises `ConfigError` on problems."""
    try:
        lo, hi = (float(v) for v in table["target_band"])
        if not (0.0 < lo < hi):
            raise ConfigError("target_band must be 0 < lo < hi")
        for tier in ("low", "high"):
            row = table["initial"][tier]
            for key in ("bolus_per_kg", "rate_per_kg", "bolus_cap"):
                if float(row[key]) < 0:
                    raise ConfigError(f"initial.{tier}.{key} must be >= 0")
        rows = table["titration"]
        if not rows:
            raise ConfigError("titration table is empty")
        prev = 0.0
        for i, row in enumerate(rows):
            cut = row["aptt_below"]
            last = i == len(rows) - 1
            if (cut is None) != last:
                raise ConfigError(
                    "exactly the final titration row may omit its threshold")
            if cut is not None:
                if float(cut) <= prev:
                    raise ConfigError("titration thresholds must increase")
                prev = float(cut)
            if float(row["rebolus_per_kg"]) < 0 or int(row["hold_hours"]) < 0:
                raise ConfigError("rebolus and hold must be >= 0")
            float(row["rate_delta_per_kg"])
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed protocol table: {exc!r}") from exc
    return table


def load_protocol_table(path) -> dict:
    """Read a protocol table from a JSON file (schema in the README)."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            table = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read protocol table {path}: {exc}") from exc
    return validate_protocol_table(table)


def weight_based_policy(weight_kg: float,
                        bleed_risk: str,
                        latest_aptt: Optional[float],
                        current_rate: Optional[float] = None,
                        table: dict = DEFAULT_PROTOCOL_TABLE,
                        domains: Domains = DEFAULT_DOMAINS) -> WeightBasedAction:
    """Per-kilogram protocol step.

    ``current_rate`` None means treatment start: the initial bolus and rate
    for the risk tier.  Afterwards the latest aPTT picks a titration row;
    rate adjustments are per-kg, everything is clamped to the dose box
    (boluses additionally to the table's own cap).
    """
    if weight_kg <= 0:
        raise InvalidParameterError("weight must be positive")
    if bleed_risk not in ("low", "high"):
        raise InvalidParameterError(f"unknown bleed risk {bleed_risk!r}")
    validate_protocol_table(table)
    if current_rate is None:
        row = table["initial"][bleed_risk]
        bolus = min(weight_kg * row["bolus_per_kg"], row["bolus_cap"],
                    domains.u_max)
        rate = min(weight_kg * row["rate_per_kg"], domains.u_max)
        return WeightBasedAction(bolus=float(bolus), rate=float(rate),
                                 hold_hours=0)
    if latest_aptt is None:
        return WeightBasedAction(bolus=0.0, rate=float(current_rate),
                                 hold_hours=0)
    for row in table["titration"]:
        cut = row["aptt_below"]
        if cut is None or latest_aptt < float(cut):
            bolus = min(weight_kg * row["rebolus_per_kg"], domains.u_max)
            rate = current_rate + weight_kg * row["rate_delta_per_kg"]
            rate = min(max(rate, 0.0), domains.u_max)
            return WeightBasedAction(bolus=float(bolus), rate=float(rate),
                                     hold_hours=int(row["hold_hours"]))
    raise ConfigError("titration table has no terminal row")  # pragma: no cover
