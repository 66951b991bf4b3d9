"""Parameter search: grid MLE oracle, cut-based MLE, scenario weighting,
and pointwise posterior evaluation.

Conventions shared by every search here:
  * candidate order is (alpha index, b index, k ascending); exact value
    ties keep the earliest candidate in that order;
  * a single refinement pass re-meshes the elimination capacity at ~10x
    resolution around the incumbent;
  * priors enter searches through their kinetic part only — the
    initial conditions (yb, y0, yb0) are profiled by the fit LP, which is
    exact for priors flat in those coordinates.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..dynamics import (DEFAULT_DOMAINS, DEFAULT_GAMMAS, Domains,
                        GlobalDecayRates, PatientParams, roll_x)
from ..errors import EstimationFailedError, InvalidParameterError
from .benders import benders_solve, refined_mesh
from .likelihood import (NEG_INF, _forced_terms, _kernels, profile_loglik)
from .observations import ObservationSeries
from .priors import PriorSpec, UNIFORM_PRIOR

DEFAULT_K_MESH = np.geomspace(DEFAULT_DOMAINS.k_range[0],
                              DEFAULT_DOMAINS.k_range[1], 64)
DEFAULT_B_GRID = tuple(np.geomspace(DEFAULT_DOMAINS.b_range[0],
                                    DEFAULT_DOMAINS.b_range[1], 13))


@dataclass
class EstimateResult:
    """Best parameter vector found by a search, with solver accounting."""
    params: PatientParams
    log_likelihood: float
    log_posterior: float
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True)
class EstimateConfig:
    alphas: Optional[Sequence[float]] = None      # default: admissible set
    bs: Optional[Sequence[float]] = None          # default: DEFAULT_B_GRID
    k_mesh: Optional[Sequence[float]] = None      # default: DEFAULT_K_MESH
    epsilon: float = 1e-3
    refine: bool = True
    prior: PriorSpec = UNIFORM_PRIOR


def _resolve_grid(config: Optional[EstimateConfig], domains: Domains):
    cfg = config if config is not None else EstimateConfig()
    alphas = tuple(cfg.alphas) if cfg.alphas is not None else domains.alpha_set
    bs = tuple(cfg.bs) if cfg.bs is not None else DEFAULT_B_GRID
    ks = (np.asarray(cfg.k_mesh, dtype=float) if cfg.k_mesh is not None
          else np.geomspace(domains.k_range[0], domains.k_range[1], 64))
    return cfg, alphas, bs, ks


def _result(alpha, b, k, prof, prior, method, diag) -> EstimateResult:
    params = PatientParams(alpha=alpha, k=k, b=b, yb=prof.yb,
                           y0=prof.y0, yb0=prof.yb0)
    return EstimateResult(params=params,
                          log_likelihood=prof.value,
                          log_posterior=prof.value + prior.log_full(params),
                          diagnostics={"method": method, **diag})


def mle_grid(obs: ObservationSeries,
             grid: tuple,
             gammas: GlobalDecayRates = DEFAULT_GAMMAS,
             domains: Domains = DEFAULT_DOMAINS,
             prior: PriorSpec = UNIFORM_PRIOR,
             refine: bool = True) -> EstimateResult:
    """Exhaustive profile search over an (alphas, bs, k-mesh) product grid,
    plus one 10x re-mesh around the incumbent capacity.  Serves as the
    brute-force oracle for the cut-based search."""
    alphas, bs, ks = grid
    alphas = tuple(alphas)
    bs = tuple(bs)
    ks = np.sort(np.asarray(ks, dtype=float))
    if not (len(alphas) and len(bs) and ks.size):
        raise InvalidParameterError("grid meshes must be nonempty")
    t0 = time.perf_counter()
    best = None       # (total, alpha, b, k, ProfileResult)
    evaluations = 0

    def sweep(k_values):
        nonlocal best, evaluations
        for alpha in alphas:
            for b in bs:
                for k in k_values:
                    prof = profile_loglik(obs, alpha, b, float(k),
                                          gammas=gammas, domains=domains)
                    evaluations += 1
                    if not prof.feasible:
                        continue
                    total = prof.value + prior.log_kinetic(alpha, float(k), b)
                    if best is None or total > best[0]:
                        best = (total, alpha, b, float(k), prof)

    sweep(ks)
    if best is None:
        raise EstimationFailedError(
            "no grid point admits a trajectory inside the bounds")
    if refine:
        sweep(refined_mesh(ks, best[3]))
    _, alpha, b, k, prof = best
    diag = {"iterations": evaluations, "cuts_added": 0,
            "wall_time_s": time.perf_counter() - t0,
            "low_information": obs.low_information, "refined": refine}
    return _result(alpha, b, k, prof, prior, "grid", diag)


def mle_estimate(obs: ObservationSeries,
                 method: str = "grid",
                 config: Optional[EstimateConfig] = None,
                 gammas: GlobalDecayRates = DEFAULT_GAMMAS,
                 domains: Domains = DEFAULT_DOMAINS) -> EstimateResult:
    """Maximum-likelihood / maximum-posterior search over all admissible
    elimination rates using the chosen inner solver."""
    cfg, alphas, bs, ks = _resolve_grid(config, domains)
    if method == "grid":
        return mle_grid(obs, (alphas, bs, ks), gammas=gammas, domains=domains,
                        prior=cfg.prior, refine=cfg.refine)
    if method != "benders":
        raise InvalidParameterError(f"unknown estimation method {method!r}")

    t0 = time.perf_counter()
    best = None          # (value, alpha, BendersResult)
    totals = {"iterations": 0, "cuts_added": 0}
    per_alpha = []
    failures = 0
    for alpha in alphas:
        stages = []
        try:
            r = benders_solve(obs, alpha, cfg.epsilon, ks, bs,
                              gammas=gammas, domains=domains, prior=cfg.prior)
            stages.append(r)
            if cfg.refine:
                r2 = benders_solve(obs, alpha, cfg.epsilon,
                                   refined_mesh(ks, r.k), [r.b],
                                   gammas=gammas, domains=domains,
                                   prior=cfg.prior)
                stages.append(r2)
        except EstimationFailedError:
            failures += 1
            per_alpha.append({"alpha": alpha, "feasible": False})
            continue
        winner = stages[0]
        for s in stages[1:]:
            if s.value > winner.value:
                winner = s
        for s in stages:
            totals["iterations"] += s.diagnostics.iterations
            totals["cuts_added"] += (s.diagnostics.optimality_cuts
                                     + s.diagnostics.feasibility_cuts)
        per_alpha.append({"alpha": alpha, "feasible": True,
                          "value": winner.value,
                          **stages[-1].diagnostics.as_dict()})
        if best is None or winner.value > best[0]:
            best = (winner.value, alpha, winner)
    if best is None:
        raise EstimationFailedError(
            "no admissible rate admits a trajectory inside the bounds")
    _, alpha, r = best
    prof = profile_loglik(obs, alpha, r.b, r.k, gammas=gammas, domains=domains)
    diag = {**totals, "wall_time_s": time.perf_counter() - t0,
            "low_information": obs.low_information, "epsilon": cfg.epsilon,
            "per_alpha": per_alpha, "refined": cfg.refine}
    return _result(alpha, r.b, r.k, prof, cfg.prior, "benders", diag)


# --------------------------------------------------------------------------
# Scenario weighting


@dataclass
class Scenario:
    """One (alpha, b) hypothesis with its profiled companions and weight."""
    index: int
    alpha: float
    b: float
    feasible: bool
    k: Optional[float] = None
    yb: Optional[float] = None
    y0: Optional[float] = None
    yb0: Optional[float] = None
    log_post: float = NEG_INF
    raw_weight: float = 0.0
    weight: float = 0.0
    x_end: Optional[float] = None
    y_end: Optional[float] = None
    yb_end: Optional[float] = None

    @property
    def params(self) -> PatientParams:
        if not self.feasible:
            raise EstimationFailedError(
                f"scenario {self.index} has no feasible trajectory")
        return PatientParams(alpha=self.alpha, k=self.k, b=self.b,
                             yb=self.yb, y0=self.y0, yb0=self.yb0)


@dataclass
class ScenarioTable:
    scenarios: list
    map_index: int
    map_value: float
    low_information: bool
    diagnostics: dict = field(default_factory=dict)

    def top(self, m: int) -> list:
        """The m highest-weight scenarios; ties keep grid order."""
        order = sorted(range(len(self.scenarios)),
                       key=lambda i: (-self.scenarios[i].weight, i))
        return [self.scenarios[i] for i in order[:max(0, m)]]

    @property
    def map_scenario(self) -> Scenario:
        return self.scenarios[self.map_index]


def bracket_mesh(k_mesh: np.ndarray, k_hint: float, points: int = 9) -> np.ndarray:
    """Short geometric mesh spanning two coarse cells either side of a
    previous incumbent — the warm-start candidate set for repeat fits."""
    k_mesh = np.asarray(k_mesh, dtype=float)
    ratio = (k_mesh[-1] / k_mesh[0]) ** (1.0 / max(len(k_mesh) - 1, 1))
    lo = max(k_hint / ratio ** 2, k_mesh[0])
    hi = min(k_hint * ratio ** 2, k_mesh[-1])
    if hi <= lo:
        return np.array([lo])
    return np.geomspace(lo, hi, points)


def scenario_table(obs: ObservationSeries,
                   alphas: Sequence[float],
                   bs: Sequence[float],
                   prior: PriorSpec = UNIFORM_PRIOR,
                   gammas: GlobalDecayRates = DEFAULT_GAMMAS,
                   domains: Domains = DEFAULT_DOMAINS,
                   k_mesh: Optional[Sequence[float]] = None,
                   hints: Optional[Sequence[Optional[float]]] = None,
                   epsilon: float = 1e-3,
                   refine: bool = True) -> ScenarioTable:
    """Per-scenario profiled posterior weights over an (alpha, b) grid.

    For each scenario the capacity k and the initial conditions are profiled
    out (cut-based search over the k mesh, LP over the rest); weights are
    exp of the profiled log posterior, shifted so the best scenario has raw
    weight 1, then normalized to sum to 1.  ``hints`` (one previous
    incumbent k per scenario, or None) narrows each k search to a short
    bracket around the hint — callers refresh with a full sweep
    periodically.  Results do not depend on scenario evaluation order.
    """
    alphas = tuple(alphas)
    bs = tuple(bs)
    if not alphas or not bs:
        raise InvalidParameterError("scenario grid must be nonempty")
    ks = (np.asarray(k_mesh, dtype=float) if k_mesh is not None
          else np.geomspace(domains.k_range[0], domains.k_range[1], 64))
    n = len(alphas) * len(bs)
    if hints is not None and len(hints) != n:
        raise InvalidParameterError(
            f"hints must have one entry per scenario ({n})")
    t0 = time.perf_counter()
    scenarios = []
    subproblems = 0
    idx = 0
    for alpha in alphas:
        for b in bs:
            hint = hints[idx] if hints is not None else None
            candidates = bracket_mesh(ks, hint) if hint is not None else ks
            sc = Scenario(index=idx, alpha=alpha, b=b, feasible=False)
            try:
                r = benders_solve(obs, alpha, epsilon, candidates, [b],
                                  gammas=gammas, domains=domains, prior=prior)
                if refine:
                    r2 = benders_solve(obs, alpha, epsilon,
                                       refined_mesh(candidates, r.k), [b],
                                       gammas=gammas, domains=domains,
                                       prior=prior)
                    if r2.value > r.value:
                        r = r2
                    subproblems += r2.diagnostics.iterations
                subproblems += r.diagnostics.iterations
                fit = profile_loglik(obs, alpha, b, r.k, gammas=gammas,
                                     domains=domains, need_path=True)
                sc.feasible = True
                sc.k, sc.yb, sc.y0, sc.yb0 = r.k, r.yb, r.y0, r.yb0
                sc.log_post = r.value
                sc.y_end = float(fit.y_path[-1])
                sc.yb_end = float(fit.yb_path[-1])
                sc.x_end = float(roll_x(alpha, r.k, obs.doses,
                                        domains.x_max)[-1])
            except EstimationFailedError:
                pass
            scenarios.append(sc)
            idx += 1

    values = np.array([s.log_post for s in scenarios])
    v_max = values.max()
    if v_max == NEG_INF:
        raise EstimationFailedError(
            "no scenario admits a trajectory inside the bounds")
    raw = np.exp(values - v_max)
    weights = raw / raw.sum()
    map_index = int(np.argmax(values))   # first max wins: grid order
    for s, rw, w in zip(scenarios, raw, weights):
        s.raw_weight = float(rw)
        s.weight = float(w)
    return ScenarioTable(scenarios=scenarios, map_index=map_index,
                         map_value=float(v_max),
                         low_information=obs.low_information,
                         diagnostics={
                             "wall_time_s": time.perf_counter() - t0,
                             "subproblems": subproblems,
                             "bracketed": hints is not None,
                         })


# --------------------------------------------------------------------------
# Pointwise posterior


def log_posterior_at(obs: ObservationSeries,
                     params: PatientParams,
                     prior: PriorSpec = UNIFORM_PRIOR,
                     gammas: GlobalDecayRates = DEFAULT_GAMMAS,
                     domains: Domains = DEFAULT_DOMAINS) -> float:
    """Log posterior with every parameter fixed: a deterministic rollout,
    a bound check, and a residual sum — no optimization."""
    params.validate(domains)
    T = obs.horizon
    x = roll_x(params.alpha, params.k, obs.doses, domains.x_max)
    A, B, c, cp, d, dp = _kernels(gammas, T)
    e, ep = _forced_terms(params.b * x, A, B, T)
    y = params.y0 * A + params.yb0 * c + params.yb * d + e
    w = params.y0 * B + params.yb0 * cp + params.yb * dp + ep
    tol = 1e-7 * max(1.0, domains.y_max)
    lo = min(y.min(), w.min())
    hi = max(y.max(), w.max())
    if lo < -tol or hi > domains.y_max + tol:
        return NEG_INF
    resid = obs.values - y[obs.times]
    ll = (-np.abs(resid).sum() / obs.noise_scale
          - obs.count * math.log(2.0 * obs.noise_scale))
    return ll + prior.log_full(params)


def scaled_posterior(obs: ObservationSeries,
                     params: PatientParams,
                     prior: PriorSpec,
                     map_value: float,
                     gammas: GlobalDecayRates = DEFAULT_GAMMAS,
                     domains: Domains = DEFAULT_DOMAINS) -> float:
    """Posterior on probability scale relative to the MAP: exp(psi - psi_MAP),
    1 at the MAP itself and 0 at infeasible parameter vectors."""
    v = log_posterior_at(obs, params, prior, gammas=gammas, domains=domains)
    if v == NEG_INF:
        return 0.0
    return math.exp(v - map_value)
