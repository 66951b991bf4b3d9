"""HTTP/JSON recommendation service backing the clinician console.

Each dosing session is an append-only event log on disk (one JSON line
per input or recommendation); the in-memory state is always
reconstructible by replay, which is also how a restarted service picks
sessions back up.  Requests for one session are serialized behind a
session lock while distinct sessions proceed concurrently.  Every
response carries the API schema id, and model endpoints report the
scenario weights and the low-information flag alongside their payload.

Model work (scenario-table fits, dose plans, what-if rollouts) runs
through the same pure helpers the command-line tools use, with no
warm-start state carried between requests, so any recommendation in the
audit log is reproducible offline from the logged inputs.  A request
that exceeds the planning-time budget returns 503 with partial
diagnostics instead of hanging the console.
"""

import json
import math
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from concurrent.futures import TimeoutError as FutureTimeoutError
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .data_io import _plain as jsonable
from .dosing import (LOSS_KINDS, DosePlan, LossSpec, plan_ptc_sgm)
from .dynamics import (DEFAULT_DOMAINS, DEFAULT_GAMMAS, simulate,
                       therapeutic_range)
from .errors import ConfigError, HepdoseError, InvalidParameterError
from .estimation import (LOW_INFORMATION_COUNT, ObservationSeries,
                         ScenarioTable, scenario_table)
from .simulator import B_BAR_5, B_BAR_10, SCENARIO_ALPHAS

__all__ = [
    "API_SCHEMA", "AppConfig", "BudgetExceededError", "GuardError",
    "OrderConflictError", "SessionNotFoundError", "SessionStore",
    "build_app", "fit_table", "load_app_config", "recommend_plan",
    "whatif_rollout",
]

API_SCHEMA = "hepdose.api/v1"
APTT_LIMITS = (0.0, 300.0)        # plausibility gate, as in chart files
MAX_WHATIF_HOURS = 168


# ---------------------------------------------------------------------------
# Service-level errors (mapped to HTTP statuses by the app)


class SessionNotFoundError(HepdoseError):
    """No session with the requested id."""


class OrderConflictError(HepdoseError, ValueError):
    """An input hour conflicts with the session's recorded history."""


class GuardError(HepdoseError, ValueError):
    """The low-information guard refused a model request."""


class BudgetExceededError(HepdoseError, RuntimeError):
    """Model work exceeded the per-request time budget."""

    def __init__(self, stage: str, elapsed: float, budget: float):
        self.diagnostics = {"stage": stage, "elapsed_s": round(elapsed, 3),
                            "budget_s": budget}
        super().__init__(
            f"{stage} exceeded the {budget:g}s planning budget "
            f"({elapsed:.1f}s elapsed)")


# ---------------------------------------------------------------------------
# Configuration


@dataclass(frozen=True)
class AppConfig:
    """Service and per-session model configuration."""

    state_dir: str = "hepdose-sessions"
    noise_scale: float = 2.0          # Laplace scale attached to readings
    scenario_count: int = 10          # 10 or 20 scenarios
    k_mesh_points: int = 64
    loss: str = "median_deviation"
    horizon: int = 6
    budget_seconds: float = 60.0
    trajectory_hours: int = 24

    def validate(self) -> "AppConfig":
        if not (self.noise_scale > 0):
            raise ConfigError("noise_scale must be positive")
        if self.scenario_count not in (10, 20):
            raise ConfigError("scenario_count must be 10 or 20")
        if self.k_mesh_points < 2:
            raise ConfigError("k_mesh_points must be >= 2")
        if self.loss not in LOSS_KINDS:
            raise ConfigError(f"loss must be one of {LOSS_KINDS}")
        if self.horizon < 1 or self.trajectory_hours < 1:
            raise ConfigError("horizons must be >= 1")
        if not (self.budget_seconds > 0):
            raise ConfigError("budget_seconds must be positive")
        return self

    def replace(self, **overrides) -> "AppConfig":
        merged = {**asdict(self), **{k: v for k, v in overrides.items()
                                     if v is not None}}
        return AppConfig(**merged).validate()


def load_app_config(path: Optional[str] = None) -> AppConfig:
    """Build an AppConfig from a JSON file (unknown fields rejected)."""
    if path is None:
        return AppConfig().validate()
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config file must hold a JSON object")
    known = set(AppConfig.__dataclass_fields__)
    unknown = set(raw) - known
    if unknown:
        raise ConfigError("unknown config field(s): "
                          + ", ".join(sorted(unknown)))
    return AppConfig(**raw).validate()


# ---------------------------------------------------------------------------
# Pure model helpers (shared by the service and the command-line tools)


def _b_grid(scenario_count: int):
    return B_BAR_5 if scenario_count == 10 else B_BAR_10


def fit_table(obs: ObservationSeries, config: AppConfig) -> ScenarioTable:
    """Fit the scenario table exactly as a fresh offline run would."""
    domains = DEFAULT_DOMAINS
    k_mesh = np.geomspace(domains.k_range[0], domains.k_range[1],
                          config.k_mesh_points)
    return scenario_table(obs, alphas=SCENARIO_ALPHAS,
                          bs=_b_grid(config.scenario_count), k_mesh=k_mesh)


def recommend_plan(obs: ObservationSeries, config: AppConfig,
                   horizon: Optional[int] = None,
                   loss: Optional[str] = None,
                   table: Optional[ScenarioTable] = None,
                   ) -> tuple:
    """(table, plan) for the next dosing block; deterministic in inputs."""
    table = fit_table(obs, config) if table is None else table
    plan = plan_ptc_sgm(table, obs.doses,
                        LossSpec(loss if loss is not None else config.loss),
                        n=horizon if horizon is not None else config.horizon)
    return table, plan


def whatif_rollout(obs: ObservationSeries, table: ScenarioTable,
                   candidate, loss: LossSpec) -> dict:
    """Per-scenario futures of a candidate dose block, plus weighted loss.

    Every live scenario is replayed from hour 0 over the recorded doses
    followed by the candidate; the returned trajectories cover only the
    candidate's hours.  The zero-dose candidate is exactly the
    trajectory endpoint's rollout — one computation path for both.
    """
    candidate = np.asarray(candidate, dtype=float)
    if candidate.ndim != 1 or not (1 <= candidate.size <= MAX_WHATIF_HOURS):
        raise InvalidParameterError(
            f"candidate must list 1..{MAX_WHATIF_HOURS} hourly doses")
    if np.any(candidate < 0) or np.any(candidate > DEFAULT_DOMAINS.u_max):
        raise InvalidParameterError(
            f"candidate doses must lie in [0, {DEFAULT_DOMAINS.u_max}]")
    start = len(obs.doses)
    hours = list(range(start + 1, start + candidate.size + 1))
    live = [s for s in table.scenarios if s.feasible and s.weight > 0.0]
    if not live:
        raise GuardError("no live scenarios to roll out")
    total = math.fsum(s.weight for s in live)
    rows, expected = [], 0.0
    from .dosing import hourly_loss     # local import avoids cycle at load
    for s in live:
        traj = simulate(s.params, np.concatenate([obs.doses, candidate]),
                        DEFAULT_GAMMAS, DEFAULT_DOMAINS)
        y = traj.y[start + 1:]
        s_loss = float(np.sum(hourly_loss(y, s.yb, loss)))
        weight = s.weight / total
        expected += weight * s_loss
        rows.append({"index": s.index, "alpha": s.alpha, "b": s.b,
                     "k": s.k, "yb": s.yb, "weight": weight,
                     "loss": s_loss, "y": y})
    return {"hours": hours, "scenarios": rows, "expected_loss": expected}


def _weighted_quantile(values: np.ndarray, weights: np.ndarray,
                       q: float) -> float:
    order = np.argsort(values)
    cum = np.cumsum(weights[order])
    idx = int(np.searchsorted(cum, q * cum[-1], side="left"))
    return float(values[order][min(idx, len(values) - 1)])


# ---------------------------------------------------------------------------
# Sessions


class Session:
    """Replayable session state: effective inputs plus the audit log."""

    def __init__(self, sid: str, config: AppConfig, log_path: Path):
        self.sid = sid
        self.config = config
        self.log_path = log_path
        self.lock = threading.RLock()
        self.events: list = []
        self.observations: dict = {}      # hour -> effective aPTT
        self.doses: dict = {}             # hour -> effective IU
        self.last_obs_hour = 0
        self.last_dose_hour = -1
        self.last_plan: Optional[dict] = None

    # -- state transitions ------------------------------------------------

    def apply(self, event: dict) -> None:
        kind = event["event"]
        if kind == "created":
            pass
        elif kind == "observation":
            hour, supersedes = event["hour"], event.get("supersedes", False)
            if supersedes:
                if hour not in self.observations:
                    raise OrderConflictError(
                        f"no observation at hour {hour} to supersede")
            elif hour <= self.last_obs_hour:
                raise OrderConflictError(
                    f"observation hour {hour} is not after hour "
                    f"{self.last_obs_hour}; corrections must set supersedes")
            self.observations[hour] = event["aptt"]
            self.last_obs_hour = max(self.last_obs_hour, hour)
        elif kind == "dose":
            hour, supersedes = event["hour"], event.get("supersedes", False)
            if supersedes:
                if hour not in self.doses:
                    raise OrderConflictError(
                        f"no dose at hour {hour} to supersede")
            elif hour <= self.last_dose_hour:
                raise OrderConflictError(
                    f"dose hour {hour} is not after hour "
                    f"{self.last_dose_hour}; corrections must set supersedes")
            self.doses[hour] = event["dose"]
            self.last_dose_hour = max(self.last_dose_hour, hour)
        elif kind == "recommendation":
            self.last_plan = event["plan"]
        else:
            raise ConfigError(f"unknown event kind {kind!r} in session log")
        self.events.append(event)

    def record(self, event: dict) -> None:
        """Apply an event and append it durably to the session log."""
        self.apply(event)
        with self.log_path.open("a") as handle:
            handle.write(json.dumps(jsonable(event), sort_keys=True) + "\n")

    # -- views --------------------------------------------------------------

    @property
    def n_observations(self) -> int:
        return len(self.observations)

    @property
    def low_information(self) -> bool:
        return self.n_observations < LOW_INFORMATION_COUNT

    def series(self) -> ObservationSeries:
        if not self.observations:
            raise GuardError("no observations recorded yet")
        times = np.asarray(sorted(self.observations), dtype=int)
        horizon = max(self.last_dose_hour + 1, int(times[-1]))
        doses = np.zeros(horizon)
        for hour, dose in self.doses.items():
            doses[hour] = dose
        return ObservationSeries(
            doses=doses, times=times,
            values=np.asarray([self.observations[int(t)] for t in times]),
            noise_scale=self.config.noise_scale).validate()

    def view(self) -> dict:
        return {
            "session_id": self.sid,
            "config": asdict(self.config),
            "observations": [{"hour": h, "aptt": self.observations[h]}
                             for h in sorted(self.observations)],
            "doses": [{"hour": h, "dose": self.doses[h]}
                      for h in sorted(self.doses)],
            "n_observations": self.n_observations,
            "n_events": len(self.events),
            "low_information": self.low_information,
            "last_plan": self.last_plan,
        }


class SessionStore:
    """Disk-backed session registry with per-session serialization."""

    def __init__(self, config: AppConfig):
        self.config = config.validate()
        self.root = Path(config.state_dir)
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._sessions: dict = {}

    def _log_path(self, sid: str) -> Path:
        return self.root / f"{sid}.jsonl"

    def create(self, **overrides) -> Session:
        config = self.config.replace(
            **{k: v for k, v in overrides.items() if k != "state_dir"})
        sid = uuid.uuid4().hex[:12]
        session = Session(sid, config, self._log_path(sid))
        with self._lock:
            self._sessions[sid] = session
        session.record({"event": "created", "config": asdict(config)})
        return session

    def get(self, sid: str) -> Session:
        with self._lock:
            if sid in self._sessions:
                return self._sessions[sid]
        session = self._replay(sid)
        with self._lock:
            return self._sessions.setdefault(sid, session)

    def _replay(self, sid: str) -> Session:
        path = self._log_path(sid)
        if not path.exists():
            raise SessionNotFoundError(f"unknown session {sid!r}")
        lines = path.read_text().splitlines()
        if not lines:
            raise SessionNotFoundError(f"session log {sid!r} is empty")
        created = json.loads(lines[0])
        if created.get("event") != "created":
            raise ConfigError(f"session log {sid!r} does not start with "
                              "its creation event")
        config = AppConfig(**created["config"]).validate()
        session = Session(sid, config, path)
        for line in lines:
            session.apply(json.loads(line))
        return session


# ---------------------------------------------------------------------------
# HTTP app


def build_app(config: Optional[AppConfig] = None):
    """Construct the FastAPI application around a session store."""
    from fastapi import FastAPI, Request
    from fastapi.exceptions import RequestValidationError
    from fastapi.responses import JSONResponse
    from pydantic import BaseModel, ConfigDict

    store = SessionStore(config if config is not None else AppConfig())
    pool = ThreadPoolExecutor(max_workers=8)
    app = FastAPI(title="heparin dosing console service", docs_url=None,
                  redoc_url=None)
    app.state.store = store

    # -- request bodies ----------------------------------------------------

    class CreateSessionIn(BaseModel):
        model_config = ConfigDict(extra="forbid")
        noise_scale: Optional[float] = None
        scenario_count: Optional[int] = None
        loss: Optional[str] = None
        horizon: Optional[int] = None

    class ObservationIn(BaseModel):
        model_config = ConfigDict(extra="forbid")
        hour: int
        aptt: float
        supersedes: bool = False

    class DoseIn(BaseModel):
        model_config = ConfigDict(extra="forbid")
        hour: int
        dose: float
        supersedes: bool = False

    class WhatifIn(BaseModel):
        model_config = ConfigDict(extra="forbid")
        doses: list
        loss: Optional[str] = None

    # -- plumbing ------------------------------------------------------------

    def reply(payload: dict, status: int = 200) -> JSONResponse:
        return JSONResponse(jsonable({"schema": API_SCHEMA, **payload}),
                            status_code=status)

    def fail(status: int, message: str, **extra) -> JSONResponse:
        return reply({"error": message, **extra}, status=status)

    @app.exception_handler(RequestValidationError)
    async def on_validation(request: Request, exc: RequestValidationError):
        fields = [{"field": ".".join(str(p) for p in e["loc"]
                                     if p != "body"),
                   "message": e["msg"]} for e in exc.errors()]
        return fail(400, "request validation failed", fields=fields)

    @app.exception_handler(HepdoseError)
    async def on_domain_error(request: Request, exc: HepdoseError):
        if isinstance(exc, SessionNotFoundError):
            return fail(404, str(exc))
        if isinstance(exc, OrderConflictError):
            return fail(409, str(exc))
        if isinstance(exc, GuardError):
            return fail(422, str(exc))
        if isinstance(exc, BudgetExceededError):
            return fail(503, str(exc), diagnostics=exc.diagnostics)
        return fail(400, str(exc))

    def budgeted(session: Session, stage_fn_pairs) -> list:
        """Run compute stages inside the session's planning budget."""
        budget = session.config.budget_seconds
        t0 = time.perf_counter()
        out = []
        for stage, fn in stage_fn_pairs:
            remaining = budget - (time.perf_counter() - t0)
            if remaining <= 0:
                raise BudgetExceededError(stage, time.perf_counter() - t0,
                                          budget)
            future = pool.submit(fn, *out)
            try:
                out.append(future.result(timeout=remaining))
            except FutureTimeoutError:
                raise BudgetExceededError(stage,
                                          time.perf_counter() - t0,
                                          budget) from None
        return out

    def weights_payload(table: ScenarioTable) -> list:
        return [{"index": s.index, "alpha": s.alpha, "b": s.b, "k": s.k,
                 "yb": s.yb, "weight": s.weight, "feasible": s.feasible}
                for s in table.scenarios]

    def guarded_series(session: Session, need: int) -> ObservationSeries:
        if session.n_observations < need:
            raise GuardError(
                f"low-information guard: {session.n_observations} "
                f"observation(s) recorded, {need} required")
        return session.series()

    # -- endpoints -----------------------------------------------------------

    @app.post("/sessions", status_code=201)
    def create_session(body: Optional[CreateSessionIn] = None):
        overrides = {} if body is None else body.model_dump()
        try:
            session = store.create(**overrides)
        except ConfigError as exc:
            raise GuardError(str(exc)) from exc      # 422: bad config choice
        return reply({"session_id": session.sid,
                      "config": asdict(session.config)}, status=201)

    @app.get("/sessions/{sid}")
    def get_session(sid: str):
        session = store.get(sid)
        with session.lock:
            return reply(session.view())

    @app.post("/sessions/{sid}/observations")
    def post_observation(sid: str, body: ObservationIn):
        session = store.get(sid)
        if body.hour < 1:
            raise InvalidParameterError(
                "observation hour must be >= 1 (hour 0 is the pre-treatment "
                "state)")
        if not (APTT_LIMITS[0] < body.aptt < APTT_LIMITS[1]):
            raise InvalidParameterError(
                f"aptt must lie strictly inside {APTT_LIMITS}")
        with session.lock:
            session.record({"event": "observation", "hour": body.hour,
                            "aptt": body.aptt, "supersedes": body.supersedes})
            return reply({"accepted": True,
                          "n_observations": session.n_observations,
                          "low_information": session.low_information})

    @app.post("/sessions/{sid}/doses")
    def post_dose(sid: str, body: DoseIn):
        session = store.get(sid)
        if body.hour < 0:
            raise InvalidParameterError("dose hour must be >= 0")
        if not (0.0 <= body.dose <= DEFAULT_DOMAINS.u_max):
            raise InvalidParameterError(
                f"dose must lie in [0, {DEFAULT_DOMAINS.u_max}]")
        with session.lock:
            session.record({"event": "dose", "hour": body.hour,
                            "dose": body.dose,
                            "supersedes": body.supersedes})
            return reply({"accepted": True,
                          "n_dose_hours": len(session.doses)})

    @app.get("/sessions/{sid}/estimate")
    def get_estimate(sid: str):
        session = store.get(sid)
        with session.lock:
            obs = guarded_series(session, 1)
            (table,) = budgeted(session, [
                ("estimate", lambda: fit_table(obs, session.config))])
            return reply({
                "n_observations": session.n_observations,
                "low_information": table.low_information,
                "map": {"log_posterior": table.map_value,
                        **_scenario_params(table.map_scenario)},
                "scenario_weights": weights_payload(table)})

    @app.get("/sessions/{sid}/recommendation")
    def get_recommendation(sid: str, horizon: Optional[int] = None,
                           loss: Optional[str] = None):
        session = store.get(sid)
        if loss is not None and loss not in LOSS_KINDS:
            raise InvalidParameterError(
                f"loss must be one of {LOSS_KINDS}, got {loss!r}")
        if horizon is not None and not (1 <= horizon <= MAX_WHATIF_HOURS):
            raise InvalidParameterError(
                f"horizon must lie in 1..{MAX_WHATIF_HOURS}")
        with session.lock:
            obs = guarded_series(session, LOW_INFORMATION_COUNT)
            t0 = time.perf_counter()
            table, plan = _budgeted_recommendation(session, obs, horizon,
                                                   loss)
            payload = {
                "plan": _plan_payload(plan),
                "loss": loss if loss is not None else session.config.loss,
                "low_information": table.low_information,
                "scenario_weights": weights_payload(table),
                "elapsed_s": round(time.perf_counter() - t0, 3)}
            session.record({"event": "recommendation",
                            "horizon": plan.horizon,
                            "loss": payload["loss"],
                            "plan": _plan_payload(plan),
                            "low_information": table.low_information})
            return reply(payload)

    def _budgeted_recommendation(session, obs, horizon, loss):
        stages = [
            ("estimate", lambda: fit_table(obs, session.config)),
            ("plan", lambda table: recommend_plan(
                obs, session.config, horizon=horizon, loss=loss,
                table=table)[1]),
        ]
        table, plan = budgeted(session, stages)
        return table, plan

    @app.post("/sessions/{sid}/whatif")
    def post_whatif(sid: str, body: WhatifIn):
        session = store.get(sid)
        spec = LossSpec(body.loss if body.loss is not None
                        else session.config.loss)
        with session.lock:
            obs = guarded_series(session, 1)
            table, rollout = budgeted(session, [
                ("estimate", lambda: fit_table(obs, session.config)),
                ("whatif", lambda table: whatif_rollout(
                    obs, table, body.doses, spec))])
            return reply({
                "candidate": [float(u) for u in body.doses],
                "loss": spec.kind,
                "low_information": table.low_information,
                "expected_loss": rollout["expected_loss"],
                "hours": rollout["hours"],
                "scenarios": rollout["scenarios"]})

    @app.get("/sessions/{sid}/trajectory")
    def get_trajectory(sid: str, hours: Optional[int] = None):
        session = store.get(sid)
        n = hours if hours is not None else session.config.trajectory_hours
        if not (1 <= n <= MAX_WHATIF_HOURS):
            raise InvalidParameterError(
                f"hours must lie in 1..{MAX_WHATIF_HOURS}")
        with session.lock:
            obs = guarded_series(session, 1)
            table, rollout = budgeted(session, [
                ("estimate", lambda: fit_table(obs, session.config)),
                ("trajectory", lambda table: whatif_rollout(
                    obs, table, np.zeros(n),
                    LossSpec(session.config.loss)))])
            ys = np.asarray([row["y"] for row in rollout["scenarios"]])
            weights = np.asarray([row["weight"]
                                  for row in rollout["scenarios"]])
            lo, hi = therapeutic_range(table.map_scenario.yb) \
                if table.map_scenario.yb > 0 else (math.nan, math.nan)
            return reply({
                "hours": rollout["hours"],
                "low_information": table.low_information,
                "mean": list(weights @ ys),
                "band": {
                    "quantiles": [0.1, 0.9],
                    "low": [_weighted_quantile(ys[:, t], weights, 0.1)
                            for t in range(ys.shape[1])],
                    "high": [_weighted_quantile(ys[:, t], weights, 0.9)
                             for t in range(ys.shape[1])]},
                "therapeutic": {"low": lo, "high": hi},
                "scenario_weights": weights_payload(table),
                "scenarios": rollout["scenarios"]})

    return app


def _scenario_params(scenario) -> dict:
    return {"alpha": scenario.alpha, "b": scenario.b, "k": scenario.k,
            "yb": scenario.yb, "y0": scenario.y0, "yb0": scenario.yb0}


def _plan_payload(plan: DosePlan) -> dict:
    return {"time": plan.time, "horizon": plan.horizon,
            "doses": [float(u) for u in plan.doses],
            "expected_loss": plan.expected_loss,
            "scenario_losses": plan.scenario_losses}
