"""Command-line tools for the dosing engine.

Five subcommands cover the offline workflow and the service:

* ``estimate`` fits patient parameters to a dosing chart.
* ``dose`` computes the next dosing block for a chart under a policy.
* ``simulate`` runs closed-loop policy episodes over a patient cohort.
* ``evaluate`` scores forecast labels against ground truth on a cohort.
* ``serve`` starts the HTTP session service.

All outputs are deterministic given the inputs and ``--seed`` (reports
that include wall-clock timings differ only in those fields).  Domain
errors print one JSON object to stderr and exit with status 2.
"""

import argparse
import json
import os
import sys
from typing import Optional

import numpy as np

from .data_io import (_plain, parse_chart, parse_cohort, to_observations,
                      write_cohort, write_report)
from .dosing import (LOSS_KINDS, LossSpec, PolicySpec, naive_policy,
                     plan_ptc_mle, weight_based_policy)
from .dynamics import (DEFAULT_DOMAINS, DEFAULT_GAMMAS, simulate,
                       therapeutic_range)
from .errors import HepdoseError, InvalidParameterError
from .estimation import EstimateConfig, mle_estimate
from .evaluation import (dynamic_label_series, persistence_label_series,
                         roc)
from .service import (API_SCHEMA, AppConfig, build_app, fit_table,
                      load_app_config, recommend_plan)
from .simulator import (B_BAR_5, B_BAR_10, SCENARIO_ALPHAS,
                        SimulationConfig, ptc_scenario_policy, run_cohort,
                        synth_cohort)

__all__ = ["main"]

CONFIG_ENV_VAR = "HEPDOSE_CONFIG"
POLICY_NAMES = ("ptc-sg10", "ptc-sg20", "ptc-mle", "naive", "weight")


# ---------------------------------------------------------------------------
# Shared helpers


def _emit(document: dict, out: Optional[str]) -> None:
    text = json.dumps(_plain(document), sort_keys=True, indent=2,
                      allow_nan=False) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w") as handle:
            handle.write(text)


def _emit_report(report, out: Optional[str]) -> None:
    if out is None:
        write_report(report, sys.stdout)
    else:
        with open(out, "w") as handle:
            write_report(report, handle)


def _load_chart_series(args):
    record = parse_chart(args.chart)
    return record, to_observations(record, args.noise_scale)


def _k_mesh(points: int) -> np.ndarray:
    return np.geomspace(DEFAULT_DOMAINS.k_range[0],
                        DEFAULT_DOMAINS.k_range[1], points)


def _b_grid(scenarios: int):
    return B_BAR_5 if scenarios == 10 else B_BAR_10


def _parse_policy(token: str, horizon: int) -> PolicySpec:
    """``name`` or ``name:loss`` -> PolicySpec (see POLICY_NAMES)."""
    name, _, loss_kind = token.partition(":")
    loss_kind = loss_kind or "median_deviation"
    if loss_kind not in LOSS_KINDS:
        raise InvalidParameterError(
            f"unknown loss {loss_kind!r} in policy {token!r}; "
            f"choose from {LOSS_KINDS}")
    if name == "ptc-sg10":
        return ptc_scenario_policy(10, loss_kind, horizon)
    if name == "ptc-sg20":
        return ptc_scenario_policy(20, loss_kind, horizon)
    if name == "ptc-mle":
        return PolicySpec(kind="ptc_mle", loss=LossSpec(loss_kind),
                          horizon=horizon)
    if name == "naive":
        return PolicySpec(kind="naive", horizon=horizon)
    if name == "weight":
        return PolicySpec(kind="weight_based", horizon=horizon)
    raise InvalidParameterError(
        f"unknown policy {name!r}; choose from {POLICY_NAMES}")


def _params_payload(params) -> dict:
    return {"alpha": params.alpha, "b": params.b, "k": params.k,
            "yb": params.yb, "y0": params.y0, "yb0": params.yb0}


def _plan_payload(plan) -> dict:
    return {"time": plan.time, "horizon": plan.horizon,
            "doses": [float(u) for u in plan.doses],
            "expected_loss": plan.expected_loss,
            "scenario_losses": [float(v) for v in plan.scenario_losses]}


# ---------------------------------------------------------------------------
# Subcommands


def _cmd_estimate(args) -> int:
    _, obs = _load_chart_series(args)
    config = EstimateConfig(alphas=SCENARIO_ALPHAS,
                            bs=tuple(float(b)
                                     for b in _b_grid(args.scenarios)),
                            k_mesh=tuple(_k_mesh(args.k_mesh_points)))
    result = mle_estimate(obs, method=args.method, config=config)
    _emit_report(result, args.out)
    return 0


def _cmd_dose(args) -> int:
    record, obs = _load_chart_series(args)
    name, _, loss_override = args.policy.partition(":")
    loss_kind = loss_override or args.loss

    if name in ("ptc-sg10", "ptc-sg20"):
        config = AppConfig(scenario_count=10 if name == "ptc-sg10" else 20,
                           k_mesh_points=args.k_mesh_points,
                           loss=loss_kind, horizon=args.horizon,
                           noise_scale=args.noise_scale).validate()
        table, plan = recommend_plan(obs, config)
        payload = {
            "plan": _plan_payload(plan),
            "low_information": table.low_information,
            "scenario_weights": [
                {"index": s.index, "alpha": s.alpha, "b": s.b, "k": s.k,
                 "yb": s.yb, "weight": s.weight, "feasible": s.feasible}
                for s in table.scenarios]}
    elif name == "ptc-mle":
        config = EstimateConfig(alphas=SCENARIO_ALPHAS,
                                bs=tuple(float(b) for b in B_BAR_5),
                                k_mesh=tuple(_k_mesh(args.k_mesh_points)))
        est = mle_estimate(obs, method="benders", config=config)
        plan = plan_ptc_mle(est, obs.doses, LossSpec(loss_kind),
                            n=args.horizon)
        payload = {"plan": _plan_payload(plan),
                   "map": _params_payload(est.params)}
    elif name == "naive":
        config = EstimateConfig(alphas=SCENARIO_ALPHAS,
                                bs=tuple(float(b) for b in B_BAR_5),
                                k_mesh=tuple(_k_mesh(
                                    min(args.k_mesh_points, 16))),
                                refine=False)
        est = mle_estimate(obs, method="benders", config=config)
        lo, hi = therapeutic_range(est.params.yb)
        latest = float(obs.values[-1])
        label = ("sub" if latest < lo
                 else "super" if latest > hi else "therapeutic")
        rate = naive_policy(float(obs.doses[-1]), label)
        payload = {"label": label, "band": {"low": lo, "high": hi},
                   "latest_aptt": latest,
                   "plan": {"horizon": args.horizon,
                            "doses": [rate] * args.horizon}}
    elif name == "weight":
        if record.weight_kg is None or record.bleed_risk is None:
            raise InvalidParameterError(
                "the weight policy needs weight_kg and bleed_risk pragma "
                "lines in the chart")
        latest = float(obs.values[-1]) if obs.values.size else None
        current = (float(record.doses[-1])
                   if float(np.max(record.doses)) > 0 else None)
        action = weight_based_policy(record.weight_kg, record.bleed_risk,
                                     latest, current_rate=current)
        hold = min(int(action.hold_hours), args.horizon)
        doses = [action.rate] * args.horizon
        doses[:hold] = [0.0] * hold
        payload = {"bolus": action.bolus, "rate": action.rate,
                   "hold_hours": action.hold_hours,
                   "plan": {"horizon": args.horizon, "doses": doses}}
    else:
        raise InvalidParameterError(
            f"unknown policy {name!r}; choose from {POLICY_NAMES}")

    _emit({"schema": API_SCHEMA, "command": "dose", "policy": args.policy,
           "loss": loss_kind, "horizon": args.horizon,
           "patient_id": record.patient_id, **payload}, args.out)
    return 0


def _load_or_synth_cohort(args):
    if (args.cohort is None) == (args.synthetic is None):
        raise InvalidParameterError(
            "give either a cohort file or --synthetic N, not both")
    if args.cohort is not None:
        return parse_cohort(args.cohort)
    return synth_cohort(args.synthetic, seed=args.seed,
                        warmstart_hours=args.warmstart,
                        dose_swing=tuple(args.dose_swing),
                        missing=args.missing)


def _cmd_simulate(args) -> int:
    cohort = _load_or_synth_cohort(args)
    if args.save_cohort is not None:
        with open(args.save_cohort, "w") as handle:
            write_cohort(cohort, handle)
    policies = [_parse_policy(tok, args.horizon) for tok in args.policies]
    config = SimulationConfig(total_hours=args.total_hours,
                              warmstart_hours=args.warmstart,
                              replan_interval=args.interval,
                              replicates=args.replicates, seed=args.seed,
                              policy=policies[0],
                              noise_source=args.noise_source,
                              workers=args.workers,
                              k_mesh_points=args.k_mesh_points)
    report = run_cohort(cohort, policies, config)
    _emit_report(report, args.out)
    return 0


def _cmd_evaluate(args) -> int:
    cohort = _load_or_synth_cohort(args)
    dynamic, persistence = [], []
    for truth in cohort:
        record = truth.warmstart
        y_true = simulate(truth.params, record.doses, DEFAULT_GAMMAS,
                          DEFAULT_DOMAINS).y
        yb_true = truth.params.yb
        dynamic.append(dynamic_label_series(
            record, y_true, yb_true, epoch_hours=args.epoch,
            k_mesh_points=args.k_mesh_points))
        persistence.append(persistence_label_series(
            record, y_true, yb_true, epoch_hours=args.epoch))
    dyn_report = roc(dynamic, mode=args.mode)
    per_report = roc(persistence, mode=args.mode)
    if args.out is not None:
        _emit_report(dyn_report, args.out)
    if args.out_persistence is not None:
        _emit_report(per_report, args.out_persistence)
    n_epochs = sum(len(s.truth) for s in dynamic)
    _emit({"schema": API_SCHEMA, "command": "evaluate", "mode": args.mode,
           "epoch_hours": args.epoch, "n_patients": len(cohort),
           "n_epochs": n_epochs,
           "dynamic_auc": None if np.isnan(dyn_report.auc)
           else dyn_report.auc,
           "persistence_auc": None if np.isnan(per_report.auc)
           else per_report.auc}, None)
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    config_path = args.config or os.environ.get(CONFIG_ENV_VAR)
    config = load_app_config(config_path)
    if args.state_dir is not None:
        config = config.replace(state_dir=args.state_dir)
    app = build_app(config)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing


def _add_chart_options(p) -> None:
    p.add_argument("chart", help="dosing chart file (hour,dose_iu,aptt_s)")
    p.add_argument("--noise-scale", type=float, default=2.0,
                   help="reading noise scale attached to the chart")
    p.add_argument("--k-mesh-points", type=int, default=64,
                   help="capacity mesh size for fits")
    p.add_argument("--out", default=None,
                   help="write the JSON result here instead of stdout")


def _add_cohort_source(p) -> None:
    p.add_argument("cohort", nargs="?", default=None,
                   help="cohort file from a previous --save-cohort")
    p.add_argument("--synthetic", type=int, default=None, metavar="N",
                   help="generate an N-patient synthetic cohort instead")
    p.add_argument("--seed", type=int, default=0,
                   help="seed for all randomness")
    p.add_argument("--warmstart", type=int, default=72,
                   help="observational record length (hours)")
    p.add_argument("--dose-swing", type=float, nargs=2,
                   default=(0.6, 1.5), metavar=("LO", "HI"),
                   help="synthetic dose variability multipliers")
    p.add_argument("--missing", type=float, default=0.1,
                   help="fraction of synthetic readings dropped")
    p.add_argument("--k-mesh-points", type=int, default=24,
                   help="capacity mesh size for in-loop fits")
    p.add_argument("--out", default=None,
                   help="write the report here instead of stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hepdose",
        description="personalized heparin dosing: estimation, dosing, "
                    "simulation, evaluation, and the session service")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="fit patient parameters to a chart")
    _add_chart_options(p)
    p.add_argument("--method", choices=("grid", "benders"),
                   default="benders", help="likelihood search strategy")
    p.add_argument("--scenarios", type=int, choices=(10, 20), default=10,
                   help="size of the (alpha, sensitivity) grid")
    p.add_argument("--prior", choices=("uniform",), default="uniform",
                   help="parameter prior (only the flat prior is "
                        "expressible here)")
    p.set_defaults(fn=_cmd_estimate)

    p = sub.add_parser("dose", help="compute the next dosing block")
    _add_chart_options(p)
    p.add_argument("--policy", default="ptc-sg10",
                   help="one of %s, optionally name:loss" % (POLICY_NAMES,))
    p.add_argument("--loss", choices=LOSS_KINDS, default="median_deviation",
                   help="dosing loss (ignored by naive/weight)")
    p.add_argument("--horizon", type=int, default=6,
                   help="hours of doses to plan")
    p.set_defaults(fn=_cmd_dose)

    p = sub.add_parser("simulate", help="closed-loop cohort episodes")
    _add_cohort_source(p)
    p.add_argument("--policies", nargs="+", default=["ptc-sg10"],
                   help="policy arms (name or name:loss)")
    p.add_argument("--total-hours", type=int, default=240)
    p.add_argument("--interval", type=int, default=6,
                   help="hours between replans")
    p.add_argument("--replicates", type=int, default=10,
                   help="noise replicates per patient and policy")
    p.add_argument("--horizon", type=int, default=6,
                   help="planning horizon inside each cycle")
    p.add_argument("--workers", type=int, default=1,
                   help="parallel episode workers")
    p.add_argument("--noise-source", choices=("true", "data"),
                   default="true",
                   help="noise scale handed to the policies")
    p.add_argument("--save-cohort", default=None,
                   help="also write the cohort (useful with --synthetic)")
    p.set_defaults(fn=_cmd_simulate)

    p = sub.add_parser("evaluate",
                       help="forecast-label quality on a cohort")
    _add_cohort_source(p)
    p.add_argument("--epoch", type=int, default=4,
                   help="hours per evaluation epoch")
    p.add_argument("--mode", choices=("micro", "macro"), default="micro",
                   help="ROC pooling mode")
    p.add_argument("--out-persistence", default=None,
                   help="write the persistence-baseline ROC report here")
    p.set_defaults(fn=_cmd_evaluate)

    p = sub.add_parser("serve", help="run the HTTP session service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--config", default=None,
                   help=f"service config JSON (default: ${CONFIG_ENV_VAR})")
    p.add_argument("--state-dir", default=None,
                   help="session event-log directory")
    p.set_defaults(fn=_cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (HepdoseError, OSError) as exc:
        json.dump({"error": type(exc).__name__, "message": str(exc)},
                  sys.stderr)
        sys.stderr.write("\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
