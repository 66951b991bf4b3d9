"""Chart-record file format, validation, and report serialization.

Charts are delimited text with the header ``hour,dose_iu,aptt_s``: one
row per hour or sparse rows, integer hour offsets, an empty dose field
meaning "no infusion recorded that hour" (dose 0), and an empty aPTT
field meaning "not measured".  Optional metadata travels in leading
pragma lines (``# patient_id: ...``, ``# weight_kg: ...``,
``# bleed_risk: low|high``).  Validation is total: every malformed
input raises a single :class:`ChartValidationError` listing the
offending physical line numbers, never a bare crash.

Reports (estimation results, prediction-quality reports, cohort
simulation reports, and cohort files themselves) serialize to canonical
JSON documents: a versioned schema id, sorted keys, two-space indent,
and a trailing newline, so writing is deterministic and
``write(parse(x))`` reproduces ``x`` byte for byte.  Non-finite numbers
serialize as ``null`` and read back as NaN in typed numeric fields;
inside free-form diagnostics dictionaries they read back as ``None``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (ChartValidationError, InvalidParameterError,
                     ReportFormatError)
from .dynamics import PatientParams
from .estimation import EstimateResult, ObservationSeries
from .evaluation import RocReport
from .simulator import CohortReport, PatientTruth

__all__ = [
    "CHART_HEADER", "REPORT_SCHEMA", "ChartRecord", "chart_from_observations",
    "parse_chart", "parse_cohort", "parse_report", "to_observations",
    "write_chart", "write_cohort", "write_report",
]

CHART_HEADER = "hour,dose_iu,aptt_s"
REPORT_SCHEMA = "hepdose.report/v1"
COHORT_SCHEMA = "hepdose.cohort/v1"
APTT_LIMITS = (0.0, 300.0)       # chart-level plausibility, exclusive
BLEED_RISKS = ("low", "high")
PRAGMAS = ("patient_id", "weight_kg", "bleed_risk")


# ---------------------------------------------------------------------------
# Chart records


@dataclass(frozen=True)
class ChartRecord:
    """A validated, densified dosing chart.

    ``doses`` holds one entry per hour from admission (hour ``h`` is the
    infusion over ``[h, h+1)``; unrecorded hours are 0); readings live in
    the parallel ``aptt_hours``/``aptt_values`` arrays.  The aPTT bounds
    here are chart-level plausibility limits, wider than the model's
    working range — model-domain enforcement belongs to estimation.
    """

    doses: np.ndarray
    aptt_hours: np.ndarray
    aptt_values: np.ndarray
    patient_id: str = "chart"
    weight_kg: Optional[float] = None
    bleed_risk: Optional[str] = None

    @property
    def count(self) -> int:
        """Number of aPTT readings."""
        return len(self.aptt_hours)

    def validate(self, min_aptt_rows: int = 1) -> "ChartRecord":
        if self.doses.ndim != 1 or len(self.doses) < 1:
            raise InvalidParameterError("chart needs at least one dose hour")
        if np.any(~np.isfinite(self.doses)) or np.any(self.doses < 0):
            raise InvalidParameterError("doses must be finite and >= 0")
        if self.aptt_hours.shape != self.aptt_values.shape \
                or self.aptt_hours.ndim != 1:
            raise InvalidParameterError(
                "aPTT hours and values must be flat and equal length")
        if self.count < max(1, min_aptt_rows):
            raise InvalidParameterError(
                f"chart needs at least {max(1, min_aptt_rows)} aPTT readings")
        if self.aptt_hours[0] < 1 or self.aptt_hours[-1] >= len(self.doses):
            raise InvalidParameterError(
                "every aPTT hour needs a dose row: hours must lie in "
                "1..len(doses)-1")
        if np.any(np.diff(self.aptt_hours) <= 0):
            raise InvalidParameterError("aPTT hours must be strictly increasing")
        lo, hi = APTT_LIMITS
        if np.any(self.aptt_values <= lo) or np.any(self.aptt_values >= hi):
            raise InvalidParameterError(
                f"aPTT readings must lie strictly inside ({lo}, {hi})")
        if self.weight_kg is not None and not (self.weight_kg > 0):
            raise InvalidParameterError("weight_kg must be positive")
        if self.bleed_risk is not None and self.bleed_risk not in BLEED_RISKS:
            raise InvalidParameterError(
                f"bleed_risk must be one of {BLEED_RISKS}")
        return self


def _read_text(source) -> str:
    if hasattr(source, "read"):
        return source.read()
    return Path(source).read_text()


def _write_text(text: str, target) -> None:
    if hasattr(target, "write"):
        target.write(text)
    else:
        Path(target).write_text(text)


def _parse_pragma(line: str, lineno: int, meta: dict, problems: list) -> None:
    body = line.lstrip("#").strip()
    key, sep, value = body.partition(":")
    key, value = key.strip(), value.strip()
    if not sep or key not in PRAGMAS:
        problems.append((lineno, f"unknown pragma {body.split(':')[0]!r}; "
                                 f"expected one of {', '.join(PRAGMAS)}"))
        return
    if key == "weight_kg":
        try:
            meta[key] = float(value)
        except ValueError:
            problems.append((lineno, f"weight_kg must be a number, got {value!r}"))
    elif key == "bleed_risk":
        if value not in BLEED_RISKS:
            problems.append((lineno, f"bleed_risk must be one of "
                                     f"{BLEED_RISKS}, got {value!r}"))
        else:
            meta[key] = value
    else:
        meta[key] = value


def parse_chart(source, min_aptt_rows: int = 1) -> ChartRecord:
    """Parse and validate a chart file (path, or stream with ``read``).

    Sparse hours are densified with dose 0 and no reading.  All
    violations are collected and raised together as one
    :class:`ChartValidationError` whose entries carry 1-based physical
    line numbers.  ``min_aptt_rows`` is the configurable minimum-reading
    rule (default: one reading).
    """
    text = _read_text(source)
    problems: list = []
    meta: dict = {}
    rows: list = []                  # (hour, dose or None, aptt or None)
    header_seen = False
    last_hour = None
    last_line = 1
    for lineno, raw in enumerate(text.splitlines(), start=1):
        last_line = lineno
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            _parse_pragma(line, lineno, meta, problems)
            continue
        if not header_seen:
            if line.replace(" ", "") != CHART_HEADER:
                problems.append((lineno, f"expected header {CHART_HEADER!r}, "
                                         f"got {line!r}"))
            header_seen = True
            continue
        fields = [f.strip() for f in line.split(",")]
        if len(fields) != 3:
            problems.append((lineno, f"expected 3 comma-separated fields, "
                                     f"got {len(fields)}"))
            continue
        hour_s, dose_s, aptt_s = fields
        try:
            hour = int(hour_s)
        except ValueError:
            problems.append((lineno, f"hour must be an integer, got {hour_s!r}"))
            continue
        if hour < 0:
            problems.append((lineno, f"hour must be >= 0, got {hour}"))
            continue
        if last_hour is not None and hour <= last_hour:
            problems.append((lineno, f"hour {hour} does not increase past "
                                     f"hour {last_hour}"))
            continue
        last_hour = hour
        dose = aptt = None
        if dose_s:
            try:
                dose = float(dose_s)
            except ValueError:
                problems.append((lineno, f"dose must be a number, got {dose_s!r}"))
            else:
                if not math.isfinite(dose) or dose < 0:
                    problems.append((lineno, f"dose must be finite and >= 0, "
                                             f"got {dose}"))
                    dose = None
        if aptt_s:
            try:
                aptt = float(aptt_s)
            except ValueError:
                problems.append((lineno, f"aPTT must be a number, got {aptt_s!r}"))
            else:
                if not (APTT_LIMITS[0] < aptt < APTT_LIMITS[1]):
                    problems.append((lineno, f"aPTT must lie strictly inside "
                                             f"{APTT_LIMITS}, got {aptt}"))
                    aptt = None
                elif hour == 0:
                    problems.append((lineno, "aPTT at hour 0 precedes the "
                                             "first dosing interval; readings "
                                             "start at hour 1"))
                    aptt = None
        rows.append((hour, dose, aptt))
    if not header_seen:
        problems.append((last_line, f"missing header {CHART_HEADER!r}"))
    n_aptt = sum(1 for _, _, a in rows if a is not None)
    if not problems and n_aptt < max(1, min_aptt_rows):
        problems.append((last_line, f"chart has {n_aptt} aPTT readings; "
                                    f"at least {max(1, min_aptt_rows)} required"))
    if problems:
        raise ChartValidationError(problems)
    horizon = max(hour for hour, _, _ in rows) + 1
    doses = np.zeros(horizon)
    aptt_hours, aptt_values = [], []
    for hour, dose, aptt in rows:
        if dose is not None:
            doses[hour] = dose
        if aptt is not None:
            aptt_hours.append(hour)
            aptt_values.append(aptt)
    return ChartRecord(doses=doses,
                       aptt_hours=np.asarray(aptt_hours, dtype=int),
                       aptt_values=np.asarray(aptt_values, dtype=float),
                       patient_id=meta.get("patient_id", "chart"),
                       weight_kg=meta.get("weight_kg"),
                       bleed_risk=meta.get("bleed_risk"),
                       ).validate(min_aptt_rows)


def write_chart(record: ChartRecord, target) -> None:
    """Write a chart in canonical form: pragmas, header, one row per hour.

    Parsing a canonical file reproduces the record exactly, and writing
    it again reproduces the file byte for byte.
    """
    record.validate()
    readings = dict(zip((int(h) for h in record.aptt_hours),
                        (float(v) for v in record.aptt_values)))
    lines = [f"# patient_id: {record.patient_id}"]
    if record.weight_kg is not None:
        lines.append(f"# weight_kg: {record.weight_kg!r}")
    if record.bleed_risk is not None:
        lines.append(f"# bleed_risk: {record.bleed_risk}")
    lines.append(CHART_HEADER)
    for hour in range(len(record.doses)):
        row_aptt = readings.get(hour)
        lines.append(f"{hour},{float(record.doses[hour])!r},"
                     f"{'' if row_aptt is None else repr(row_aptt)}")
    _write_text("\n".join(lines) + "\n", target)


def to_observations(record: ChartRecord, noise_scale: float,
                    ) -> ObservationSeries:
    """Convert a chart to the estimation contract's observation series.

    The observation-noise scale is an analysis choice supplied by the
    caller, not a property of the file.  Doses outside the model's
    admissible range are rejected here, where the model contract begins.
    """
    record.validate()
    return ObservationSeries(doses=np.asarray(record.doses, dtype=float),
                             times=np.asarray(record.aptt_hours, dtype=int),
                             values=np.asarray(record.aptt_values, dtype=float),
                             noise_scale=float(noise_scale)).validate()


def chart_from_observations(obs: ObservationSeries,
                            patient_id: str = "chart",
                            weight_kg: Optional[float] = None,
                            bleed_risk: Optional[str] = None) -> ChartRecord:
    """Express an observation series as a chart record.

    When a reading falls exactly at the end of the dose horizon the
    chart gains one trailing zero-dose hour (the chart format implies a
    dose slot for every row), which is harmless to estimation.
    """
    obs.validate()
    doses = np.asarray(obs.doses, dtype=float)
    if len(obs.times) and int(obs.times[-1]) >= len(doses):
        doses = np.concatenate([doses, [0.0]])
    return ChartRecord(doses=doses,
                       aptt_hours=np.asarray(obs.times, dtype=int),
                       aptt_values=np.asarray(obs.values, dtype=float),
                       patient_id=patient_id, weight_kg=weight_kg,
                       bleed_risk=bleed_risk).validate()


# ---------------------------------------------------------------------------
# Canonical JSON plumbing


def _plain(x):
    """Recursively coerce to strict-JSON types; non-finite floats -> null."""
    if isinstance(x, np.ndarray):
        return [_plain(v) for v in x.tolist()]
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        x = float(x)
    if isinstance(x, float):
        return x if math.isfinite(x) else None
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if x is None or isinstance(x, (bool, int, str)):
        return x
    raise ReportFormatError(f"cannot serialize value of type {type(x).__name__}")


def _dump(document: dict) -> str:
    return json.dumps(_plain(document), sort_keys=True, indent=2,
                      allow_nan=False) + "\n"


def _load(source) -> dict:
    try:
        document = json.loads(_read_text(source))
    except json.JSONDecodeError as exc:
        raise ReportFormatError(f"not valid JSON: {exc}") from exc
    if not isinstance(document, dict):
        raise ReportFormatError("report document must be a JSON object")
    return document


def _need(mapping, fields, where: str) -> None:
    if not isinstance(mapping, dict):
        raise ReportFormatError(f"{where} must be a JSON object")
    missing = set(fields) - set(mapping)
    unknown = set(mapping) - set(fields)
    if missing or unknown:
        parts = []
        if missing:
            parts.append("missing field(s) " + ", ".join(sorted(missing)))
        if unknown:
            parts.append("unknown field(s) " + ", ".join(sorted(unknown)))
        raise ReportFormatError(f"{where}: " + "; ".join(parts))


def _float(x, where: str) -> float:
    if x is None:
        return math.nan
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise ReportFormatError(f"{where} must be a number")
    return float(x)


def _int(x, where: str) -> int:
    if isinstance(x, bool) or not isinstance(x, int):
        raise ReportFormatError(f"{where} must be an integer")
    return x


def _str(x, where: str) -> str:
    if not isinstance(x, str):
        raise ReportFormatError(f"{where} must be a string")
    return x


def _farray(x, where: str) -> np.ndarray:
    if not isinstance(x, list):
        raise ReportFormatError(f"{where} must be an array")
    return np.asarray([_float(v, where) for v in x], dtype=float)


def _dict(x, where: str) -> dict:
    if not isinstance(x, dict):
        raise ReportFormatError(f"{where} must be a JSON object")
    return x


# ---------------------------------------------------------------------------
# Report schemas


PARAM_FIELDS = ("alpha", "k", "b", "yb", "y0", "yb0")
ROW_FIELDS = ("patient", "policy", "replicate", "failed", "failure",
              "n_cycles", "time_in_control", "mean_deviation",
              "predict_time_total", "control_time_total", "max_cycle_time")
AGG_FIELDS = ("episodes", "failures", "time_in_control", "mean_deviation",
              "predict_time", "control_time", "max_cycle_time")


def _params_body(p: PatientParams) -> dict:
    return {name: getattr(p, name) for name in PARAM_FIELDS}


def _restore_params(body, where: str) -> PatientParams:
    _need(body, PARAM_FIELDS, where)
    return PatientParams(**{name: _float(body[name], f"{where}.{name}")
                            for name in PARAM_FIELDS})


def _estimate_body(r: EstimateResult) -> dict:
    return {"params": _params_body(r.params),
            "log_likelihood": r.log_likelihood,
            "log_posterior": r.log_posterior,
            "diagnostics": r.diagnostics}


def _restore_estimate(body) -> EstimateResult:
    _need(body, ("params", "log_likelihood", "log_posterior", "diagnostics"),
          "estimate body")
    return EstimateResult(
        params=_restore_params(body["params"], "params"),
        log_likelihood=_float(body["log_likelihood"], "log_likelihood"),
        log_posterior=_float(body["log_posterior"], "log_posterior"),
        diagnostics=_dict(body["diagnostics"], "diagnostics"))


def _roc_body(r: RocReport) -> dict:
    return {"mode": r.mode, "fpr": r.fpr, "tpr": r.tpr, "auc": r.auc,
            "confusion": r.confusion, "per_class": r.per_class,
            "skipped_classes": list(r.skipped_classes),
            "n_epochs": r.n_epochs, "diagnostics": r.diagnostics}


def _restore_roc(body) -> RocReport:
    _need(body, ("mode", "fpr", "tpr", "auc", "confusion", "per_class",
                 "skipped_classes", "n_epochs", "diagnostics"), "roc body")
    confusion = body["confusion"]
    if not (isinstance(confusion, list) and len(confusion) == 3):
        raise ReportFormatError("confusion must be a 3x3 array")
    per_class = {}
    for name, rates in _dict(body["per_class"], "per_class").items():
        _need(rates, ("tpr", "fpr"), f"per_class.{name}")
        per_class[name] = {"tpr": _float(rates["tpr"], "tpr"),
                           "fpr": _float(rates["fpr"], "fpr")}
    return RocReport(
        mode=_str(body["mode"], "mode"),
        fpr=_farray(body["fpr"], "fpr"),
        tpr=_farray(body["tpr"], "tpr"),
        auc=_float(body["auc"], "auc"),
        confusion=np.stack([_farray(row, "confusion") for row in confusion]),
        per_class=per_class,
        skipped_classes=tuple(_str(s, "skipped_classes")
                              for s in body["skipped_classes"]),
        n_epochs=_int(body["n_epochs"], "n_epochs"),
        diagnostics=_dict(body["diagnostics"], "diagnostics")).validate()


def _cohort_report_body(r: CohortReport) -> dict:
    return {"config": r.config,
            "policy_names": list(r.policy_names),
            "rows": [dict(row) for row in r.rows],
            "aggregates": r.aggregates,
            "per_patient": {name: {str(i): v for i, v in patients.items()}
                            for name, patients in r.per_patient.items()}}


def _restore_row(row, where: str) -> dict:
    _need(row, ROW_FIELDS, where)
    failure = row["failure"]
    if failure is not None and not isinstance(failure, str):
        raise ReportFormatError(f"{where}.failure must be a string or null")
    if not isinstance(row["failed"], bool):
        raise ReportFormatError(f"{where}.failed must be a boolean")
    out = {"patient": _int(row["patient"], where),
           "policy": _str(row["policy"], where),
           "replicate": _int(row["replicate"], where),
           "failed": row["failed"], "failure": failure,
           "n_cycles": _int(row["n_cycles"], where)}
    for name in ROW_FIELDS[6:]:
        out[name] = _float(row[name], f"{where}.{name}")
    return out


def _restore_cohort_report(body) -> CohortReport:
    _need(body, ("config", "policy_names", "rows", "aggregates",
                 "per_patient"), "cohort body")
    aggregates = {}
    for name, agg in _dict(body["aggregates"], "aggregates").items():
        _need(agg, AGG_FIELDS, f"aggregates.{name}")
        aggregates[name] = {
            "episodes": _int(agg["episodes"], "episodes"),
            "failures": _int(agg["failures"], "failures"),
            **{k: _float(agg[k], k) for k in AGG_FIELDS[2:]}}
    per_patient = {}
    for name, patients in _dict(body["per_patient"], "per_patient").items():
        per_patient[name] = {}
        for key, v in patients.items():
            _need(v, ("time_in_control", "mean_deviation"),
                  f"per_patient.{name}.{key}")
            per_patient[name][int(key)] = {
                k: _float(v[k], k) for k in ("time_in_control",
                                             "mean_deviation")}
    rows = body["rows"]
    if not isinstance(rows, list):
        raise ReportFormatError("rows must be an array")
    return CohortReport(
        config=_dict(body["config"], "config"),
        policy_names=tuple(_str(n, "policy_names")
                           for n in body["policy_names"]),
        rows=tuple(_restore_row(row, f"rows[{i}]")
                   for i, row in enumerate(rows)),
        aggregates=aggregates,
        per_patient=per_patient)


_KINDS = {
    "estimate": (EstimateResult, _estimate_body, _restore_estimate),
    "roc": (RocReport, _roc_body, _restore_roc),
    "cohort": (CohortReport, _cohort_report_body, _restore_cohort_report),
}


def write_report(report, target) -> None:
    """Serialize a report to canonical JSON (path, or stream with ``write``).

    Accepts estimation results, prediction-quality reports, and cohort
    simulation reports; the document carries a versioned schema id and
    round-trips through :func:`parse_report` byte-identically.
    """
    for kind, (cls, build, _) in _KINDS.items():
        if isinstance(report, cls):
            _write_text(_dump({"schema": REPORT_SCHEMA, "kind": kind,
                               "body": build(report)}), target)
            return
    raise ReportFormatError(
        f"cannot serialize report of type {type(report).__name__}")


def parse_report(source):
    """Read a report written by :func:`write_report`.

    Reading is strict: a wrong schema id, an unknown kind, or any
    missing/undeclared field raises :class:`ReportFormatError`.
    """
    document = _load(source)
    _need(document, ("schema", "kind", "body"), "report document")
    if document["schema"] != REPORT_SCHEMA:
        raise ReportFormatError(f"unsupported schema {document['schema']!r}; "
                                f"expected {REPORT_SCHEMA!r}")
    kind = document["kind"]
    if kind not in _KINDS:
        raise ReportFormatError(f"unknown report kind {kind!r}")
    return _KINDS[kind][2](document["body"])


# ---------------------------------------------------------------------------
# Cohort files (ground-truth patients with admission records)


def _patient_body(p: PatientTruth) -> dict:
    return {"params": _params_body(p.params),
            "noise_scale": p.noise_scale,
            "weight_kg": p.weight_kg,
            "bleed_risk": p.bleed_risk,
            "warmstart": {"doses": p.warmstart.doses,
                          "times": p.warmstart.times,
                          "values": p.warmstart.values,
                          "noise_scale": p.warmstart.noise_scale}}


def _restore_patient(body, where: str) -> PatientTruth:
    _need(body, ("params", "noise_scale", "weight_kg", "bleed_risk",
                 "warmstart"), where)
    ws = body["warmstart"]
    _need(ws, ("doses", "times", "values", "noise_scale"),
          f"{where}.warmstart")
    times = [_int(t, f"{where}.warmstart.times") for t in ws["times"]]
    warmstart = ObservationSeries(
        doses=_farray(ws["doses"], f"{where}.warmstart.doses"),
        times=np.asarray(times, dtype=int),
        values=_farray(ws["values"], f"{where}.warmstart.values"),
        noise_scale=_float(ws["noise_scale"], f"{where}.noise_scale"))
    return PatientTruth(
        params=_restore_params(body["params"], f"{where}.params"),
        noise_scale=_float(body["noise_scale"], f"{where}.noise_scale"),
        weight_kg=_float(body["weight_kg"], f"{where}.weight_kg"),
        bleed_risk=_str(body["bleed_risk"], f"{where}.bleed_risk"),
        warmstart=warmstart).validate()


def write_cohort(cohort: Sequence[PatientTruth], target) -> None:
    """Serialize ground-truth patients (with admission records) to JSON."""
    patients = [_patient_body(p.validate()) for p in cohort]
    if not patients:
        raise InvalidParameterError("cohort must be nonempty")
    _write_text(_dump({"schema": COHORT_SCHEMA,
                       "body": {"patients": patients}}), target)


def parse_cohort(source) -> list:
    """Read a cohort file written by :func:`write_cohort` (strict)."""
    document = _load(source)
    _need(document, ("schema", "body"), "cohort document")
    if document["schema"] != COHORT_SCHEMA:
        raise ReportFormatError(f"unsupported schema {document['schema']!r}; "
                                f"expected {COHORT_SCHEMA!r}")
    _need(document["body"], ("patients",), "cohort body")
    patients = document["body"]["patients"]
    if not isinstance(patients, list) or not patients:
        raise ReportFormatError("cohort must list at least one patient")
    return [_restore_patient(p, f"patients[{i}]")
            for i, p in enumerate(patients)]
