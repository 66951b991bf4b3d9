"""Prediction-quality harness for therapeutic-label forecasts.

Converts aPTT levels to three-valued labels (below, inside, or above the
therapeutic band), turns a fitted scenario table into per-epoch label
probabilities by integrating observation noise through each scenario's
forecast, and scores predictions with one-vs-all ROC curves (micro and
macro averaging), AUC, and a confusion summary.  A persistence baseline
(carry the last observed epoch's label forward) keeps the harness
two-sided.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dynamics import (DEFAULT_DOMAINS, DEFAULT_GAMMAS, Domains,
                       GlobalDecayRates, simulate, therapeutic_range)
from .errors import EstimationFailedError, InvalidParameterError
from .estimation import (LOW_INFORMATION_COUNT, ObservationSeries,
                         ScenarioTable, scenario_table)
from .simulator import B_BAR_5, HINT_REFRESH_CYCLES, SCENARIO_ALPHAS

__all__ = [
    "EPOCH_HOURS", "LABELS", "LabelSeries", "RocReport", "binary_auc",
    "binary_curve", "confusion", "dynamic_label_series", "epoch_grid",
    "label", "persistence_label_series", "pool_one_vs_all",
    "predict_label_probs", "predicted_from_probs", "roc",
]

LABELS = ("sub", "therapeutic", "super")
EPOCH_HOURS = 4          # label-forecast spacing; dosing cycles use 6


# ---------------------------------------------------------------------------
# Labels and label probabilities


def label(y: float, yb: float) -> str:
    """Three-valued therapeutic label of an aPTT level.

    The band is closed: values exactly on either edge count as inside.
    """
    lo, hi = therapeutic_range(yb)
    if y < lo:
        return "sub"
    if y > hi:
        return "super"
    return "therapeutic"


def predicted_from_probs(probs: np.ndarray) -> tuple:
    """Argmax labels from an (n, 3) probability array, ties to therapeutic."""
    probs = np.asarray(probs, dtype=float)
    out = []
    for row in np.atleast_2d(probs):
        best = row.max()
        out.append("therapeutic" if row[1] == best
                   else LABELS[int(np.argmax(row))])
    return tuple(out)


def _laplace_cdf(x: float, loc: float, scale: float) -> float:
    z = (x - loc) / scale
    if z < 0.0:
        return 0.5 * math.exp(z)
    return 1.0 - 0.5 * math.exp(-z)


def predict_label_probs(obs: ObservationSeries,
                        table: ScenarioTable,
                        next_epoch: int,
                        yb: float,
                        gammas: GlobalDecayRates = DEFAULT_GAMMAS,
                        domains: Domains = DEFAULT_DOMAINS) -> np.ndarray:
    """Label probabilities at hour ``next_epoch`` under a scenario table.

    Each live scenario is rolled forward under the recorded doses to the
    epoch start; its normalized weight is spread across the three labels
    by the Laplace observation-noise mass falling inside each label's
    aPTT interval (closed-form CDF differences).  The label intervals
    come from the band of the ``yb`` passed in — the same baseline that
    defines the ground-truth labels — so the table contributes forecast
    uncertainty only.  Returns a length-3 array (sub, therapeutic,
    super) summing to one.
    """
    if next_epoch < 1 or next_epoch > len(obs.doses):
        raise InvalidParameterError(
            "next_epoch must lie inside the recorded dose horizon")
    live = [s for s in table.scenarios if s.feasible and s.weight > 0.0]
    if not live:
        raise EstimationFailedError("no live scenarios to predict from")
    lo, hi = therapeutic_range(yb)
    total = math.fsum(s.weight for s in live)
    doses = np.asarray(obs.doses[:next_epoch], dtype=float)
    probs = np.zeros(3)
    for s in live:
        traj = simulate(s.params, doses, gammas, domains)
        y_hat = float(traj.y[next_epoch])
        f_lo = _laplace_cdf(lo, y_hat, obs.noise_scale)
        f_hi = _laplace_cdf(hi, y_hat, obs.noise_scale)
        probs += (s.weight / total) * np.array(
            [f_lo, f_hi - f_lo, 1.0 - f_hi])
    return probs


# ---------------------------------------------------------------------------
# Label series


@dataclass(frozen=True)
class LabelSeries:
    """Per-epoch ground-truth labels with predicted labels/probabilities."""

    epochs: np.ndarray           # epoch start hours, strictly increasing
    truth: tuple                 # ground-truth label per epoch
    predicted: tuple             # predicted label per epoch
    probs: np.ndarray            # (n, 3) label probabilities per epoch

    def validate(self) -> "LabelSeries":
        n = len(self.epochs)
        if n == 0:
            raise InvalidParameterError("label series is empty")
        if len(self.truth) != n or len(self.predicted) != n \
                or self.probs.shape != (n, 3):
            raise InvalidParameterError("label series fields disagree on n")
        if np.any(np.diff(self.epochs) <= 0):
            raise InvalidParameterError("epochs must be strictly increasing")
        for seq in (self.truth, self.predicted):
            if any(v not in LABELS for v in seq):
                raise InvalidParameterError(f"unknown label in {seq!r}")
        if np.any(self.probs < 0.0) \
                or np.any(np.abs(self.probs.sum(axis=1) - 1.0) > 1e-9):
            raise InvalidParameterError(
                "probabilities must be nonnegative and sum to one")
        return self


def epoch_grid(obs: ObservationSeries,
               epoch_hours: int = EPOCH_HOURS,
               min_obs: int = LOW_INFORMATION_COUNT) -> np.ndarray:
    """Epoch start hours that a record supports forecasting for.

    Epochs are multiples of ``epoch_hours``; each must leave at least
    ``min_obs`` readings strictly before the decision time (one epoch
    earlier) and lie inside the recorded dose horizon.
    """
    if epoch_hours < 1:
        raise InvalidParameterError("epoch_hours must be >= 1")
    times = np.asarray(obs.times)
    if len(times) < min_obs:
        return np.zeros(0, dtype=int)
    t_ready = int(times[min_obs - 1])    # time of the min_obs-th reading
    first = epoch_hours * math.ceil((t_ready + epoch_hours) / epoch_hours)
    last = epoch_hours * (len(obs.doses) // epoch_hours)
    return np.arange(first, last + 1, epoch_hours, dtype=int)


def _truth_labels(epochs: np.ndarray, y_true: np.ndarray,
                  yb_true: float) -> tuple:
    y_true = np.asarray(y_true, dtype=float)
    if len(y_true) <= int(epochs[-1]):
        raise InvalidParameterError(
            "true trajectory does not cover every epoch")
    return tuple(label(float(y_true[e]), yb_true) for e in epochs)


def dynamic_label_series(record: ObservationSeries,
                         y_true: Sequence[float],
                         yb_true: float,
                         epoch_hours: int = EPOCH_HOURS,
                         epochs: Optional[Sequence[int]] = None,
                         alphas: Sequence[float] = SCENARIO_ALPHAS,
                         bs: Sequence[float] = B_BAR_5,
                         k_mesh_points: int = 24,
                         gammas: GlobalDecayRates = DEFAULT_GAMMAS,
                         domains: Domains = DEFAULT_DOMAINS) -> LabelSeries:
    """Per-epoch dynamic-model label forecasts over one record.

    For each epoch the scenario table is refit on the readings available
    one epoch earlier (doses are known through the epoch itself), and the
    noise-integrated label probabilities are evaluated at the epoch start.
    Ground truth is the label of the noiseless trajectory ``y_true``;
    the same ``yb_true`` band defines the label intervals on both the
    truth and prediction sides.  Estimation failures propagate.
    """
    record = record.validate(domains)
    epochs = (np.asarray(epochs, dtype=int) if epochs is not None
              else epoch_grid(record, epoch_hours))
    if epochs.size == 0:
        raise InvalidParameterError("record supports no forecast epochs")
    k_mesh = np.geomspace(domains.k_range[0], domains.k_range[1],
                          k_mesh_points)
    probs = np.zeros((len(epochs), 3))
    hints = None
    for i, e in enumerate(epochs):
        fit_obs = record.truncated(int(e) - epoch_hours)
        if i % HINT_REFRESH_CYCLES == 0:
            hints = None
        table = scenario_table(fit_obs, alphas=alphas, bs=bs, k_mesh=k_mesh,
                               hints=hints, gammas=gammas, domains=domains)
        hints = [s.k if s.feasible else None for s in table.scenarios]
        probs[i] = predict_label_probs(record, table, int(e), yb_true,
                                       gammas, domains)
    return LabelSeries(epochs=epochs,
                       truth=_truth_labels(epochs, y_true, yb_true),
                       predicted=predicted_from_probs(probs),
                       probs=probs).validate()


def persistence_label_series(record: ObservationSeries,
                             y_true: Sequence[float],
                             yb_true: float,
                             epoch_hours: int = EPOCH_HOURS,
                             epochs: Optional[Sequence[int]] = None
                             ) -> LabelSeries:
    """Carry-forward baseline: predict the last observed epoch's label.

    For each epoch the latest reading inside the single epoch preceding
    the decision time is labeled against the true band and predicted with
    full confidence; if that epoch holds no reading the prediction falls
    back to therapeutic with a zero-confidence (uniform) triple.
    """
    record = record.validate()
    epochs = (np.asarray(epochs, dtype=int) if epochs is not None
              else epoch_grid(record, epoch_hours))
    if epochs.size == 0:
        raise InvalidParameterError("record supports no forecast epochs")
    times = np.asarray(record.times)
    probs = np.zeros((len(epochs), 3))
    for i, e in enumerate(epochs):
        cutoff = int(e) - epoch_hours
        in_bin = (times > cutoff - epoch_hours) & (times <= cutoff)
        if np.any(in_bin):
            latest = float(np.asarray(record.values)[in_bin][-1])
            probs[i, LABELS.index(label(latest, yb_true))] = 1.0
        else:
            probs[i] = 1.0 / 3.0      # zero-confidence fallback
    return LabelSeries(epochs=epochs,
                       truth=_truth_labels(epochs, y_true, yb_true),
                       predicted=predicted_from_probs(probs),
                       probs=probs).validate()


# ---------------------------------------------------------------------------
# ROC curves and AUC


def binary_curve(scores: Sequence[float],
                 positives: Sequence[bool]) -> tuple:
    """ROC step curve (fpr, tpr) of a binary problem, tie-grouped.

    Thresholds sweep the distinct scores from high to low; both axes are
    nondecreasing and the curve runs from (0, 0) to (1, 1).
    """
    scores = np.asarray(scores, dtype=float)
    positives = np.asarray(positives, dtype=bool)
    n_pos = int(positives.sum())
    n_neg = int(len(positives) - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise InvalidParameterError(
            "ROC needs at least one positive and one negative")
    order = np.argsort(-scores, kind="stable")
    s, p = scores[order], positives[order]
    tp = np.cumsum(p)
    fp = np.cumsum(~p)
    keep = np.nonzero(np.diff(s, append=-np.inf))[0]   # last index per tie
    fpr = np.concatenate([[0.0], fp[keep] / n_neg])
    tpr = np.concatenate([[0.0], tp[keep] / n_pos])
    return fpr, tpr


def binary_auc(scores: Sequence[float],
               positives: Sequence[bool]) -> float:
    """Trapezoid AUC of the raw (unsmoothed) binary ROC curve."""
    fpr, tpr = binary_curve(scores, positives)
    return float(np.trapezoid(tpr, fpr))


def pool_one_vs_all(series: Sequence[LabelSeries]) -> tuple:
    """All (score, is-positive) pairs of the three one-vs-all problems."""
    series = _as_series_list(series)
    scores, positives = [], []
    for s in series:
        for c, name in enumerate(LABELS):
            scores.extend(s.probs[:, c])
            positives.extend(t == name for t in s.truth)
    return np.asarray(scores), np.asarray(positives, dtype=bool)


def _as_series_list(series) -> list:
    if isinstance(series, LabelSeries):
        series = [series]
    series = list(series)
    if not series:
        raise InvalidParameterError("no label series given")
    for s in series:
        s.validate()
    return series


def _upper_envelope(fpr: np.ndarray, tpr: np.ndarray) -> tuple:
    """Compact a step curve to unique FPR points at their highest TPR."""
    uniq, inverse = np.unique(fpr, return_inverse=True)
    best = np.zeros(len(uniq))
    np.maximum.at(best, inverse, tpr)
    return uniq, best


@dataclass(frozen=True)
class RocReport:
    """One averaging mode's ROC curve plus the confusion summary."""

    mode: str                   # "micro" or "macro"
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float
    confusion: np.ndarray       # (3, 3) fractions of all epochs
    per_class: dict             # label -> {"tpr": ..., "fpr": ...}
    skipped_classes: tuple = ()  # macro only: absent from ground truth
    n_epochs: int = 0
    diagnostics: dict = field(default_factory=dict)

    def validate(self) -> "RocReport":
        if self.mode not in ("micro", "macro"):
            raise InvalidParameterError(f"unknown ROC mode {self.mode!r}")
        if math.isnan(self.auc):
            if self.fpr.size or self.tpr.size:
                raise InvalidParameterError(
                    "NaN AUC is only allowed with an empty curve")
        elif not (0.0 <= self.auc <= 1.0):
            raise InvalidParameterError("AUC must lie in [0, 1]")
        if np.any(np.diff(self.fpr) < -1e-12) \
                or np.any(np.diff(self.tpr) < -1e-12):
            raise InvalidParameterError("ROC curve must be nondecreasing")
        if np.any(self.confusion < 0.0) \
                or abs(self.confusion.sum() - 1.0) > 1e-9:
            raise InvalidParameterError(
                "confusion fractions must be nonnegative and sum to one")
        return self


def roc(series, mode: str = "micro") -> RocReport:
    """One-vs-all ROC report over one or more label series.

    micro pools every (score, is-positive) pair of the three one-vs-all
    problems into a single curve; macro builds one curve per class
    present in the ground truth, interpolates each onto the union of
    their FPR breakpoints, and averages the TPRs.  AUC is the trapezoid
    rule on the raw points in both modes.  A class absent from the
    ground truth is skipped by macro with a warning; if no class has both
    outcomes the macro report carries an empty curve and NaN AUC.
    """
    series = _as_series_list(series)
    conf = confusion(series)
    if mode == "micro":
        scores, positives = pool_one_vs_all(series)
        fpr, tpr = binary_curve(scores, positives)
        skipped = ()
    elif mode == "macro":
        truth = [t for s in series for t in s.truth]
        curves, skipped = [], []
        for c, name in enumerate(LABELS):
            positives = np.asarray([t == name for t in truth])
            if not positives.any():
                skipped.append(name)
                continue
            scores = np.concatenate([s.probs[:, c] for s in series])
            if positives.all():
                skipped.append(name)   # no negatives either: curve undefined
                continue
            curves.append(_upper_envelope(*binary_curve(scores, positives)))
        if skipped:
            warnings.warn(
                "macro averaging skipped class(es) without both outcomes: "
                + ", ".join(skipped), stacklevel=2)
        if curves:
            mesh = np.unique(np.concatenate(
                [f for f, _ in curves] + [np.array([0.0, 1.0])]))
            tpr = np.mean([np.interp(mesh, f, t) for f, t in curves], axis=0)
            fpr = mesh
        else:                    # nothing scorable: degenerate NaN report
            fpr = tpr = np.zeros(0)
        skipped = tuple(skipped)
    else:
        raise InvalidParameterError(f"unknown ROC mode {mode!r}")
    auc = float(np.trapezoid(tpr, fpr)) if fpr.size else math.nan
    return RocReport(mode=mode, fpr=fpr, tpr=tpr, auc=auc,
                     confusion=conf["matrix"], per_class=conf["per_class"],
                     skipped_classes=skipped,
                     n_epochs=conf["n"]).validate()


def confusion(series) -> dict:
    """Confusion summary: 3x3 fractions of all epochs plus per-class rates.

    Predicted labels are the argmax of each probability triple with ties
    resolved to therapeutic.  Rows index ground truth, columns predictions,
    in (sub, therapeutic, super) order; entries are fractions of the total
    epoch count, so the whole matrix sums to one.  Per-class TPR is the
    within-class hit rate, per-class FPR the rate at which other classes
    are pulled in; both are NaN for a class without the relevant epochs.
    """
    series = _as_series_list(series)
    truth = [t for s in series for t in s.truth]
    predicted = list(predicted_from_probs(
        np.concatenate([s.probs for s in series], axis=0)))
    n = len(truth)
    matrix = np.zeros((3, 3))
    for t, p in zip(truth, predicted):
        matrix[LABELS.index(t), LABELS.index(p)] += 1.0
    matrix /= n
    per_class = {}
    for c, name in enumerate(LABELS):
        truth_c = matrix[c].sum()
        other = 1.0 - truth_c
        pred_c_other = matrix[:, c].sum() - matrix[c, c]
        per_class[name] = {
            "tpr": (matrix[c, c] / truth_c) if truth_c > 0 else math.nan,
            "fpr": (pred_c_other / other) if other > 0 else math.nan,
        }
    return {"matrix": matrix, "per_class": per_class, "n": n}
