/** Pure view-model builders.
 *
 * Every function here maps service payloads to render-ready rows without
 * computing any model quantity itself: numbers shown on screen are the
 * service's numbers, formatted. Keeping these pure lets the unit tests
 * exercise them without a DOM or a network.
 */

import type {
  DoseRow,
  ErrorPayload,
  ObservationRow,
  ScenarioWeightRow,
  SessionViewPayload,
  TrajectoryPayload,
  WhatifPayload,
} from "./types.js";

/** One merged timeline row: an hour with whatever was logged at it. */
export interface TimelineRow {
  hour: number;
  aptt: number | null;
  dose: number | null;
}

/** Merge observations and doses into one table sorted by hour. */
export function buildTimeline(
  observations: readonly ObservationRow[],
  doses: readonly DoseRow[],
): TimelineRow[] {
  const byHour = new Map<number, TimelineRow>();
  for (const o of observations) {
    const row = byHour.get(o.hour) ?? { hour: o.hour, aptt: null, dose: null };
    row.aptt = o.aptt;
    byHour.set(o.hour, row);
  }
  for (const d of doses) {
    const row = byHour.get(d.hour) ?? { hour: d.hour, aptt: null, dose: null };
    row.dose = d.dose;
    byHour.set(d.hour, row);
  }
  return [...byHour.values()].sort((a, b) => a.hour - b.hour);
}

/** One bar in the scenario-weight chart. */
export interface WeightBar {
  index: number;
  label: string;
  weight: number;
  /** Bar length as a fraction of the heaviest weight (0..1, for layout). */
  relative: number;
  feasible: boolean;
}

/** Format a possibly-absent parameter (the service sends null for
 * quantities it has not resolved yet). */
function fmtParam(x: number | null, digits: number): string {
  return x === null ? "—" : formatNumber(x, digits);
}

/** Rows for the weight chart, served order preserved. */
export function buildWeightBars(weights: readonly ScenarioWeightRow[]): WeightBar[] {
  const heaviest = weights.reduce((m, w) => Math.max(m, w.weight), 0);
  return weights.map((w) => ({
    index: w.index,
    label: `α=${formatNumber(w.alpha, 3)} b=${formatNumber(w.b, 3)} k=${fmtParam(w.k, 3)}`,
    weight: w.weight,
    relative: heaviest > 0 ? w.weight / heaviest : 0,
    feasible: w.feasible,
  }));
}

/** Lock state for the recommendation / what-if / trajectory panels. */
export interface GuardState {
  locked: boolean;
  message: string;
}

export function buildGuardState(view: SessionViewPayload): GuardState {
  if (view.low_information) {
    return {
      locked: true,
      message: `Planning locked: ${view.n_observations} observation(s) on record; more readings are needed before the service will plan.`,
    };
  }
  return { locked: false, message: "" };
}

/** A point on a plotted series, in data coordinates. */
export interface SeriesPoint {
  hour: number;
  value: number;
}

/** Render-ready forecast: band, mean, and per-scenario overlays. */
export interface ForecastView {
  hours: number[];
  mean: SeriesPoint[];
  bandLow: SeriesPoint[];
  bandHigh: SeriesPoint[];
  quantiles: [number, number];
  therapeutic: { low: number; high: number };
  scenarios: { index: number; weight: number; points: SeriesPoint[] }[];
}

function zip(hours: readonly number[], values: readonly number[]): SeriesPoint[] {
  return hours.map((hour, i) => ({ hour, value: values[i] ?? NaN }));
}

export function buildForecast(t: TrajectoryPayload): ForecastView {
  return {
    hours: [...t.hours],
    mean: zip(t.hours, t.mean),
    bandLow: zip(t.hours, t.band.low),
    bandHigh: zip(t.hours, t.band.high),
    quantiles: [t.band.quantiles[0] ?? 0.1, t.band.quantiles[1] ?? 0.9],
    therapeutic: { low: t.therapeutic.low, high: t.therapeutic.high },
    scenarios: t.scenarios.map((s) => ({
      index: s.index,
      weight: s.weight,
      points: zip(t.hours, s.y),
    })),
  };
}

/** Render-ready what-if result: candidate doses and scenario curves. */
export interface WhatifView {
  candidate: number[];
  loss: string;
  expectedLoss: number;
  hours: number[];
  scenarios: {
    index: number;
    label: string;
    weight: number;
    loss: number;
    points: SeriesPoint[];
  }[];
}

export function buildWhatif(w: WhatifPayload): WhatifView {
  return {
    candidate: [...w.candidate],
    loss: w.loss,
    expectedLoss: w.expected_loss,
    hours: [...w.hours],
    scenarios: w.scenarios.map((s) => ({
      index: s.index,
      label: `α=${formatNumber(s.alpha, 3)} b=${formatNumber(s.b, 3)} k=${fmtParam(s.k, 3)}`,
      weight: s.weight,
      loss: s.loss,
      points: zip(w.hours, s.y),
    })),
  };
}

/** Map a service field-error list to input-name → message. */
export function buildFieldErrors(err: ErrorPayload): Map<string, string> {
  const map = new Map<string, string>();
  for (const f of err.fields ?? []) map.set(f.field, f.message);
  return map;
}

/** Fixed-width numeric formatting shared by every panel. */
export function formatNumber(x: number, digits = 2): string {
  if (!Number.isFinite(x)) return String(x);
  return x.toFixed(digits);
}

/** Full-precision string for machine-checked data attributes. */
export function exactNumber(x: number): string {
  return String(x);
}

/** Axis scale mapping a data range onto pixel coordinates. */
export interface LinearScale {
  (x: number): number;
  domain: [number, number];
  range: [number, number];
}

export function linearScale(domain: [number, number], range: [number, number]): LinearScale {
  const [d0, d1] = domain;
  const [r0, r1] = range;
  const span = d1 - d0;
  const f = ((x: number) =>
    span === 0 ? (r0 + r1) / 2 : r0 + ((x - d0) / span) * (r1 - r0)) as LinearScale;
  f.domain = domain;
  f.range = range;
  return f;
}

/** Data extent padded a little so curves don't touch the frame. */
export function paddedExtent(values: readonly number[], padFraction = 0.08): [number, number] {
  const finite = values.filter((v) => Number.isFinite(v));
  if (finite.length === 0) return [0, 1];
  let lo = Math.min(...finite);
  let hi = Math.max(...finite);
  if (lo === hi) {
    lo -= 1;
    hi += 1;
  }
  const pad = (hi - lo) * padFraction;
  return [lo - pad, hi + pad];
}
