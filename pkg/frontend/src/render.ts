/** DOM + SVG rendering.
 *
 * All drawing is plain SVG built through the DOM so the same code runs
 * in a browser and under jsdom. Series are distinguished by dash
 * pattern, marker shape, and text label — never by color alone — and
 * every plotted point carries full-precision data attributes so tests
 * can compare the rendering against the service response exactly.
 */

import type { ForecastView, TimelineRow, WeightBar, WhatifView } from "./state.js";
import { exactNumber, formatNumber, linearScale, paddedExtent } from "./state.js";

const SVG_NS = "http://www.w3.org/2000/svg";

function el<K extends keyof HTMLElementTagNameMap>(
  doc: Document,
  tag: K,
  attrs: Record<string, string> = {},
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = doc.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  if (text !== undefined) node.textContent = text;
  return node;
}

function svgEl(
  doc: Document,
  tag: string,
  attrs: Record<string, string> = {},
  text?: string,
): SVGElement {
  const node = doc.createElementNS(SVG_NS, tag) as SVGElement;
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  if (text !== undefined) node.textContent = text;
  return node;
}

export function clear(node: Element): void {
  while (node.firstChild) node.removeChild(node.firstChild);
}

/* ------------------------------------------------------------------ */
/* Timeline table                                                      */
/* ------------------------------------------------------------------ */

export function renderTimeline(container: Element, rows: readonly TimelineRow[]): void {
  const doc = container.ownerDocument;
  clear(container);
  if (rows.length === 0) {
    container.appendChild(
      el(doc, "p", { class: "empty-note" }, "No observations or doses recorded yet."),
    );
    return;
  }
  const table = el(doc, "table", { class: "timeline", "data-testid": "timeline-table" });
  const thead = el(doc, "thead");
  const headRow = el(doc, "tr");
  for (const h of ["Hour", "aPTT (s)", "Dose (U/h)"]) {
    headRow.appendChild(el(doc, "th", { scope: "col" }, h));
  }
  thead.appendChild(headRow);
  table.appendChild(thead);
  const tbody = el(doc, "tbody");
  for (const r of rows) {
    const tr = el(doc, "tr", { "data-hour": String(r.hour) });
    tr.appendChild(el(doc, "td", {}, String(r.hour)));
    tr.appendChild(el(doc, "td", {}, r.aptt === null ? "—" : formatNumber(r.aptt, 2)));
    tr.appendChild(el(doc, "td", {}, r.dose === null ? "—" : formatNumber(r.dose, 2)));
    tbody.appendChild(tr);
  }
  table.appendChild(tbody);
  container.appendChild(table);
}

/* ------------------------------------------------------------------ */
/* Scenario-weight bars                                                */
/* ------------------------------------------------------------------ */

export function renderWeightBars(container: Element, bars: readonly WeightBar[]): void {
  const doc = container.ownerDocument;
  clear(container);
  if (bars.length === 0) {
    container.appendChild(el(doc, "p", { class: "empty-note" }, "No scenario weights yet."));
    return;
  }
  const list = el(doc, "ol", { class: "weight-bars", "data-testid": "weight-bars" });
  for (const b of bars) {
    const item = el(doc, "li", {
      class: b.feasible ? "weight-bar" : "weight-bar infeasible",
      "data-scenario-index": String(b.index),
      "data-weight": exactNumber(b.weight),
    });
    item.appendChild(el(doc, "span", { class: "weight-label" }, b.label));
    const track = el(doc, "span", {
      class: "weight-track",
      role: "img",
      "aria-label": `weight ${formatNumber(b.weight, 4)}`,
    });
    const fill = el(doc, "span", { class: "weight-fill" });
    fill.style.width = `${(b.relative * 100).toFixed(2)}%`;
    track.appendChild(fill);
    item.appendChild(track);
    item.appendChild(
      el(
        doc,
        "span",
        { class: "weight-value" },
        b.feasible ? formatNumber(b.weight, 4) : `${formatNumber(b.weight, 4)} (infeasible)`,
      ),
    );
    list.appendChild(item);
  }
  container.appendChild(list);
}

/* ------------------------------------------------------------------ */
/* Forecast chart                                                      */
/* ------------------------------------------------------------------ */

const WIDTH = 720;
const HEIGHT = 320;
const MARGIN = { top: 16, right: 16, bottom: 36, left: 52 };

interface ChartFrame {
  svg: SVGElement;
  plot: SVGElement;
  x: (h: number) => number;
  y: (v: number) => number;
}

function chartFrame(
  doc: Document,
  hours: readonly number[],
  valuesForExtent: readonly number[],
  title: string,
  testId: string,
): ChartFrame {
  const svg = svgEl(doc, "svg", {
    viewBox: `0 0 ${WIDTH} ${HEIGHT}`,
    width: "100%",
    role: "img",
    "aria-label": title,
    "data-testid": testId,
    class: "chart",
  });
  svg.appendChild(svgEl(doc, "title", {}, title));
  const [h0, h1] = paddedExtent(hours as number[], 0.02);
  const [v0, v1] = paddedExtent(valuesForExtent as number[]);
  const x = linearScale([h0, h1], [MARGIN.left, WIDTH - MARGIN.right]);
  const y = linearScale([v0, v1], [HEIGHT - MARGIN.bottom, MARGIN.top]);

  // Axes.
  const axis = svgEl(doc, "g", { class: "axes" });
  axis.appendChild(
    svgEl(doc, "line", {
      x1: String(MARGIN.left),
      y1: String(HEIGHT - MARGIN.bottom),
      x2: String(WIDTH - MARGIN.right),
      y2: String(HEIGHT - MARGIN.bottom),
      class: "axis-line",
    }),
  );
  axis.appendChild(
    svgEl(doc, "line", {
      x1: String(MARGIN.left),
      y1: String(MARGIN.top),
      x2: String(MARGIN.left),
      y2: String(HEIGHT - MARGIN.bottom),
      class: "axis-line",
    }),
  );
  const ticksX = 6;
  for (let i = 0; i <= ticksX; i++) {
    const hv = h0 + ((h1 - h0) * i) / ticksX;
    axis.appendChild(
      svgEl(
        doc,
        "text",
        {
          x: String(x(hv)),
          y: String(HEIGHT - MARGIN.bottom + 16),
          "text-anchor": "middle",
          class: "tick-label",
        },
        formatNumber(hv, 0),
      ),
    );
  }
  const ticksY = 5;
  for (let i = 0; i <= ticksY; i++) {
    const vv = v0 + ((v1 - v0) * i) / ticksY;
    axis.appendChild(
      svgEl(
        doc,
        "text",
        {
          x: String(MARGIN.left - 6),
          y: String(y(vv) + 4),
          "text-anchor": "end",
          class: "tick-label",
        },
        formatNumber(vv, 0),
      ),
    );
  }
  axis.appendChild(
    svgEl(
      doc,
      "text",
      {
        x: String((MARGIN.left + WIDTH - MARGIN.right) / 2),
        y: String(HEIGHT - 4),
        "text-anchor": "middle",
        class: "axis-title",
      },
      "hours from now",
    ),
  );
  svg.appendChild(axis);
  const plot = svgEl(doc, "g", { class: "plot" });
  svg.appendChild(plot);
  return { svg, plot, x, y };
}

function pathFrom(
  points: readonly { hour: number; value: number }[],
  x: (h: number) => number,
  y: (v: number) => number,
): string {
  return points
    .map((p, i) => `${i === 0 ? "M" : "L"}${x(p.hour).toFixed(2)},${y(p.value).toFixed(2)}`)
    .join(" ");
}

/** Dash patterns cycled across scenario overlays (shape, not color, codes identity). */
const SCENARIO_DASHES = ["2 3", "6 3", "1 4", "8 2 2 2", "4 4", "10 3", "2 2 6 2", "5 1", "3 6", "12 2"];

export function renderForecastChart(container: Element, view: ForecastView): void {
  const doc = container.ownerDocument;
  clear(container);
  if (view.hours.length === 0) {
    container.appendChild(el(doc, "p", { class: "empty-note" }, "No forecast available."));
    return;
  }
  const allValues = [
    ...view.mean.map((p) => p.value),
    ...view.bandLow.map((p) => p.value),
    ...view.bandHigh.map((p) => p.value),
    view.therapeutic.low,
    view.therapeutic.high,
    ...view.scenarios.flatMap((s) => s.points.map((p) => p.value)),
  ];
  const frame = chartFrame(
    doc,
    view.hours,
    allValues,
    "aPTT forecast with uncertainty band and therapeutic range",
    "forecast-chart",
  );
  const { plot, x, y } = frame;

  // Therapeutic range: hatched-look region bounded by labelled dashed rules.
  const therTop = y(view.therapeutic.high);
  const therBottom = y(view.therapeutic.low);
  plot.appendChild(
    svgEl(doc, "rect", {
      x: String(MARGIN.left),
      y: String(Math.min(therTop, therBottom)),
      width: String(WIDTH - MARGIN.left - MARGIN.right),
      height: String(Math.abs(therBottom - therTop)),
      class: "therapeutic-zone",
      "data-ther-low": exactNumber(view.therapeutic.low),
      "data-ther-high": exactNumber(view.therapeutic.high),
    }),
  );
  for (const [value, label] of [
    [view.therapeutic.low, "range low"],
    [view.therapeutic.high, "range high"],
  ] as const) {
    plot.appendChild(
      svgEl(doc, "line", {
        x1: String(MARGIN.left),
        x2: String(WIDTH - MARGIN.right),
        y1: String(y(value)),
        y2: String(y(value)),
        class: "therapeutic-rule",
        "stroke-dasharray": "4 3",
      }),
    );
    plot.appendChild(
      svgEl(
        doc,
        "text",
        {
          x: String(WIDTH - MARGIN.right - 4),
          y: String(y(value) - 4),
          "text-anchor": "end",
          class: "rule-label",
        },
        `${label} ${formatNumber(value, 1)}`,
      ),
    );
  }

  // Uncertainty band between the served quantiles.
  const bandPath =
    pathFrom(view.bandHigh, x, y) +
    " " +
    view.bandLow
      .slice()
      .reverse()
      .map((p) => `L${x(p.hour).toFixed(2)},${y(p.value).toFixed(2)}`)
      .join(" ") +
    " Z";
  plot.appendChild(
    svgEl(doc, "path", {
      d: bandPath,
      class: "quantile-band",
      "data-quantiles": `${view.quantiles[0]},${view.quantiles[1]}`,
    }),
  );

  // Scenario overlays: one dashed polyline each, labelled at the tail.
  view.scenarios.forEach((s, i) => {
    const dash = SCENARIO_DASHES[i % SCENARIO_DASHES.length] ?? "2 3";
    const g = svgEl(doc, "g", {
      class: "scenario-series",
      "data-scenario-index": String(s.index),
      "data-weight": exactNumber(s.weight),
    });
    g.appendChild(
      svgEl(doc, "path", {
        d: pathFrom(s.points, x, y),
        class: "scenario-line",
        "stroke-dasharray": dash,
        fill: "none",
      }),
    );
    for (const p of s.points) {
      g.appendChild(
        svgEl(doc, "circle", {
          cx: String(x(p.hour)),
          cy: String(y(p.value)),
          r: "1.6",
          class: "scenario-point",
          "data-hour": exactNumber(p.hour),
          "data-value": exactNumber(p.value),
        }),
      );
    }
    const tail = s.points[s.points.length - 1];
    if (tail) {
      g.appendChild(
        svgEl(
          doc,
          "text",
          {
            x: String(x(tail.hour) + 3),
            y: String(y(tail.value)),
            class: "series-label",
          },
          `s${s.index}`,
        ),
      );
    }
    plot.appendChild(g);
  });

  // Weighted mean on top: solid line with square markers.
  plot.appendChild(
    svgEl(doc, "path", {
      d: pathFrom(view.mean, x, y),
      class: "mean-line",
      fill: "none",
    }),
  );
  for (const p of view.mean) {
    plot.appendChild(
      svgEl(doc, "rect", {
        x: String(x(p.hour) - 2),
        y: String(y(p.value) - 2),
        width: "4",
        height: "4",
        class: "mean-point",
        "data-hour": exactNumber(p.hour),
        "data-value": exactNumber(p.value),
      }),
    );
  }
  const meanTail = view.mean[view.mean.length - 1];
  if (meanTail) {
    plot.appendChild(
      svgEl(
        doc,
        "text",
        {
          x: String(x(meanTail.hour) + 3),
          y: String(y(meanTail.value) + 10),
          class: "series-label mean",
        },
        "mean",
      ),
    );
  }

  container.appendChild(frame.svg);
}

/* ------------------------------------------------------------------ */
/* What-if chart                                                       */
/* ------------------------------------------------------------------ */

export function renderWhatifChart(container: Element, view: WhatifView): void {
  const doc = container.ownerDocument;
  clear(container);
  if (view.hours.length === 0) {
    container.appendChild(el(doc, "p", { class: "empty-note" }, "No what-if result yet."));
    return;
  }
  const summary = el(doc, "p", { class: "whatif-summary", "data-testid": "whatif-summary" });
  summary.textContent =
    `Candidate [${view.candidate.map((d) => formatNumber(d, 2)).join(", ")}] — ` +
    `expected ${view.loss} loss ${formatNumber(view.expectedLoss, 4)}`;
  summary.setAttribute("data-expected-loss", exactNumber(view.expectedLoss));
  container.appendChild(summary);

  const allValues = view.scenarios.flatMap((s) => s.points.map((p) => p.value));
  const frame = chartFrame(
    doc,
    view.hours,
    allValues,
    "What-if scenario trajectories for the candidate dose sequence",
    "whatif-chart",
  );
  const { plot, x, y } = frame;
  view.scenarios.forEach((s, i) => {
    const dash = SCENARIO_DASHES[i % SCENARIO_DASHES.length] ?? "2 3";
    const g = svgEl(doc, "g", {
      class: "scenario-series",
      "data-scenario-index": String(s.index),
      "data-weight": exactNumber(s.weight),
      "data-loss": exactNumber(s.loss),
    });
    g.appendChild(
      svgEl(doc, "path", {
        d: pathFrom(s.points, x, y),
        class: "scenario-line",
        "stroke-dasharray": dash,
        fill: "none",
      }),
    );
    for (const p of s.points) {
      g.appendChild(
        svgEl(doc, "circle", {
          cx: String(x(p.hour)),
          cy: String(y(p.value)),
          r: "1.6",
          class: "scenario-point",
          "data-hour": exactNumber(p.hour),
          "data-value": exactNumber(p.value),
        }),
      );
    }
    const tail = s.points[s.points.length - 1];
    if (tail) {
      g.appendChild(
        svgEl(
          doc,
          "text",
          { x: String(x(tail.hour) + 3), y: String(y(tail.value)), class: "series-label" },
          `s${s.index} (${formatNumber(s.loss, 3)})`,
        ),
      );
    }
    plot.appendChild(g);
  });
  container.appendChild(frame.svg);
}

/* ------------------------------------------------------------------ */
/* Recommendation panel                                                */
/* ------------------------------------------------------------------ */

export interface RecommendationViewModel {
  time: number;
  horizon: number;
  doses: number[];
  expectedLoss: number;
  loss: string;
  elapsedS: number;
}

export function renderRecommendation(container: Element, rec: RecommendationViewModel): void {
  const doc = container.ownerDocument;
  clear(container);
  const head = el(
    doc,
    "p",
    { class: "rec-head", "data-testid": "recommendation-head" },
    `Plan from hour ${rec.time}, horizon ${rec.horizon} h, ${rec.loss} loss ` +
      `(expected ${formatNumber(rec.expectedLoss, 4)}, computed in ${formatNumber(rec.elapsedS, 2)} s)`,
  );
  head.setAttribute("data-expected-loss", exactNumber(rec.expectedLoss));
  container.appendChild(head);
  const list = el(doc, "ol", { class: "dose-plan", "data-testid": "dose-plan" });
  rec.doses.forEach((d, i) => {
    const item = el(
      doc,
      "li",
      { "data-dose": exactNumber(d) },
      `hour ${rec.time + i}: ${formatNumber(d, 2)} U/h`,
    );
    list.appendChild(item);
  });
  container.appendChild(list);
}

/* ------------------------------------------------------------------ */
/* Status + error rendering                                            */
/* ------------------------------------------------------------------ */

export function renderStatus(container: Element, text: string, kind: "info" | "error" = "info"): void {
  container.textContent = text;
  container.setAttribute("data-kind", kind);
  container.setAttribute("role", kind === "error" ? "alert" : "status");
}

export function applyFieldErrors(form: Element, errors: Map<string, string>): void {
  for (const input of Array.from(form.querySelectorAll("input,select"))) {
    const name = input.getAttribute("name") ?? "";
    const note = form.querySelector(`[data-error-for="${name}"]`);
    const message = errors.get(name);
    if (message) {
      input.setAttribute("aria-invalid", "true");
      if (note) note.textContent = message;
    } else {
      input.removeAttribute("aria-invalid");
      if (note) note.textContent = "";
    }
  }
}
