/** Console controller.
 *
 * initConsole(root, api) builds the whole UI inside `root` and wires it
 * to the service through the given client. The same function is driven
 * by the browser entry point, the jsdom unit tests, and the end-to-end
 * suite, so what is tested is exactly what ships.
 *
 * The console is a thin terminal: all model quantities (weights, plans,
 * forecasts, losses, therapeutic limits) come from service responses
 * and are rendered verbatim; the only local arithmetic is chart layout.
 */

import { ApiClient, ApiError } from "./api.js";
import {
  buildFieldErrors,
  buildForecast,
  buildGuardState,
  buildTimeline,
  buildWeightBars,
  buildWhatif,
  formatNumber,
} from "./state.js";
import {
  applyFieldErrors,
  clear,
  renderForecastChart,
  renderRecommendation,
  renderStatus,
  renderTimeline,
  renderWeightBars,
  renderWhatifChart,
} from "./render.js";
import type { SessionViewPayload } from "./types.js";

const LOSS_KINDS = ["median_deviation", "indicator", "band_deviation"] as const;

export interface ConsoleController {
  /** Resolves once every queued UI action has settled. */
  whenIdle(): Promise<void>;
  /** Session id of the active session, or null before creation. */
  sessionId(): string | null;
  /** Latest session view fetched from the service. */
  view(): SessionViewPayload | null;
}

interface Refs {
  status: HTMLElement;
  sessionLabel: HTMLElement;
  newSession: HTMLButtonElement;
  obsForm: HTMLFormElement;
  doseForm: HTMLFormElement;
  timeline: HTMLElement;
  weights: HTMLElement;
  guardNote: HTMLElement;
  recFieldset: HTMLFieldSetElement;
  recForm: HTMLFormElement;
  recommendation: HTMLElement;
  forecastForm: HTMLFormElement;
  forecast: HTMLElement;
  whatifForm: HTMLFormElement;
  whatif: HTMLElement;
}

function h(doc: Document, html: string): DocumentFragment {
  const template = doc.createElement("template");
  template.innerHTML = html;
  return template.content;
}

const LOSS_OPTIONS = [
  `<option value="">(session default)</option>`,
  ...LOSS_KINDS.map((k) => `<option value="${k}">${k}</option>`),
].join("");

const MARKUP = `
  <header class="console-header">
    <h1>Anticoagulation dosing console</h1>
    <div class="session-controls">
      <button type="button" data-testid="new-session">Start new session</button>
      <span class="session-id" data-testid="session-id"></span>
    </div>
  </header>
  <p class="status" data-testid="status" role="status"></p>

  <section class="panel" aria-labelledby="entries-h">
    <h2 id="entries-h">Record entries</h2>
    <form data-testid="obs-form" class="entry-form">
      <label>Hour <input name="hour" type="number" step="1" min="1" required></label>
      <span class="field-error" data-error-for="hour"></span>
      <label>aPTT (s) <input name="aptt" type="number" step="any" required></label>
      <span class="field-error" data-error-for="aptt"></span>
      <label class="check"><input name="supersedes" type="checkbox"> replace same-hour entry</label>
      <button type="submit">Record observation</button>
    </form>
    <form data-testid="dose-form" class="entry-form">
      <label>Hour <input name="hour" type="number" step="1" min="0" required></label>
      <span class="field-error" data-error-for="hour"></span>
      <label>Dose (U/h) <input name="dose" type="number" step="any" min="0" required></label>
      <span class="field-error" data-error-for="dose"></span>
      <label class="check"><input name="supersedes" type="checkbox"> replace same-hour entry</label>
      <button type="submit">Record dose</button>
    </form>
  </section>

  <section class="panel" aria-labelledby="timeline-h">
    <h2 id="timeline-h">Timeline</h2>
    <div data-testid="timeline"></div>
  </section>

  <section class="panel" aria-labelledby="weights-h">
    <h2 id="weights-h">Scenario weights</h2>
    <div data-testid="weights"></div>
  </section>

  <section class="panel" aria-labelledby="rec-h">
    <h2 id="rec-h">Recommendation</h2>
    <p class="guard-note" data-testid="guard-note"></p>
    <form data-testid="rec-form">
      <fieldset data-testid="rec-fieldset">
        <label>Horizon (h) <input name="horizon" type="number" step="1" min="1"></label>
        <label>Loss <select name="loss">${LOSS_OPTIONS}</select></label>
        <button type="submit" data-testid="rec-request">Request recommendation</button>
      </fieldset>
    </form>
    <div data-testid="recommendation"></div>
  </section>

  <section class="panel" aria-labelledby="forecast-h">
    <h2 id="forecast-h">Forecast (no further dosing)</h2>
    <form data-testid="forecast-form">
      <label>Hours ahead <input name="hours" type="number" step="1" min="1"></label>
      <button type="submit" data-testid="forecast-request">Refresh forecast</button>
    </form>
    <div data-testid="forecast"></div>
  </section>

  <section class="panel" aria-labelledby="whatif-h">
    <h2 id="whatif-h">What-if dose sequence</h2>
    <form data-testid="whatif-form">
      <label>Doses, comma separated (U/h)
        <input name="doses" type="text" placeholder="e.g. 2, 2, 0, 0" required>
      </label>
      <span class="field-error" data-error-for="doses"></span>
      <label>Loss <select name="loss">${LOSS_OPTIONS}</select></label>
      <button type="submit" data-testid="whatif-request">Run what-if</button>
    </form>
    <div data-testid="whatif"></div>
  </section>
`;

function byTestId<T extends HTMLElement>(root: ParentNode, id: string): T {
  const node = root.querySelector(`[data-testid="${id}"]`);
  if (!node) throw new Error(`missing element: ${id}`);
  return node as T;
}

function numberField(form: HTMLFormElement, name: string): number {
  const input = form.elements.namedItem(name) as HTMLInputElement | null;
  const value = Number(input?.value);
  if (input === null || input.value.trim() === "" || !Number.isFinite(value)) {
    throw new LocalInputError(name, "enter a number");
  }
  return value;
}

function optionalNumberField(form: HTMLFormElement, name: string): number | undefined {
  const input = form.elements.namedItem(name) as HTMLInputElement | null;
  if (input === null || input.value.trim() === "") return undefined;
  const value = Number(input.value);
  if (!Number.isFinite(value)) throw new LocalInputError(name, "enter a number");
  return value;
}

function checkboxField(form: HTMLFormElement, name: string): boolean {
  const input = form.elements.namedItem(name) as HTMLInputElement | null;
  return input?.checked ?? false;
}

function selectField(form: HTMLFormElement, name: string): string | undefined {
  const input = form.elements.namedItem(name) as HTMLSelectElement | null;
  const value = input?.value ?? "";
  return value === "" ? undefined : value;
}

function doseListField(form: HTMLFormElement, name: string): number[] {
  const input = form.elements.namedItem(name) as HTMLInputElement | null;
  const raw = (input?.value ?? "").trim();
  if (raw === "") throw new LocalInputError(name, "enter at least one dose");
  const parts = raw.split(",").map((p) => p.trim());
  const doses = parts.map((p) => Number(p));
  if (doses.some((d) => !Number.isFinite(d))) {
    throw new LocalInputError(name, "doses must be numbers separated by commas");
  }
  return doses;
}

class LocalInputError extends Error {
  constructor(
    readonly field: string,
    message: string,
  ) {
    super(message);
    this.name = "LocalInputError";
  }
}

export function initConsole(root: HTMLElement, api: ApiClient = new ApiClient()): ConsoleController {
  const doc = root.ownerDocument;
  clear(root);
  root.appendChild(h(doc, MARKUP));

  const refs: Refs = {
    status: byTestId(root, "status"),
    sessionLabel: byTestId(root, "session-id"),
    newSession: byTestId(root, "new-session"),
    obsForm: byTestId(root, "obs-form"),
    doseForm: byTestId(root, "dose-form"),
    timeline: byTestId(root, "timeline"),
    weights: byTestId(root, "weights"),
    guardNote: byTestId(root, "guard-note"),
    recFieldset: byTestId(root, "rec-fieldset"),
    recForm: byTestId(root, "rec-form"),
    recommendation: byTestId(root, "recommendation"),
    forecastForm: byTestId(root, "forecast-form"),
    forecast: byTestId(root, "forecast"),
    whatifForm: byTestId(root, "whatif-form"),
    whatif: byTestId(root, "whatif"),
  };

  let sessionId: string | null = null;
  let lastView: SessionViewPayload | null = null;
  let pending: Promise<void> = Promise.resolve();

  function queue(fn: () => Promise<void>): void {
    pending = pending.then(fn, fn);
  }

  function fail(err: unknown, form?: HTMLFormElement): void {
    if (err instanceof LocalInputError && form) {
      applyFieldErrors(form, new Map([[err.field, err.message]]));
      renderStatus(refs.status, err.message, "error");
      return;
    }
    if (err instanceof ApiError) {
      if (form) applyFieldErrors(form, buildFieldErrors(err.payload));
      const note = err.payload.stage
        ? ` (stage ${err.payload.stage}, ${formatNumber(err.payload.elapsed_s ?? 0, 1)}s of ${formatNumber(err.payload.budget_s ?? 0, 1)}s budget)`
        : "";
      renderStatus(refs.status, `Service: ${err.message}${note}`, "error");
      return;
    }
    renderStatus(refs.status, String(err instanceof Error ? err.message : err), "error");
  }

  function requireSession(): string {
    if (sessionId === null) throw new Error("start a session first");
    return sessionId;
  }

  async function refreshView(): Promise<void> {
    const sid = requireSession();
    lastView = await api.getSession(sid);
    renderTimeline(refs.timeline, buildTimeline(lastView.observations, lastView.doses));
    const guard = buildGuardState(lastView);
    refs.guardNote.textContent = guard.locked
      ? guard.message
      : "Enough readings on record: planning unlocked.";
    refs.recFieldset.disabled = guard.locked;
    refs.recFieldset.setAttribute("data-locked", String(guard.locked));
  }

  async function refreshWeights(): Promise<void> {
    const sid = requireSession();
    if ((lastView?.n_observations ?? 0) < 1) {
      clear(refs.weights);
      refs.weights.appendChild(
        h(doc, `<p class="empty-note">Weights appear after the first observation.</p>`),
      );
      return;
    }
    const estimate = await api.getEstimate(sid);
    renderWeightBars(refs.weights, buildWeightBars(estimate.scenario_weights));
  }

  refs.newSession.addEventListener("click", () => {
    queue(async () => {
      try {
        renderStatus(refs.status, "Creating session…");
        const created = await api.createSession();
        sessionId = created.session_id;
        lastView = null;
        refs.sessionLabel.textContent = `session ${created.session_id}`;
        clear(refs.recommendation);
        clear(refs.forecast);
        clear(refs.whatif);
        await refreshView();
        await refreshWeights();
        renderStatus(refs.status, `Session ${created.session_id} started.`);
      } catch (err) {
        fail(err);
      }
    });
  });

  refs.obsForm.addEventListener("submit", (ev) => {
    ev.preventDefault();
    queue(async () => {
      try {
        applyFieldErrors(refs.obsForm, new Map());
        const hour = numberField(refs.obsForm, "hour");
        const aptt = numberField(refs.obsForm, "aptt");
        const supersedes = checkboxField(refs.obsForm, "supersedes");
        const ack = await api.postObservation(requireSession(), hour, aptt, supersedes);
        await refreshView();
        await refreshWeights();
        renderStatus(
          refs.status,
          `Observation recorded (${ack.n_observations} total). ` +
            (ack.low_information ? "Still gathering information." : "Planning unlocked."),
        );
      } catch (err) {
        fail(err, refs.obsForm);
      }
    });
  });

  refs.doseForm.addEventListener("submit", (ev) => {
    ev.preventDefault();
    queue(async () => {
      try {
        applyFieldErrors(refs.doseForm, new Map());
        const hour = numberField(refs.doseForm, "hour");
        const dose = numberField(refs.doseForm, "dose");
        const supersedes = checkboxField(refs.doseForm, "supersedes");
        const ack = await api.postDose(requireSession(), hour, dose, supersedes);
        await refreshView();
        await refreshWeights();
        renderStatus(refs.status, `Dose recorded (${ack.n_dose_hours} dose hour(s)).`);
      } catch (err) {
        fail(err, refs.doseForm);
      }
    });
  });

  refs.recForm.addEventListener("submit", (ev) => {
    ev.preventDefault();
    queue(async () => {
      try {
        const horizon = optionalNumberField(refs.recForm, "horizon");
        const loss = selectField(refs.recForm, "loss");
        renderStatus(refs.status, "Planning…");
        const rec = await api.getRecommendation(requireSession(), { horizon, loss });
        renderRecommendation(refs.recommendation, {
          time: rec.plan.time,
          horizon: rec.plan.horizon,
          doses: rec.plan.doses,
          expectedLoss: rec.plan.expected_loss,
          loss: rec.loss,
          elapsedS: rec.elapsed_s,
        });
        renderWeightBars(refs.weights, buildWeightBars(rec.scenario_weights));
        renderStatus(refs.status, `Recommendation ready (${formatNumber(rec.elapsed_s, 2)} s).`);
      } catch (err) {
        fail(err, refs.recForm);
      }
    });
  });

  refs.forecastForm.addEventListener("submit", (ev) => {
    ev.preventDefault();
    queue(async () => {
      try {
        const hours = optionalNumberField(refs.forecastForm, "hours");
        renderStatus(refs.status, "Fetching forecast…");
        const trajectory = await api.getTrajectory(requireSession(), hours);
        renderForecastChart(refs.forecast, buildForecast(trajectory));
        renderStatus(refs.status, "Forecast updated.");
      } catch (err) {
        fail(err, refs.forecastForm);
      }
    });
  });

  refs.whatifForm.addEventListener("submit", (ev) => {
    ev.preventDefault();
    queue(async () => {
      try {
        applyFieldErrors(refs.whatifForm, new Map());
        const doses = doseListField(refs.whatifForm, "doses");
        const loss = selectField(refs.whatifForm, "loss");
        renderStatus(refs.status, "Evaluating candidate…");
        const result = await api.postWhatif(requireSession(), doses, loss);
        renderWhatifChart(refs.whatif, buildWhatif(result));
        renderStatus(refs.status, "What-if evaluated.");
      } catch (err) {
        fail(err, refs.whatifForm);
      }
    });
  });

  renderStatus(refs.status, "No session yet — start one to begin.");
  refs.recFieldset.disabled = true;
  refs.recFieldset.setAttribute("data-locked", "true");
  refs.guardNote.textContent = "Start a session to begin.";

  return {
    whenIdle: () => pending,
    sessionId: () => sessionId,
    view: () => lastView,
  };
}
