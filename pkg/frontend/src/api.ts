/** Typed fetch client for the dosing service.
 *
 * Every method resolves to the parsed JSON payload or throws ApiError
 * carrying the service's own error envelope verbatim (message, field
 * list, status), which the console surfaces without rewording.
 */

import type {
  CreateSessionPayload,
  DoseAccepted,
  ErrorPayload,
  EstimatePayload,
  FieldError,
  ObservationAccepted,
  RecommendationPayload,
  SessionViewPayload,
  TrajectoryPayload,
  WhatifPayload,
} from "./types.js";

export class ApiError extends Error {
  readonly status: number;
  readonly fields: FieldError[];
  readonly payload: ErrorPayload;

  constructor(status: number, payload: ErrorPayload) {
    super(payload.error);
    this.name = "ApiError";
    this.status = status;
    this.fields = payload.fields ?? [];
    this.payload = payload;
  }

  /** True when the service refused for lack of readings (its 422 guard). */
  get lowInformation(): boolean {
    return this.status === 422;
  }
}

async function parse<T>(response: Response): Promise<T> {
  const body = (await response.json()) as T | ErrorPayload;
  if (!response.ok) {
    const err = body as ErrorPayload;
    throw new ApiError(response.status, {
      error: typeof err.error === "string" ? err.error : response.statusText,
      ...err,
    });
  }
  return body as T;
}

export interface SessionOverrides {
  noise_scale?: number;
  scenario_count?: number;
  loss?: string;
  horizon?: number;
}

export class ApiClient {
  constructor(readonly base: string = "/api") {}

  private url(path: string): string {
    return `${this.base}${path}`;
  }

  private async get<T>(path: string): Promise<T> {
    return parse<T>(await fetch(this.url(path)));
  }

  private async post<T>(path: string, body: unknown): Promise<T> {
    return parse<T>(
      await fetch(this.url(path), {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify(body),
      }),
    );
  }

  createSession(overrides: SessionOverrides = {}): Promise<CreateSessionPayload> {
    return this.post("/sessions", overrides);
  }

  getSession(sid: string): Promise<SessionViewPayload> {
    return this.get(`/sessions/${encodeURIComponent(sid)}`);
  }

  postObservation(
    sid: string,
    hour: number,
    aptt: number,
    supersedes = false,
  ): Promise<ObservationAccepted> {
    return this.post(`/sessions/${encodeURIComponent(sid)}/observations`, {
      hour,
      aptt,
      supersedes,
    });
  }

  postDose(
    sid: string,
    hour: number,
    dose: number,
    supersedes = false,
  ): Promise<DoseAccepted> {
    return this.post(`/sessions/${encodeURIComponent(sid)}/doses`, {
      hour,
      dose,
      supersedes,
    });
  }

  getEstimate(sid: string): Promise<EstimatePayload> {
    return this.get(`/sessions/${encodeURIComponent(sid)}/estimate`);
  }

  getRecommendation(
    sid: string,
    options: { horizon?: number; loss?: string } = {},
  ): Promise<RecommendationPayload> {
    const params = new URLSearchParams();
    if (options.horizon !== undefined) params.set("horizon", String(options.horizon));
    if (options.loss !== undefined) params.set("loss", options.loss);
    const query = params.toString();
    return this.get(
      `/sessions/${encodeURIComponent(sid)}/recommendation${query ? `?${query}` : ""}`,
    );
  }

  postWhatif(sid: string, doses: number[], loss?: string): Promise<WhatifPayload> {
    return this.post(`/sessions/${encodeURIComponent(sid)}/whatif`, {
      doses,
      ...(loss === undefined ? {} : { loss }),
    });
  }

  getTrajectory(sid: string, hours?: number): Promise<TrajectoryPayload> {
    const query = hours === undefined ? "" : `?hours=${hours}`;
    return this.get(`/sessions/${encodeURIComponent(sid)}/trajectory${query}`);
  }
}
