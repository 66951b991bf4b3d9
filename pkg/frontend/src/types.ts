/** JSON payload shapes served by the dosing service (hepdose.api/v1).
 *
 * These mirror the service responses field-for-field; the console renders
 * them verbatim and never recomputes model quantities client-side.
 */

export interface SessionConfig {
  state_dir: string;
  noise_scale: number;
  scenario_count: number;
  k_mesh_points: number;
  loss: string;
  horizon: number;
  budget_seconds: number;
  trajectory_hours: number;
}

export interface ObservationRow {
  hour: number;
  aptt: number;
}

export interface DoseRow {
  hour: number;
  dose: number;
}

export interface PlanPayload {
  time: number;
  horizon: number;
  doses: number[];
  expected_loss: number;
  scenario_losses: Array<number | null>;
}

export interface SessionViewPayload {
  schema: string;
  session_id: string;
  config: SessionConfig;
  observations: ObservationRow[];
  doses: DoseRow[];
  n_observations: number;
  n_events: number;
  low_information: boolean;
  last_plan: PlanPayload | null;
}

export interface CreateSessionPayload {
  schema: string;
  session_id: string;
  config: SessionConfig;
}

export interface ObservationAccepted {
  schema: string;
  accepted: boolean;
  n_observations: number;
  low_information: boolean;
}

export interface DoseAccepted {
  schema: string;
  accepted: boolean;
  n_dose_hours: number;
}

export interface ScenarioWeightRow {
  index: number;
  alpha: number;
  b: number;
  k: number | null;
  yb: number | null;
  weight: number;
  feasible: boolean;
}

export interface EstimatePayload {
  schema: string;
  n_observations: number;
  low_information: boolean;
  map: {
    log_posterior: number;
    alpha: number;
    b: number;
    k: number | null;
    yb: number | null;
    y0: number | null;
    yb0: number | null;
  };
  scenario_weights: ScenarioWeightRow[];
}

export interface RecommendationPayload {
  schema: string;
  plan: PlanPayload;
  loss: string;
  low_information: boolean;
  scenario_weights: ScenarioWeightRow[];
  elapsed_s: number;
}

export interface WhatifScenarioRow {
  index: number;
  alpha: number;
  b: number;
  k: number | null;
  yb: number | null;
  weight: number;
  loss: number;
  y: number[];
}

export interface WhatifPayload {
  schema: string;
  candidate: number[];
  loss: string;
  low_information: boolean;
  expected_loss: number;
  hours: number[];
  scenarios: WhatifScenarioRow[];
}

export interface TrajectoryPayload {
  schema: string;
  hours: number[];
  low_information: boolean;
  mean: number[];
  band: { quantiles: number[]; low: number[]; high: number[] };
  therapeutic: { low: number; high: number };
  scenario_weights: ScenarioWeightRow[];
  scenarios: WhatifScenarioRow[];
}

export interface FieldError {
  field: string;
  message: string;
}

export interface ErrorPayload {
  schema?: string;
  error: string;
  fields?: FieldError[];
  stage?: string;
  elapsed_s?: number;
  budget_s?: number;
}
