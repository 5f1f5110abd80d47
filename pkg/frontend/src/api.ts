/** Typed client for the model service. The UI never computes model math:
 * every displayed number comes from one of these responses. */

export interface PredictorInfo {
  name: string;
  group: string;
  kind: unknown;
  missing: Record<string, number>;
}

export interface SchemaInfo {
  M: number;
  predictors: PredictorInfo[];
  groups: Record<string, string[]>;
  species: string[];
}

export interface EvalResult {
  mean_auc: number;
  n_species: number;
  mask: string;
  per_species_auc?: Record<string, number>;
}

export interface PredictResult {
  mask: string;
  species: string[];
  scores: number[][];
}

export interface ShapleyResult {
  players: string[];
  values: number[];
  estimator: string;
  n_value_evaluations: number;
  baseline_value: number;
  full_value?: number;
  n_squares?: number;
  n_samples?: number;
  trace?: number[][];
}

export interface ShapleyRequest {
  target: "performance" | "prediction";
  groups?: boolean;
  sample_id?: string;
  species?: string;
  estimator?: "exact" | "stratified" | "uniform";
  n_squares?: number;
  n_samples?: number;
  seed?: number;
}

export class ServiceError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
  }
}

async function parseError(resp: Response): Promise<never> {
  let detail = resp.statusText;
  try {
    const body = await resp.json();
    if (body && typeof body.detail === "string") detail = body.detail;
  } catch {
    /* non-JSON error body */
  }
  throw new ServiceError(resp.status, detail);
}

export class ApiClient {
  constructor(public baseUrl: string, private fetchFn: typeof fetch = fetch) {}

  private async get<T>(path: string, signal?: AbortSignal): Promise<T> {
    const resp = await this.fetchFn(`${this.baseUrl}${path}`, { signal });
    if (!resp.ok) await parseError(resp);
    return resp.json() as Promise<T>;
  }

  private async post<T>(path: string, body: unknown, signal?: AbortSignal): Promise<T> {
    const resp = await this.fetchFn(`${this.baseUrl}${path}`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
      signal,
    });
    if (!resp.ok) await parseError(resp);
    return resp.json() as Promise<T>;
  }

  health(signal?: AbortSignal): Promise<{ status: string }> {
    return this.get("/health", signal);
  }

  schema(signal?: AbortSignal): Promise<SchemaInfo> {
    return this.get("/schema", signal);
  }

  evalMask(mask: string, includePerSpecies = false, signal?: AbortSignal): Promise<EvalResult> {
    return this.post("/eval", { mask, include_per_species: includePerSpecies }, signal);
  }

  predict(mask: string, species: string[], sampleIds: string[], signal?: AbortSignal): Promise<PredictResult> {
    return this.post("/predict", { mask, species, sample_ids: sampleIds }, signal);
  }

  shapley(req: ShapleyRequest, signal?: AbortSignal): Promise<ShapleyResult> {
    return this.post("/shapley", req, signal);
  }
}
