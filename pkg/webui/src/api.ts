/**
 * Typed client for the retrieval service JSON API.
 *
 * The client is a thin fetch wrapper: no retries, no caching, no metric
 * math. Everything the UI shows comes back from these four endpoints.
 */

export interface SearchResult {
  id: string;
  score: number;
  image_url: string;
}

export interface SearchResponse {
  results: SearchResult[];
}

/** One tile of a comparison session. Carries no engine provenance. */
export interface CompareSlot {
  slot_id: string;
  screenshot_id: string;
  image_url: string;
}

export interface CompareResponse {
  session_id: string;
  query: string;
  slots: CompareSlot[];
}

export interface EngineMetrics {
  mrr: number;
  p_at: Record<string, number>;
  hit_at: Record<string, number>;
}

export interface SubmitResponse {
  ack: boolean;
  per_engine_metrics: Record<string, EngineMetrics>;
}

export interface MetricsResponse {
  engines: Record<string, unknown>;
  table: string;
}

/** Non-2xx response, with the service's detail string when present. */
export class ApiError extends Error {
  readonly status: number;

  constructor(status: number, detail: string) {
    super(detail);
    this.name = "ApiError";
    this.status = status;
  }
}

async function parseError(res: Response): Promise<ApiError> {
  let detail = `${res.status} ${res.statusText}`;
  try {
    const body = (await res.json()) as { detail?: unknown };
    if (typeof body.detail === "string") detail = body.detail;
    else if (body.detail !== undefined) detail = JSON.stringify(body.detail);
  } catch {
    // non-JSON error body: keep the status line
  }
  return new ApiError(res.status, detail);
}

export class ServiceClient {
  constructor(private readonly baseUrl: string = "") {}

  private async post<T>(path: string, body: unknown): Promise<T> {
    const res = await fetch(this.baseUrl + path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!res.ok) throw await parseError(res);
    return (await res.json()) as T;
  }

  search(query: string, engine: string, k: number): Promise<SearchResponse> {
    return this.post<SearchResponse>("/search", { query, engine, k });
  }

  compare(query: string, engines: string[], k: number, seed?: number): Promise<CompareResponse> {
    const body: Record<string, unknown> = { query, engines, k };
    if (seed !== undefined) body.seed = seed;
    return this.post<CompareResponse>("/compare", body);
  }

  submit(sessionId: string, selectedSlotIds: string[], evaluatorId: string): Promise<SubmitResponse> {
    return this.post<SubmitResponse>(`/sessions/${encodeURIComponent(sessionId)}/submit`, {
      selected_slot_ids: selectedSlotIds,
      evaluator_id: evaluatorId,
    });
  }

  async metrics(engine?: string): Promise<MetricsResponse> {
    const suffix = engine === undefined ? "" : `?engine=${encodeURIComponent(engine)}`;
    const res = await fetch(`${this.baseUrl}/metrics${suffix}`);
    if (!res.ok) throw await parseError(res);
    return (await res.json()) as MetricsResponse;
  }
}
