import type {
  EvaluateResponse,
  GenerateResponse,
  Grid,
  JobStatusResponse,
  ModelInfo,
} from "./types.js";

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private baseUrl: string = "",
    private fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchImpl(`${this.baseUrl}${path}`, init);
    } catch (err) {
      throw new ApiError(0, err instanceof Error ? err.message : "network error");
    }
    const body = await response.json().catch(() => ({}));
    if (!response.ok) {
      const message =
        typeof body === "object" && body !== null && "error" in body
          ? String((body as { error: unknown }).error)
          : `HTTP ${response.status}`;
      throw new ApiError(response.status, message);
    }
    return body as T;
  }

  private post<T>(path: string, payload: unknown): Promise<T> {
    return this.request<T>(path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(payload),
    });
  }

  generate(volfrac: number, opts: { count?: number; seed?: number; post?: boolean } = {}) {
    return this.post<GenerateResponse>("/api/generate", { volfrac, ...opts });
  }

  startSimp(volfrac: number, penal: number, rmin: number) {
    return this.post<{ job_id: string }>("/api/simp", { volfrac, penal, rmin });
  }

  getJob(jobId: string) {
    return this.request<JobStatusResponse>(`/api/jobs/${jobId}`);
  }

  evaluate(grid: Grid) {
    return this.post<EvaluateResponse>("/api/evaluate", { grid });
  }

  modelInfo() {
    return this.request<ModelInfo>("/api/model/info");
  }
}
