export type Grid = number[][];

export type CardSource = "generated" | "simp";

export interface GalleryCard {
  id: string;
  source: CardSource;
  requestedVolfrac: number;
  penal?: number;
  rmin?: number;
  measuredVolfrac: number;
  compliance?: number;
  feasible?: boolean;
  grid: Grid;
  timestamp: number;
}

export interface JobProgress {
  iteration?: number;
  max_iters?: number;
  change?: number;
  compliance?: number;
}

export type JobState = "queued" | "running" | "done" | "failed";

export interface JobInfo {
  jobId: string;
  requestedVolfrac: number;
  penal: number;
  rmin: number;
  state: JobState;
  progress: JobProgress;
  error?: string;
}

export interface GenerateResponse {
  grids: Grid[];
  measured_volfrac: number[];
  gen_ms: number;
}

export interface JobStatusResponse {
  job_id: string;
  kind: string;
  state: JobState;
  progress: JobProgress;
  result?: {
    grid: Grid;
    compliance: number;
    iterations: number;
    converged: boolean;
    wall_ms: number;
  } | null;
  error?: string | null;
}

export interface EvaluateResponse {
  compliance: number | null;
  feasible: boolean;
  measured_volfrac: number;
}

export interface ModelInfo {
  resolution: [number, number];
  latent_dim: number;
  conditions_range: [number, number];
  training: Record<string, unknown>;
}
