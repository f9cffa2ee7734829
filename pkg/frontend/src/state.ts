import type { GalleryCard, Grid, JobInfo, JobState } from "./types.js";

/** Explorer state: append-only gallery plus live job tracking.
 *  All transitions are pure so the view is reconstructible from state alone. */
export interface ExplorerState {
  volfrac: number;
  penal: number;
  rmin: number;
  gallery: GalleryCard[];
  jobs: Record<string, JobInfo>;
  showPostprocessed: boolean;
}

export const initialState = (): ExplorerState => ({
  volfrac: 0.5,
  penal: 3.0,
  rmin: 1.5,
  gallery: [],
  jobs: {},
  showPostprocessed: false,
});

let cardCounter = 0;

export function makeCardId(source: string): string {
  cardCounter += 1;
  return `${source}-${cardCounter}`;
}

export function appendCard(state: ExplorerState, card: GalleryCard): ExplorerState {
  return { ...state, gallery: [...state.gallery, card] };
}

export function annotateCompliance(
  state: ExplorerState,
  cardId: string,
  compliance: number | null,
  feasible: boolean,
): ExplorerState {
  return {
    ...state,
    gallery: state.gallery.map((c) =>
      c.id === cardId ? { ...c, compliance: compliance ?? undefined, feasible } : c,
    ),
  };
}

const JOB_STATE_ORDER: Record<JobState, number> = {
  queued: 0,
  running: 1,
  done: 2,
  failed: 2,
};

export function upsertJob(state: ExplorerState, job: JobInfo): ExplorerState {
  const existing = state.jobs[job.jobId];
  if (existing && JOB_STATE_ORDER[job.state] < JOB_STATE_ORDER[existing.state]) {
    return state; // states only move forward
  }
  return { ...state, jobs: { ...state.jobs, [job.jobId]: job } };
}

export function pendingJobs(state: ExplorerState): JobInfo[] {
  return Object.values(state.jobs).filter(
    (j) => j.state === "queued" || j.state === "running",
  );
}

/** Cards grouped for display: SIMP results sit beside the generated cards
 *  that requested the same volume fraction (the live side-by-side table). */
export function galleryPairs(state: ExplorerState): GalleryCard[][] {
  const groups = new Map<string, GalleryCard[]>();
  for (const card of state.gallery) {
    const key = card.requestedVolfrac.toFixed(4);
    const group = groups.get(key);
    if (group) {
      group.push(card);
    } else {
      groups.set(key, [card]);
    }
  }
  return [...groups.values()];
}

export function cardLabel(card: GalleryCard): string {
  const requested = card.requestedVolfrac.toFixed(2);
  const measured = card.measuredVolfrac.toFixed(3);
  return `${card.source} | requested ${requested} | measured ${measured}`;
}

export function measuredVolfrac(grid: Grid): number {
  let total = 0;
  let count = 0;
  for (const row of grid) {
    for (const v of row) {
      total += v;
      count += 1;
    }
  }
  return count === 0 ? 0 : total / count;
}
