import type { ApiClient } from "./api.js";
import type { JobInfo, JobStatusResponse } from "./types.js";

export const DEFAULT_POLL_INTERVAL_MS = 400;

export interface PollHandle {
  stop(): void;
}

type Scheduler = {
  setInterval(fn: () => void, ms: number): ReturnType<typeof setInterval>;
  clearInterval(id: ReturnType<typeof setInterval>): void;
};

const realScheduler: Scheduler = {
  setInterval: (fn, ms) => setInterval(fn, ms),
  clearInterval: (id) => clearInterval(id),
};

/** Poll a SIMP job until it reaches a terminal state. Never blocks the UI:
 *  each tick is one fetch, and overlapping ticks are skipped. */
export function pollJob(
  api: ApiClient,
  job: Pick<JobInfo, "jobId" | "requestedVolfrac" | "penal" | "rmin">,
  onUpdate: (status: JobStatusResponse) => void,
  intervalMs: number = DEFAULT_POLL_INTERVAL_MS,
  scheduler: Scheduler = realScheduler,
): PollHandle {
  let inFlight = false;
  let stopped = false;

  const tick = async () => {
    if (inFlight || stopped) return;
    inFlight = true;
    try {
      const status = await api.getJob(job.jobId);
      onUpdate(status);
      if (status.state === "done" || status.state === "failed") {
        stop();
      }
    } catch {
      // transient poll failures are retried on the next tick
    } finally {
      inFlight = false;
    }
  };

  const id = scheduler.setInterval(() => void tick(), intervalMs);
  const stop = () => {
    if (!stopped) {
      stopped = true;
      scheduler.clearInterval(id);
    }
  };
  void tick();
  return { stop };
}

/** Tracks live pollers so they can be re-kicked after a tab refocus. */
export class JobTracker {
  private handles = new Map<string, PollHandle>();

  track(jobId: string, handle: PollHandle): void {
    this.handles.get(jobId)?.stop();
    this.handles.set(jobId, handle);
  }

  finish(jobId: string): void {
    this.handles.get(jobId)?.stop();
    this.handles.delete(jobId);
  }

  get active(): string[] {
    return [...this.handles.keys()];
  }
}
