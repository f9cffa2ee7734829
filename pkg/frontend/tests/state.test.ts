import { describe, expect, it } from "vitest";

import {
  annotateCompliance,
  appendCard,
  cardLabel,
  galleryPairs,
  initialState,
  measuredVolfrac,
  pendingJobs,
  upsertJob,
} from "../src/state.js";
import type { GalleryCard, JobInfo } from "../src/types.js";

const card = (over: Partial<GalleryCard> = {}): GalleryCard => ({
  id: over.id ?? "c1",
  source: "generated",
  requestedVolfrac: 0.5,
  measuredVolfrac: 0.48,
  grid: [[1, 0], [0, 1]],
  timestamp: 1,
  ...over,
});

describe("gallery state", () => {
  it("appends without mutating previous state", () => {
    const s0 = initialState();
    const s1 = appendCard(s0, card());
    expect(s0.gallery).toHaveLength(0);
    expect(s1.gallery).toHaveLength(1);
  });

  it("gallery is append-only across transitions", () => {
    let s = initialState();
    s = appendCard(s, card({ id: "a" }));
    s = appendCard(s, card({ id: "b" }));
    s = annotateCompliance(s, "a", 12.5, true);
    expect(s.gallery.map((c) => c.id)).toEqual(["a", "b"]);
    expect(s.gallery[0]?.compliance).toBe(12.5);
  });

  it("pairs simp cards with generated cards for the same condition", () => {
    let s = initialState();
    s = appendCard(s, card({ id: "g1", requestedVolfrac: 0.5 }));
    s = appendCard(s, card({ id: "g2", requestedVolfrac: 0.4 }));
    s = appendCard(s, card({ id: "s1", source: "simp", requestedVolfrac: 0.5 }));
    const pairs = galleryPairs(s);
    expect(pairs).toHaveLength(2);
    const group05 = pairs.find((g) => g[0]?.requestedVolfrac === 0.5)!;
    expect(group05.map((c) => c.id)).toEqual(["g1", "s1"]);
  });

  it("every card label shows requested and measured volfrac and the source", () => {
    const label = cardLabel(card({ requestedVolfrac: 0.4, measuredVolfrac: 0.412 }));
    expect(label).toContain("0.40");
    expect(label).toContain("0.412");
    expect(label).toContain("generated");
  });

  it("computes measured volfrac of a grid", () => {
    expect(measuredVolfrac([[1, 1], [0, 0]])).toBe(0.5);
    expect(measuredVolfrac([[1]])).toBe(1);
  });
});

describe("job state", () => {
  const job = (state: JobInfo["state"]): JobInfo => ({
    jobId: "j1",
    requestedVolfrac: 0.5,
    penal: 3,
    rmin: 1.5,
    state,
    progress: {},
  });

  it("transitions only forward", () => {
    let s = initialState();
    s = upsertJob(s, job("running"));
    s = upsertJob(s, job("queued")); // stale poll result must not regress
    expect(s.jobs["j1"]?.state).toBe("running");
    s = upsertJob(s, job("done"));
    expect(s.jobs["j1"]?.state).toBe("done");
  });

  it("tracks pending jobs", () => {
    let s = initialState();
    s = upsertJob(s, job("running"));
    expect(pendingJobs(s)).toHaveLength(1);
    s = upsertJob(s, job("done"));
    expect(pendingJobs(s)).toHaveLength(0);
  });
});
