import { ApiClient, ApiError } from "./api.js";
import { JobTracker, pollJob } from "./jobs.js";
import { postprocess } from "./postprocess.js";
import { renderDensity, rasterSize } from "./render.js";
import {
  ExplorerState,
  annotateCompliance,
  appendCard,
  cardLabel,
  initialState,
  makeCardId,
  measuredVolfrac,
  upsertJob,
} from "./state.js";
import type { GalleryCard, Grid, JobInfo } from "./types.js";

const CELL_PX = 6;
const SLIDER_DEBOUNCE_MS = 250;

const apiBase = new URLSearchParams(location.search).get("api") ?? "";
const api = new ApiClient(apiBase);
const tracker = new JobTracker();

let state: ExplorerState = initialState();

const el = <T extends HTMLElement>(id: string): T => {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
};

const slider = el<HTMLInputElement>("volfrac-slider");
const volfracInput = el<HTMLInputElement>("volfrac-input");
const penalInput = el<HTMLInputElement>("penal-input");
const rminInput = el<HTMLInputElement>("rmin-input");
const gallery = el<HTMLDivElement>("gallery");
const jobList = el<HTMLDivElement>("jobs");
const toasts = el<HTMLDivElement>("toasts");
const postToggle = el<HTMLInputElement>("post-toggle");
const statusLine = el<HTMLSpanElement>("status-line");

function toast(message: string): void {
  const node = document.createElement("div");
  node.className = "toast";
  node.textContent = message;
  const dismiss = () => node.remove();
  node.addEventListener("click", dismiss);
  setTimeout(dismiss, 6000);
  toasts.appendChild(node);
}

function drawCard(card: GalleryCard): HTMLElement {
  const wrap = document.createElement("div");
  wrap.className = `card card-${card.source}`;
  wrap.dataset.cardId = card.id;

  const canvas = document.createElement("canvas");
  const grid = state.showPostprocessed ? postprocess(card.grid) : card.grid;
  const { width, height } = rasterSize(grid, CELL_PX);
  canvas.width = width;
  canvas.height = height;
  const ctx = canvas.getContext("2d");
  if (ctx) renderDensity(ctx, grid, CELL_PX);
  wrap.appendChild(canvas);

  const label = document.createElement("div");
  label.className = "card-label";
  label.textContent = cardLabel(card);
  wrap.appendChild(label);

  const metrics = document.createElement("div");
  metrics.className = "card-metrics";
  metrics.textContent =
    card.compliance !== undefined
      ? `compliance ${card.compliance.toFixed(3)}`
      : card.feasible === false
        ? "infeasible (disconnected)"
        : "";
  wrap.appendChild(metrics);

  if (card.source === "generated") {
    const btn = document.createElement("button");
    btn.textContent = "evaluate";
    btn.addEventListener("click", () => void evaluateCard(card));
    wrap.appendChild(btn);
  }
  return wrap;
}

function renderGallery(): void {
  gallery.replaceChildren();
  // newest first, SIMP card adjacent to the generated card it answers
  const byCondition = new Map<string, HTMLDivElement>();
  for (const card of state.gallery) {
    const key = card.requestedVolfrac.toFixed(4);
    let group = byCondition.get(key);
    if (!group) {
      group = document.createElement("div");
      group.className = "condition-group";
      const heading = document.createElement("h3");
      heading.textContent = `requested volfrac ${card.requestedVolfrac.toFixed(2)}`;
      group.appendChild(heading);
      byCondition.set(key, group);
      gallery.prepend(group);
    }
    group.appendChild(drawCard(card));
  }
}

function renderJobs(): void {
  jobList.replaceChildren();
  for (const job of Object.values(state.jobs)) {
    const node = document.createElement("div");
    node.className = `job job-${job.state}`;
    const progress =
      job.state === "running" && job.progress.iteration
        ? ` iter ${job.progress.iteration}/${job.progress.max_iters}`
        : "";
    node.textContent = `SIMP vf=${job.requestedVolfrac.toFixed(2)} penal=${job.penal} rmin=${job.rmin}: ${job.state}${progress}${job.error ? ` (${job.error})` : ""}`;
    jobList.appendChild(node);
  }
}

async function evaluateCard(card: GalleryCard): Promise<void> {
  try {
    const result = await api.evaluate(card.grid);
    state = annotateCompliance(state, card.id, result.compliance, result.feasible);
    renderGallery();
  } catch (err) {
    toast(err instanceof ApiError ? `evaluate failed: ${err.message}` : String(err));
  }
}

async function requestGenerate(volfrac: number): Promise<void> {
  statusLine.textContent = "generating...";
  try {
    const response = await api.generate(volfrac, { count: 1, seed: Date.now() % 100000 });
    const grid = response.grids[0];
    const measured = response.measured_volfrac[0];
    if (!grid || measured === undefined) throw new Error("empty generation response");
    state = appendCard(state, {
      id: makeCardId("generated"),
      source: "generated",
      requestedVolfrac: volfrac,
      measuredVolfrac: measured,
      grid,
      timestamp: Date.now(),
    });
    statusLine.textContent = `generated in ${response.gen_ms.toFixed(0)} ms`;
    renderGallery();
  } catch (err) {
    statusLine.textContent = "";
    toast(err instanceof ApiError ? `generate failed: ${err.message}` : String(err));
  }
}

async function requestSimp(volfrac: number, penal: number, rmin: number): Promise<void> {
  try {
    const { job_id } = await api.startSimp(volfrac, penal, rmin);
    const job: JobInfo = {
      jobId: job_id,
      requestedVolfrac: volfrac,
      penal,
      rmin,
      state: "queued",
      progress: {},
    };
    state = upsertJob(state, job);
    renderJobs();
    const handle = pollJob(api, job, (status) => {
      state = upsertJob(state, {
        ...job,
        state: status.state,
        progress: status.progress ?? {},
        error: status.error ?? undefined,
      });
      if (status.state === "done" && status.result) {
        const grid: Grid = status.result.grid;
        state = appendCard(state, {
          id: makeCardId("simp"),
          source: "simp",
          requestedVolfrac: volfrac,
          penal,
          rmin,
          measuredVolfrac: measuredVolfrac(grid),
          compliance: status.result.compliance,
          grid,
          timestamp: Date.now(),
        });
        tracker.finish(job_id);
        renderGallery();
      }
      renderJobs();
    });
    tracker.track(job_id, handle);
  } catch (err) {
    toast(err instanceof ApiError ? `SIMP request failed: ${err.message}` : String(err));
  }
}

let sliderTimer: ReturnType<typeof setTimeout> | undefined;

function onSliderSettled(): void {
  const volfrac = Number(slider.value);
  volfracInput.value = slider.value;
  state = { ...state, volfrac };
  if (sliderTimer) clearTimeout(sliderTimer);
  sliderTimer = setTimeout(() => void requestGenerate(volfrac), SLIDER_DEBOUNCE_MS);
}

function wireControls(): void {
  slider.addEventListener("input", onSliderSettled);
  volfracInput.addEventListener("change", () => {
    const v = Number(volfracInput.value);
    if (Number.isFinite(v) && v > 0 && v < 1) {
      state = { ...state, volfrac: v };
      void requestGenerate(v); // free entry may probe outside the trained range
    } else {
      toast("volume fraction must be in (0, 1)");
    }
  });
  el<HTMLButtonElement>("generate-btn").addEventListener("click", () =>
    void requestGenerate(state.volfrac),
  );
  el<HTMLButtonElement>("simp-btn").addEventListener("click", () => {
    const penal = Number(penalInput.value);
    const rmin = Number(rminInput.value);
    state = { ...state, penal, rmin };
    void requestSimp(state.volfrac, penal, rmin);
  });
  postToggle.addEventListener("change", () => {
    state = { ...state, showPostprocessed: postToggle.checked };
    renderGallery();
  });
  document.addEventListener("visibilitychange", () => {
    if (!document.hidden) renderJobs(); // pending jobs keep polling; refresh view
  });
}

async function boot(): Promise<void> {
  wireControls();
  try {
    const info = await api.modelInfo();
    const [h, w] = info.resolution;
    el<HTMLSpanElement>("model-line").textContent =
      `model ${w}x${h}, trained conditions ${info.conditions_range[0]}-${info.conditions_range[1]}`;
  } catch (err) {
    toast("service unreachable: start it with `topoforge serve --model ...`");
  }
}

void boot();
