"""HTTP service for the design explorer: synchronous generation, asynchronous
SIMP jobs with polling, FEA scoring of arbitrary grids, and model info."""
from __future__ import annotations

import threading
import time
import uuid
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field as dc_field
from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .dataset import DatasetManifest
from .errors import TopoforgeError
from .fem import DensityField, LoadCase, MeshSpec, assemble_solve, X_MIN
from .gan import GanConfig, TRAINED_CONDITION_RANGE, load_generator, sample
from .postprocess import PostprocessConfig, measured_volfrac, postprocess
from .simp import OptimizationParams, optimize

SIMP_WORKERS = 2


class GenerateRequest(BaseModel):
    volfrac: float
    count: int = Field(default=1, ge=1, le=64)
    seed: int = 0
    post: bool = False


class SimpRequest(BaseModel):
    volfrac: float = Field(gt=0.0, lt=1.0)
    penal: float = Field(ge=1.0)
    rmin: float = Field(gt=0.0)


class EvaluateRequest(BaseModel):
    grid: list[list[float]]


@dataclass
class JobStatus:
    job_id: str
    kind: str
    state: str = "queued"            # queued -> running -> done | failed
    progress: dict = dc_field(default_factory=dict)
    result: Optional[dict] = None
    error: Optional[str] = None


class JobTable:
    """Bounded worker pool plus a lock-guarded status map."""

    def __init__(self, workers: int = SIMP_WORKERS):
        self._pool = ThreadPoolExecutor(max_workers=workers)
        self._jobs: dict[str, JobStatus] = {}
        self._lock = threading.Lock()

    def create(self, kind: str) -> JobStatus:
        job = JobStatus(job_id=uuid.uuid4().hex[:12], kind=kind)
        with self._lock:
            self._jobs[job.job_id] = job
        return job

    def get(self, job_id: str) -> Optional[JobStatus]:
        with self._lock:
            return self._jobs.get(job_id)

    def update(self, job_id: str, **changes) -> None:
        with self._lock:
            job = self._jobs[job_id]
            for k, v in changes.items():
                setattr(job, k, v)

    def submit(self, job: JobStatus, fn) -> None:
        self._pool.submit(fn)


def create_app(model_path: Path, dataset_dir: Optional[Path] = None) -> FastAPI:
    gen_cfg = load_generator(model_path)
    cfg: GanConfig = gen_cfg[1]
    h, w = cfg.resolution
    mesh = MeshSpec(nelx=w, nely=h)
    load = LoadCase.cantilever(mesh)
    manifest = None
    if dataset_dir is not None:
        manifest = DatasetManifest.load(Path(dataset_dir) / "manifest.jsonl")

    app = FastAPI(title="topoforge")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    jobs = JobTable()
    model_lock = threading.Lock()  # layer caches make forward stateful

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        details = [
            {"field": ".".join(str(p) for p in err["loc"]), "message": err["msg"]}
            for err in exc.errors()
        ]
        return JSONResponse(status_code=400, content={"error": "invalid request", "details": details})

    @app.exception_handler(TopoforgeError)
    async def domain_handler(request: Request, exc: TopoforgeError):
        return JSONResponse(
            status_code=500,
            content={"error": type(exc).__name__, "message": str(exc)},
        )

    @app.get("/api/model/info")
    def model_info():
        return {
            "resolution": [h, w],
            "latent_dim": cfg.latent_dim,
            "conditions_range": list(TRAINED_CONDITION_RANGE),
            "training": {
                "lr": cfg.lr,
                "clip_c": cfg.clip_c,
                "n_critic": cfg.n_critic,
                "batch_size": cfg.batch_size,
                "critic_mode": cfg.critic_mode,
                "base_channels": cfg.base_channels,
                "seed": cfg.seed,
            },
        }

    @app.post("/api/generate")
    def generate(req: GenerateRequest):
        t0 = time.perf_counter()
        with model_lock, warnings.catch_warnings():
            warnings.simplefilter("ignore")  # out-of-range condition warns, not fails
            result = sample(gen_cfg, req.volfrac, count=req.count, seed=req.seed)
        fields = result.fields
        if req.post:
            fields = [postprocess(f, PostprocessConfig()) for f in fields]
        return {
            "grids": [f.values.tolist() for f in fields],
            "measured_volfrac": [measured_volfrac(f) for f in fields],
            "gen_ms": (time.perf_counter() - t0) * 1000.0,
        }

    @app.post("/api/simp")
    def start_simp(req: SimpRequest):
        params = OptimizationParams(volfrac=req.volfrac, penal=req.penal, rmin=req.rmin)
        job = jobs.create("simp")

        def run():
            jobs.update(job.job_id, state="running")
            t0 = time.perf_counter()

            def on_iteration(it, rec):
                jobs.update(
                    job.job_id,
                    progress={
                        "iteration": it,
                        "max_iters": params.max_iters,
                        "change": rec.change,
                        "compliance": rec.compliance,
                    },
                )

            try:
                field, trace = optimize(mesh, load, params, callback=on_iteration)
                jobs.update(
                    job.job_id,
                    state="done",
                    result={
                        "grid": field.values.tolist(),
                        "compliance": trace.final_compliance,
                        "iterations": trace.iterations,
                        "converged": trace.converged,
                        "wall_ms": trace.wall_seconds * 1000.0,
                    },
                )
            except Exception as exc:
                jobs.update(job.job_id, state="failed", error=f"{type(exc).__name__}: {exc}")

        jobs.submit(job, run)
        return {"job_id": job.job_id}

    @app.get("/api/jobs/{job_id}")
    def job_status(job_id: str):
        job = jobs.get(job_id)
        if job is None:
            return JSONResponse(status_code=404, content={"error": f"unknown job {job_id}"})
        return asdict(job)

    @app.post("/api/evaluate")
    def evaluate(req: EvaluateRequest):
        arr = np.asarray(req.grid, dtype=np.float64)
        if arr.ndim != 2 or arr.shape != (h, w):
            return JSONResponse(
                status_code=400,
                content={"error": f"grid must be {h}x{w} (rows x cols), got {list(arr.shape)}"},
            )
        field = DensityField(w, h, np.clip(arr, 0.0, 1.0))
        from .evaluate import compliance_eval

        compliance = compliance_eval(field, mesh, load)
        return {
            "compliance": compliance if np.isfinite(compliance) else None,
            "feasible": bool(np.isfinite(compliance)),
            "measured_volfrac": measured_volfrac(field),
        }

    return app
