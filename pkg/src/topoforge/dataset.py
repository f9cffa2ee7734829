"""Parameter-grid sweep: run SIMP per grid point, persist labeled structures.

Grid file format (bit-exact): magic "TOPO", version byte 0x01, little-endian
u32 nely, u32 nelx, then nelx*nely little-endian float32 values, row-major,
y-down. The manifest is line-oriented JSON: a header object followed by one
record object per sample.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Optional

import numpy as np

from .errors import DatasetError, ParameterError
from .fem import DensityField, LoadCase, MeshSpec
from .simp import OptimizationParams, optimize

GRID_MAGIC = b"TOPO"
GRID_VERSION = 1
MANIFEST_NAME = "manifest.jsonl"

# Full-scale grid from the generation sweep; desk profile is a reduced grid
# for CI-speed runs at 48x48.
FULL_PROFILE = dict(
    volfrac_range=(0.30, 0.70, 0.05),
    penal_range=(2.0, 4.0, 0.1),
    rmin_range=(1.5, 3.0, 0.1),
    resolution=(120, 120),
)
DESK_PROFILE = dict(
    volfrac_range=(0.30, 0.70, 0.05),
    penal_range=(2.0, 4.0, 0.5),
    rmin_range=(1.5, 3.0, 0.5),
    resolution=(48, 48),
)


def _axis_values(rng: tuple[float, float, float], name: str) -> list[float]:
    start, stop, step = rng
    if step <= 0:
        raise ParameterError(f"{name}: step must be positive, got {step}")
    if start > stop:
        raise ParameterError(f"{name}: degenerate range, start {start} > stop {stop}")
    count = int(np.floor((stop - start) / step + 1e-9)) + 1
    return [round(start + i * step, 9) for i in range(count)]


@dataclass(frozen=True)
class GridSpec:
    """Inclusive (start, stop, step) ranges for volfrac, penal and rmin."""

    volfrac_range: tuple[float, float, float] = (0.30, 0.70, 0.05)
    penal_range: tuple[float, float, float] = (2.0, 4.0, 0.1)
    rmin_range: tuple[float, float, float] = (1.5, 3.0, 0.1)
    resolution: tuple[int, int] = (120, 120)

    @classmethod
    def profile(cls, name: str) -> "GridSpec":
        if name == "full":
            return cls(**FULL_PROFILE)
        if name == "desk":
            return cls(**DESK_PROFILE)
        raise ParameterError(f"unknown profile {name!r} (expected 'desk' or 'full')")

    def axes(self) -> tuple[list[float], list[float], list[float]]:
        return (
            _axis_values(self.volfrac_range, "volfrac"),
            _axis_values(self.penal_range, "penal"),
            _axis_values(self.rmin_range, "rmin"),
        )

    def cardinality(self) -> int:
        v, p, r = self.axes()
        return len(v) * len(p) * len(r)


def enumerate_grid(spec: GridSpec) -> list[OptimizationParams]:
    """All parameter triples in lexicographic (volfrac, penal, rmin) order."""
    volfracs, penals, rmins = spec.axes()
    out = []
    for vf in volfracs:
        for p in penals:
            for r in rmins:
                out.append(OptimizationParams(volfrac=vf, penal=p, rmin=r))
    return out


def sample_id(params: OptimizationParams, nelx: int, nely: int) -> str:
    key = f"{params.volfrac:.6f}|{params.penal:.6f}|{params.rmin:.6f}|{nelx}|{nely}"
    return hashlib.sha1(key.encode()).hexdigest()[:16]


@dataclass
class SampleRecord:
    id: str
    volfrac: float
    penal: float
    rmin: float
    nelx: int
    nely: int
    compliance: float
    iterations: int
    converged: bool
    grid_file: str
    error: Optional[str] = None

    def to_json(self) -> str:
        return json.dumps(asdict(self))


@dataclass
class DatasetManifest:
    format_version: int
    mesh: dict
    load_case: str
    records: list[SampleRecord] = field(default_factory=list)

    @property
    def ids(self) -> set[str]:
        return {r.id for r in self.records}

    def save(self, path: Path) -> None:
        """Atomic write: temp file in the same directory, then rename."""
        path = Path(path)
        header = {
            "format_version": self.format_version,
            "mesh": self.mesh,
            "load_case": self.load_case,
        }
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".manifest-", suffix=".tmp")
        try:
            with os.fdopen(fd, "w") as fh:
                fh.write(json.dumps(header) + "\n")
                for rec in self.records:
                    fh.write(rec.to_json() + "\n")
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    @classmethod
    def load(cls, path: Path) -> "DatasetManifest":
        path = Path(path)
        if not path.exists():
            raise DatasetError(f"manifest not found: {path}")
        with open(path) as fh:
            lines = [ln for ln in fh.read().splitlines() if ln.strip()]
        if not lines:
            raise DatasetError(f"empty manifest: {path}")
        try:
            header = json.loads(lines[0])
            records = [SampleRecord(**json.loads(ln)) for ln in lines[1:]]
        except (json.JSONDecodeError, TypeError) as exc:
            raise DatasetError(f"corrupt manifest {path}: {exc}") from exc
        manifest = cls(
            format_version=header["format_version"],
            mesh=header["mesh"],
            load_case=header["load_case"],
            records=records,
        )
        ids = [r.id for r in records]
        if len(ids) != len(set(ids)):
            raise DatasetError(f"duplicate sample ids in {path}")
        return manifest


def write_grid(path: Path, f: DensityField) -> None:
    payload = (
        GRID_MAGIC
        + bytes([GRID_VERSION])
        + struct.pack("<II", f.nely, f.nelx)
        + f.values.astype("<f4").tobytes()
    )
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".grid-", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_grid(path: Path) -> DensityField:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DatasetError(f"cannot read grid file {path}: {exc}") from exc
    if len(raw) < 13 or raw[:4] != GRID_MAGIC:
        raise DatasetError(f"bad magic in grid file {path}")
    if raw[4] != GRID_VERSION:
        raise DatasetError(f"unsupported grid version {raw[4]} in {path}")
    nely, nelx = struct.unpack("<II", raw[5:13])
    expected = 13 + 4 * nelx * nely
    if len(raw) != expected:
        raise DatasetError(f"truncated grid file {path}: {len(raw)} bytes, expected {expected}")
    values = np.frombuffer(raw[13:], dtype="<f4").astype(np.float64).reshape(nely, nelx)
    return DensityField(int(nelx), int(nely), values)


def _run_sample(args) -> dict:
    params, nelx, nely, grid_path = args
    mesh = MeshSpec(nelx=nelx, nely=nely)
    load = LoadCase.cantilever(mesh)
    rec = dict(
        id=sample_id(params, nelx, nely),
        volfrac=params.volfrac,
        penal=params.penal,
        rmin=params.rmin,
        nelx=nelx,
        nely=nely,
    )
    try:
        fld, trace = optimize(mesh, load, params)
        write_grid(Path(grid_path), fld)
        rec.update(
            compliance=trace.final_compliance,
            iterations=trace.iterations,
            converged=trace.converged,
            grid_file=Path(grid_path).name,
            error=None,
        )
    except Exception as exc:  # record the failure, never drop the grid point
        rec.update(
            compliance=float("nan"),
            iterations=0,
            converged=False,
            grid_file="",
            error=f"{type(exc).__name__}: {exc}",
        )
    return rec


def _record_valid(rec: SampleRecord, grids_dir: Path) -> bool:
    if not rec.grid_file:
        return False
    path = grids_dir / rec.grid_file
    try:
        g = read_grid(path)
    except DatasetError:
        return False
    return (g.nelx, g.nely) == (rec.nelx, rec.nely)


def generate_dataset(
    spec: GridSpec,
    out_dir: Path,
    workers: int = 1,
    resume: bool = False,
    manifest_batch: int = 8,
    progress: Optional[Callable[[int, int], None]] = None,
) -> DatasetManifest:
    """Run SIMP on every grid point, writing grid files and a manifest.

    With resume=True, grid points whose record and grid file are already
    valid are skipped. The manifest is rewritten atomically after every
    `manifest_batch` completions, so an interrupted run leaves a loadable
    manifest behind.
    """
    out_dir = Path(out_dir)
    grids_dir = out_dir / "grids"
    grids_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = out_dir / MANIFEST_NAME

    nelx, nely = spec.resolution
    grid = enumerate_grid(spec)
    order = {sample_id(p, nelx, nely): i for i, p in enumerate(grid)}

    done: dict[str, SampleRecord] = {}
    if resume and manifest_path.exists():
        previous = DatasetManifest.load(manifest_path)
        for rec in previous.records:
            if rec.id in order and _record_valid(rec, grids_dir):
                done[rec.id] = rec

    manifest = DatasetManifest(
        format_version=1,
        mesh={"nelx": nelx, "nely": nely},
        load_case="cantilever-left-fixed-midright-load",
    )

    def flush():
        manifest.records = sorted(done.values(), key=lambda r: order[r.id])
        manifest.save(manifest_path)

    pending = [
        (p, nelx, nely, str(grids_dir / f"{sample_id(p, nelx, nely)}.topo"))
        for p in grid
        if sample_id(p, nelx, nely) not in done
    ]

    total = len(grid)
    completed = len(done)
    flush()
    if progress is not None:
        progress(completed, total)

    def consume(rec_dict: dict):
        nonlocal completed
        rec = SampleRecord(**rec_dict)
        done[rec.id] = rec
        completed += 1
        if completed % manifest_batch == 0:
            flush()
        if progress is not None:
            progress(completed, total)

    if workers > 1 and pending:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for rec_dict in pool.map(_run_sample, pending):
                consume(rec_dict)
    else:
        for args in pending:
            consume(_run_sample(args))

    flush()
    return manifest


def load_grid_for(manifest_dir: Path, rec: SampleRecord) -> DensityField:
    return read_grid(Path(manifest_dir) / "grids" / rec.grid_file)


def load_batches(
    manifest: DatasetManifest,
    manifest_dir: Path,
    batch_size: int,
    shuffle_seed: int,
    epochs: Optional[int] = 1,
    cache: bool = True,
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield (grids, volfrac labels) batches; every sample appears exactly once
    per epoch, in a seeded shuffle order. epochs=None streams forever."""
    if batch_size < 1:
        raise ParameterError(f"batch_size must be >= 1, got {batch_size}")
    manifest_dir = Path(manifest_dir)
    records = [r for r in manifest.records if r.grid_file]
    if not records:
        raise DatasetError("manifest has no usable samples")
    n = len(records)
    h = manifest.mesh["nely"]
    w = manifest.mesh["nelx"]

    grids_mem: Optional[np.ndarray] = None
    if cache and n * h * w * 4 <= 256 * 1024 * 1024:
        grids_mem = np.stack(
            [load_grid_for(manifest_dir, r).values.astype(np.float32) for r in records]
        )
    labels = np.array([[r.volfrac] for r in records], dtype=np.float32)

    rng = np.random.default_rng(shuffle_seed)
    epoch = 0
    while epochs is None or epoch < epochs:
        perm = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = perm[start: start + batch_size]
            if grids_mem is not None:
                batch = grids_mem[idx]
            else:
                batch = np.stack(
                    [
                        load_grid_for(manifest_dir, records[i]).values.astype(np.float32)
                        for i in idx
                    ]
                )
            yield batch, labels[idx]
        epoch += 1
