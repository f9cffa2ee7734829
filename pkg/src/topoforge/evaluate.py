"""Model evaluation: conditional fidelity, FEA-scored compliance of generated
structures, diversity/mode-collapse detection, and timing against SIMP."""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ParameterError, SingularSystemError
from .fem import X_MIN, DensityField, LoadCase, MeshSpec, assemble_solve
from .gan import ConditionedNetwork, GanConfig, load_generator, sample
from .postprocess import PostprocessConfig, gaussian_smooth, measured_volfrac, threshold
from .simp import OptimizationParams, optimize

# Mode-collapse operationalization: conditions are ignored (tiny spread of
# achieved volume fractions across requested conditions) AND samples within a
# condition barely differ.
COLLAPSE_ACROSS_STD = 0.02
COLLAPSE_WITHIN_DIVERSITY = 0.05

# Achieved compliance beyond this multiple of the all-solid structure means
# the load is effectively disconnected from the support.
DISCONNECTED_FACTOR = 1e3

INFEASIBLE = float("inf")


@dataclass
class ConditionStats:
    requested: float
    measured_raw_mean: float
    measured_raw_std: float
    measured_thresh_mean: float
    measured_thresh_std: float
    measured_smooth_mean: float
    measured_smooth_std: float
    abs_error_raw: float
    abs_error_post: float
    diversity: float
    mean_compliance: Optional[float] = None
    simp_compliance: Optional[float] = None
    infeasible_count: int = 0
    gen_seconds: Optional[float] = None
    simp_seconds: Optional[float] = None
    speedup: Optional[float] = None


@dataclass
class EvalReport:
    conditions: list[ConditionStats] = field(default_factory=list)
    across_condition_std: float = float("nan")
    mean_within_diversity: float = float("nan")
    mode_collapse: bool = False
    notes: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {
                "conditions": [asdict(c) for c in self.conditions],
                "across_condition_std": self.across_condition_std,
                "mean_within_diversity": self.mean_within_diversity,
                "mode_collapse": self.mode_collapse,
                "notes": self.notes,
            },
            indent=2,
            default=lambda v: None if isinstance(v, float) and math.isnan(v) else v,
        )

    def save(self, path: Path) -> None:
        Path(path).write_text(self.to_json())


def diversity(samples: Sequence[DensityField]) -> float:
    """Mean pairwise L2 distance normalized by grid size; 0 for identical
    samples, 1 for complementary binary fields."""
    if len(samples) < 2:
        raise ParameterError("diversity needs at least 2 samples")
    flats = [s.values.ravel() for s in samples]
    n = len(flats)
    size = flats[0].size
    total = 0.0
    pairs = 0
    for i in range(n):
        for j in range(i + 1, n):
            total += np.linalg.norm(flats[i] - flats[j]) / math.sqrt(size)
            pairs += 1
    return total / pairs


def compliance_eval(
    field_: DensityField,
    mesh: MeshSpec,
    load: LoadCase,
    threshold_value: float = 0.5,
    solid_compliance: Optional[float] = None,
) -> float:
    """FEA score of a generated structure: binarize, floor void at x_min,
    solve. Returns inf when the system is singular or the load is effectively
    disconnected (compliance over 1e3x the all-solid structure)."""
    binary = threshold(field_, threshold_value)
    floored = np.where(binary.values > 0.5, 1.0, X_MIN)
    try:
        result = assemble_solve(mesh, DensityField(mesh.nelx, mesh.nely, floored), 3.0, load)
    except SingularSystemError:
        return INFEASIBLE
    if solid_compliance is None:
        solid_compliance = assemble_solve(
            mesh, DensityField.uniform(mesh.nelx, mesh.nely, 1.0), 3.0, load
        ).compliance
    if result.compliance > DISCONNECTED_FACTOR * solid_compliance:
        return INFEASIBLE
    return result.compliance


class _CheckpointSampler:
    """Default sampler: draws from a trained generator checkpoint."""

    def __init__(self, checkpoint):
        if isinstance(checkpoint, (str, Path)):
            self.gen_cfg = load_generator(checkpoint)
        else:
            self.gen_cfg = checkpoint
        self.resolution = self.gen_cfg[1].resolution

    def __call__(self, volfrac: float, count: int, seed: int):
        return sample(self.gen_cfg, volfrac, count=count, seed=seed)


def condition_fidelity(
    checkpoint,
    conditions: Sequence[float],
    n_per_condition: int = 8,
    seed: int = 0,
    post: PostprocessConfig = PostprocessConfig(),
    sampler=None,
) -> EvalReport:
    """Per-condition fidelity of a generator: measured volume fractions raw,
    after thresholding, and after smoothing, plus the mode-collapse verdict.

    `sampler(volfrac, count, seed) -> GenerationResult` may replace the
    checkpoint (used for stub generators in tests)."""
    if sampler is None:
        sampler = _CheckpointSampler(checkpoint)
    report = EvalReport()
    post_means = []
    diversities = []
    for idx, cond in enumerate(conditions):
        result = sampler(cond, n_per_condition, seed + 1000 * idx)
        raw = [measured_volfrac(f) for f in result.fields]
        thresholded = [threshold(f, post.threshold) for f in result.fields]
        thresh = [measured_volfrac(f) for f in thresholded]
        smooth = [
            measured_volfrac(gaussian_smooth(f, post.kernel_size, post.sigma))
            for f in thresholded
        ]
        div = diversity(thresholded) if len(thresholded) >= 2 else 0.0
        stats = ConditionStats(
            requested=cond,
            measured_raw_mean=float(np.mean(raw)),
            measured_raw_std=float(np.std(raw)),
            measured_thresh_mean=float(np.mean(thresh)),
            measured_thresh_std=float(np.std(thresh)),
            measured_smooth_mean=float(np.mean(smooth)),
            measured_smooth_std=float(np.std(smooth)),
            abs_error_raw=float(np.mean([abs(v - cond) for v in raw])),
            abs_error_post=float(np.mean([abs(v - cond) for v in thresh])),
            diversity=float(div),
            gen_seconds=result.median_seconds,
        )
        report.conditions.append(stats)
        post_means.append(stats.measured_thresh_mean)
        diversities.append(div)
    report.across_condition_std = float(np.std(post_means))
    report.mean_within_diversity = float(np.mean(diversities))
    report.mode_collapse = bool(
        report.across_condition_std < COLLAPSE_ACROSS_STD
        and report.mean_within_diversity < COLLAPSE_WITHIN_DIVERSITY
    )
    return report


def compliance_comparison(
    report: EvalReport,
    checkpoint,
    mesh: MeshSpec,
    load: LoadCase,
    manifest=None,
    manifest_dir: Optional[Path] = None,
    n_per_condition: int = 4,
    seed: int = 500,
    sampler=None,
) -> EvalReport:
    """Annotate a fidelity report with FEA compliance of generated structures
    and, when a dataset manifest is given, the matching SIMP compliance."""
    if sampler is None:
        sampler = _CheckpointSampler(checkpoint)
    solid = assemble_solve(
        mesh, DensityField.uniform(mesh.nelx, mesh.nely, 1.0), 3.0, load
    ).compliance
    for idx, stats in enumerate(report.conditions):
        result = sampler(stats.requested, n_per_condition, seed + 1000 * idx)
        scores = [
            compliance_eval(f, mesh, load, solid_compliance=solid) for f in result.fields
        ]
        finite = [s for s in scores if math.isfinite(s)]
        stats.infeasible_count = len(scores) - len(finite)
        stats.mean_compliance = float(np.mean(finite)) if finite else INFEASIBLE
        if manifest is not None:
            matches = [
                r for r in manifest.records
                if abs(r.volfrac - stats.requested) < 1e-9 and r.grid_file
            ]
            if matches:
                stats.simp_compliance = float(np.mean([r.compliance for r in matches]))
    report.notes["solid_compliance"] = solid
    return report


def timing_comparison(
    checkpoint,
    params_list: Sequence[OptimizationParams],
    mesh: MeshSpec,
    load: LoadCase,
    repeats: int = 5,
    seed: int = 0,
    sampler=None,
) -> list[dict]:
    """Median wall-clock of single-structure generation vs a full SIMP run,
    over `repeats` repetitions per condition."""
    if repeats < 1:
        raise ParameterError("repeats must be >= 1")
    if sampler is None:
        sampler = _CheckpointSampler(checkpoint)
    rows = []
    for params in params_list:
        gen_times = []
        for r in range(repeats):
            t0 = time.perf_counter()
            sampler(params.volfrac, 1, seed + r)
            gen_times.append(time.perf_counter() - t0)
        simp_times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            optimize(mesh, load, params)
            simp_times.append(time.perf_counter() - t0)
        gen_med = float(np.median(gen_times))
        simp_med = float(np.median(simp_times))
        rows.append(
            {
                "volfrac": params.volfrac,
                "penal": params.penal,
                "rmin": params.rmin,
                "gen_seconds": gen_med,
                "simp_seconds": simp_med,
                "speedup": simp_med / gen_med,
            }
        )
    return rows


def render_table(report: EvalReport, timing_rows: Optional[list[dict]] = None) -> str:
    """Text table mirroring the side-by-side generator-vs-SIMP comparison."""
    lines = []
    header = (
        f"{'vol_frac':>9} | {'measured':>9} | {'gen c':>10} | {'simp c':>10} | "
        f"{'gen s':>8} | {'simp s':>9} | {'speedup':>8}"
    )
    lines.append(header)
    lines.append("-" * len(header))
    timing_by_vf = {r["volfrac"]: r for r in (timing_rows or [])}
    for c in report.conditions:
        t = timing_by_vf.get(c.requested, {})
        if c.mean_compliance is None:
            gen_c = "-"
        elif c.mean_compliance == INFEASIBLE:
            gen_c = "inf"
        else:
            gen_c = f"{c.mean_compliance:.3f}"
        simp_c = "-" if c.simp_compliance is None else f"{c.simp_compliance:.3f}"
        gen_s = t.get("gen_seconds", c.gen_seconds)
        gen_s_txt = f"{gen_s:.3f}" if gen_s is not None else "-"
        simp_s_txt = f"{t['simp_seconds']:.3f}" if "simp_seconds" in t else "-"
        speed_txt = f"{t['speedup']:.1f}x" if "speedup" in t else "-"
        lines.append(
            f"{c.requested:>9.2f} | {c.measured_thresh_mean:>9.3f} | {gen_c:>10} | "
            f"{simp_c:>10} | {gen_s_txt:>8} | {simp_s_txt:>9} | {speed_txt:>8}"
        )
    verdict = "MODE COLLAPSE" if report.mode_collapse else "no collapse"
    lines.append(
        f"across-condition std {report.across_condition_std:.4f}, "
        f"within-condition diversity {report.mean_within_diversity:.4f} -> {verdict}"
    )
    return "\n".join(lines)


def write_pgm(field_: DensityField, path: Path) -> None:
    """Binary PGM dump; solid material renders black."""
    gray = np.round((1.0 - np.clip(field_.values, 0.0, 1.0)) * 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{field_.nelx} {field_.nely}\n255\n".encode())
        fh.write(gray.tobytes())
