"""Compliance-minimizing SIMP loop: FEA -> sensitivity -> filter -> OC update."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from scipy.sparse import coo_matrix

from .errors import NumericError, ParameterError, ShapeError
from .fem import (
    X_MIN,
    DensityField,
    LoadCase,
    MeshSpec,
    assemble_solve,
    compliance_sensitivity,
)


@dataclass(frozen=True)
class OptimizationParams:
    """Volume fraction, penalization, filter radius and loop settings."""

    volfrac: float
    penal: float
    rmin: float
    move_limit: float = 0.2
    change_tol: float = 0.01
    max_iters: int = 200

    def __post_init__(self):
        if not 0 < self.volfrac < 1:
            raise ParameterError(f"volfrac must be in (0, 1), got {self.volfrac}")
        if self.penal < 1:
            raise ParameterError(f"penal must be >= 1, got {self.penal}")
        if self.rmin <= 0:
            raise ParameterError(f"rmin must be > 0, got {self.rmin}")
        if not 0 < self.move_limit <= 1:
            raise ParameterError(f"move_limit must be in (0, 1], got {self.move_limit}")


@dataclass
class IterationRecord:
    compliance: float
    change: float
    mean_density: float


@dataclass
class OptimizationTrace:
    records: list[IterationRecord] = field(default_factory=list)
    converged: bool = False
    wall_seconds: float = 0.0

    @property
    def iterations(self) -> int:
        return len(self.records)

    @property
    def final_compliance(self) -> float:
        return self.records[-1].compliance


@lru_cache(maxsize=64)
def _filter_matrix(nelx: int, nely: int, rmin: float):
    """Sparse neighbor weights w = rmin - dist for elements within radius rmin,
    plus the per-element weight sums."""
    n = nelx * nely
    base = np.arange(n).reshape(nely, nelx)
    reach = int(np.ceil(rmin))
    rows, cols, vals = [], [], []
    for di in range(-reach, reach + 1):
        for dj in range(-reach, reach + 1):
            w = rmin - np.hypot(di, dj)
            if w <= 0:
                continue
            src = base[max(0, -di): nely - max(0, di), max(0, -dj): nelx - max(0, dj)]
            dst = base[max(0, di): nely - max(0, -di), max(0, dj): nelx - max(0, -dj)]
            rows.append(src.ravel())
            cols.append(dst.ravel())
            vals.append(np.full(src.size, w))
    h = coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()
    sums = np.asarray(h.sum(axis=1)).ravel()
    return h, sums


def sensitivity_filter(x: DensityField, dc: np.ndarray, rmin: float) -> np.ndarray:
    """Neighborhood-weighted sensitivity average:
    out_e = sum_i w_i x_i dc_i / (x_e sum_i w_i), w_i = max(0, rmin - dist)."""
    if rmin <= 0:
        raise ParameterError(f"rmin must be > 0, got {rmin}")
    if dc.shape != x.values.shape:
        raise ShapeError(f"dc shape {dc.shape} != density shape {x.values.shape}")
    if rmin <= 1.0:
        # neighborhood contains only the element itself
        return dc.copy()
    h, sums = _filter_matrix(x.nelx, x.nely, rmin)
    flat = (x.values * dc).ravel()
    out = (h @ flat) / (x.values.ravel() * sums)
    return out.reshape(x.nely, x.nelx)


def oc_update(
    x: DensityField,
    dc: np.ndarray,
    params: OptimizationParams,
    volume_tol: float = 1e-4,
) -> DensityField:
    """Optimality-criteria step with sqrt damping and move limit; the Lagrange
    multiplier is bisected until mean(x_new) hits volfrac within volume_tol."""
    if dc.shape != x.values.shape:
        raise ShapeError(f"dc shape {dc.shape} != density shape {x.values.shape}")
    if np.any(dc > 0):
        raise ParameterError(f"sensitivities must be <= 0, got max {dc.max()}")
    xv = x.values
    lo = np.maximum(X_MIN, xv - params.move_limit)
    hi = np.minimum(1.0, xv + params.move_limit)
    neg_dc = -dc

    def candidate(lam: float) -> np.ndarray:
        return np.clip(xv * np.sqrt(neg_dc / lam), lo, hi)

    l1, l2 = 1e-9, 1e9
    target = params.volfrac
    vmax = candidate(l1).mean()
    vmin = candidate(l2).mean()
    if target > vmax + volume_tol or target < vmin - volume_tol:
        raise NumericError(
            f"volume {target} not bracketed by OC bisection: reachable range "
            f"[{vmin:.6f}, {vmax:.6f}] at lambda in [{l1:g}, {l2:g}]"
        )

    xn = xv
    while (l2 - l1) > 1e-14 * l2:
        lmid = 0.5 * (l1 + l2)
        xn = candidate(lmid)
        vol = xn.mean()
        if abs(vol - target) <= volume_tol:
            break
        if vol > target:
            l1 = lmid
        else:
            l2 = lmid
    return DensityField(x.nelx, x.nely, xn)


def _mirror_dofs(mesh: MeshSpec) -> np.ndarray:
    """Dof permutation under reflection about the horizontal midline."""
    nodes = np.arange(mesh.n_nodes)
    ix, iy = nodes // (mesh.nely + 1), nodes % (mesh.nely + 1)
    mirrored = ix * (mesh.nely + 1) + (mesh.nely - iy)
    perm = np.empty(mesh.n_dofs, dtype=np.int64)
    perm[2 * nodes] = 2 * mirrored
    perm[2 * nodes + 1] = 2 * mirrored + 1
    return perm


def _is_midline_symmetric(mesh: MeshSpec, load: LoadCase) -> bool:
    """True when fixed dofs and loads map onto themselves (up to a global sign)
    under the horizontal-midline reflection; element energies are then mirror
    images and density symmetry can be maintained exactly."""
    perm = _mirror_dofs(mesh)
    fixed = np.zeros(mesh.n_dofs, dtype=bool)
    fixed[load.fixed_dofs] = True
    if not np.array_equal(fixed, fixed[perm]):
        return False
    f = load.force_vector(mesh.n_dofs)
    fm = np.empty_like(f)
    fm[perm] = f
    fm[1::2] *= -1.0  # y components flip under the reflection
    return np.array_equal(fm, f) or np.array_equal(fm, -f)


def optimize(
    mesh: MeshSpec,
    load: LoadCase,
    params: OptimizationParams,
    solver: str = "auto",
    callback: Optional[Callable[[int, IterationRecord], None]] = None,
) -> tuple[DensityField, OptimizationTrace]:
    """Run the SIMP loop from a uniform field at volfrac until the max density
    change drops below change_tol or max_iters is reached.

    For mirror-symmetric load cases the density field is re-symmetrized each
    iteration (a no-op in exact arithmetic) so rounding drift cannot break
    the symmetry of the final structure.
    """
    start = time.perf_counter()
    x = DensityField.uniform(mesh.nelx, mesh.nely, params.volfrac)
    symmetric = _is_midline_symmetric(mesh, load)
    trace = OptimizationTrace()

    for it in range(1, params.max_iters + 1):
        result = assemble_solve(mesh, x, params.penal, load, solver=solver)
        dc = compliance_sensitivity(x, result, params.penal)
        dc_f = sensitivity_filter(x, dc, params.rmin)
        x_new = oc_update(x, dc_f, params)
        if symmetric:
            v = x_new.values
            x_new.values = 0.5 * (v + v[::-1, :])
        change = float(np.abs(x_new.values - x.values).max())
        record = IterationRecord(
            compliance=result.compliance, change=change, mean_density=x_new.mean()
        )
        trace.records.append(record)
        x = x_new
        if callback is not None:
            callback(it, record)
        if change < params.change_tol:
            trace.converged = True
            break

    trace.wall_seconds = time.perf_counter() - start
    return x, trace
