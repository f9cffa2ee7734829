"""Plane-stress FE analysis on a regular quad mesh.

Element: 4-node bilinear quadrilateral, unit square, unit thickness.
Node numbering is column-major (y fastest): node(ix, iy) = ix*(nely+1) + iy,
with dofs (2n, 2n+1) = (ux, uy). Element dof ordering follows the classic
compact SIMP codes so published structures compare pixel-for-pixel.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.linalg import LinearOperator, cg, spilu, splu

from .errors import ParameterError, ShapeError, SingularSystemError

# Minimum relative density: keeps K positive definite during optimization.
X_MIN = 1e-3

# Meshes up to this many elements per side use the dense direct solver.
_DENSE_LIMIT = 16

_CG_RTOL = 1e-8


@dataclass(frozen=True)
class MeshSpec:
    """Regular nelx-by-nely grid of unit square elements."""

    nelx: int
    nely: int
    young_solid: float = 1.0
    poisson: float = 0.3
    thickness: float = 1.0

    def __post_init__(self):
        if self.nelx < 1 or self.nely < 1:
            raise ParameterError(f"mesh must have >=1 element per side, got {self.nelx}x{self.nely}")
        if self.young_solid <= 0:
            raise ParameterError(f"young_solid must be > 0, got {self.young_solid}")
        if not 0 <= self.poisson < 0.5:
            raise ParameterError(f"poisson must be in [0, 0.5), got {self.poisson}")

    @property
    def n_elements(self) -> int:
        return self.nelx * self.nely

    @property
    def n_nodes(self) -> int:
        return (self.nelx + 1) * (self.nely + 1)

    @property
    def n_dofs(self) -> int:
        return 2 * self.n_nodes


@dataclass
class DensityField:
    """Element densities on the mesh grid, shape (nely, nelx), row-major, y-down."""

    nelx: int
    nely: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.nely, self.nelx):
            raise ShapeError(
                f"density values shape {self.values.shape} != (nely, nelx) = ({self.nely}, {self.nelx})"
            )

    @classmethod
    def uniform(cls, nelx: int, nely: int, value: float) -> "DensityField":
        return cls(nelx, nely, np.full((nely, nelx), value, dtype=np.float64))

    def validate(self, x_min: float = X_MIN) -> None:
        v = self.values
        if v.min() < x_min or v.max() > 1.0:
            raise ParameterError(
                f"densities must lie in [{x_min}, 1], got range [{v.min()}, {v.max()}]"
            )

    def mean(self) -> float:
        return float(self.values.mean())

    def copy(self) -> "DensityField":
        return DensityField(self.nelx, self.nely, self.values.copy())


@dataclass
class LoadCase:
    """Constrained dofs plus sparse point loads (dof index, force)."""

    fixed_dofs: np.ndarray
    loads: list[tuple[int, float]]

    def __post_init__(self):
        self.fixed_dofs = np.unique(np.asarray(self.fixed_dofs, dtype=np.int64))
        if self.fixed_dofs.size == 0:
            raise ParameterError("fixed_dofs must be nonempty (rigid-body modes otherwise)")
        fixed = set(self.fixed_dofs.tolist())
        for dof, _ in self.loads:
            if dof in fixed:
                raise ParameterError(f"load applied to fixed dof {dof}")

    @classmethod
    def cantilever(cls, mesh: MeshSpec, magnitude: float = -1.0) -> "LoadCase":
        """Left edge fully fixed, point load in y at the mid node of the right edge."""
        fixed = np.arange(2 * (mesh.nely + 1))
        mid_node = mesh.nelx * (mesh.nely + 1) + mesh.nely // 2
        return cls(fixed_dofs=fixed, loads=[(2 * mid_node + 1, magnitude)])

    def force_vector(self, n_dofs: int) -> np.ndarray:
        f = np.zeros(n_dofs)
        for dof, val in self.loads:
            if not 0 <= dof < n_dofs:
                raise ParameterError(f"load dof {dof} outside mesh with {n_dofs} dofs")
            f[dof] += val
        return f


@dataclass
class SolveResult:
    """Displacements, compliance F.U, and per-element strain energies u_e' k0 u_e."""

    displacements: np.ndarray
    compliance: float
    element_energies: np.ndarray = field(repr=False)


def element_stiffness(young: float, poisson: float) -> np.ndarray:
    """8x8 stiffness of the unit-square bilinear quad, plane stress.

    Closed-form entries; node order counterclockwise from the lower-left
    corner. Symmetric PSD with exactly three rigid-body modes.
    """
    if young <= 0:
        raise ParameterError(f"young must be > 0, got {young}")
    if not 0 <= poisson < 0.5:
        raise ParameterError(f"poisson must be in [0, 0.5), got {poisson}")
    nu = poisson
    k = np.array([
        1 / 2 - nu / 6, 1 / 8 + nu / 8, -1 / 4 - nu / 12, -1 / 8 + 3 * nu / 8,
        -1 / 4 + nu / 12, -1 / 8 - nu / 8, nu / 6, 1 / 8 - 3 * nu / 8,
    ])
    idx = np.array([
        [0, 1, 2, 3, 4, 5, 6, 7],
        [1, 0, 7, 6, 5, 4, 3, 2],
        [2, 7, 0, 5, 6, 3, 4, 1],
        [3, 6, 5, 0, 7, 2, 1, 4],
        [4, 5, 6, 7, 0, 1, 2, 3],
        [5, 4, 3, 2, 1, 0, 7, 6],
        [6, 3, 4, 1, 2, 7, 0, 5],
        [7, 2, 1, 4, 3, 6, 5, 0],
    ])
    return young / (1 - nu ** 2) * k[idx]


def element_dof_map(mesh: MeshSpec) -> np.ndarray:
    """(n_elements, 8) global dof indices per element, rows ordered like
    DensityField.values.ravel() (element (ely, elx) at index ely*nelx + elx)."""
    elx, ely = np.meshgrid(np.arange(mesh.nelx), np.arange(mesh.nely))
    elx = elx.ravel()
    ely = ely.ravel()
    n1 = (mesh.nely + 1) * elx + ely          # top-left node
    n2 = (mesh.nely + 1) * (elx + 1) + ely    # top-right node
    edof = np.column_stack([
        2 * n1 + 2, 2 * n1 + 3,   # bottom-left
        2 * n2 + 2, 2 * n2 + 3,   # bottom-right
        2 * n2, 2 * n2 + 1,       # top-right
        2 * n1, 2 * n1 + 1,       # top-left
    ])
    return edof


def _check_density(mesh: MeshSpec, x: DensityField) -> np.ndarray:
    if (x.nelx, x.nely) != (mesh.nelx, mesh.nely):
        raise ShapeError(
            f"density field {x.nelx}x{x.nely} does not match mesh {mesh.nelx}x{mesh.nely}"
        )
    xv = x.values.ravel()
    if xv.min() < 0:
        raise ParameterError(f"negative density {xv.min()}")
    if xv.max() <= 0:
        raise SingularSystemError("all densities are zero: stiffness matrix is singular")
    return xv


def assemble_solve(
    mesh: MeshSpec,
    x: DensityField,
    penal: float,
    load: LoadCase,
    solver: str = "auto",
) -> SolveResult:
    """Assemble K(x) with SIMP scaling x_e^penal and solve K U = F.

    solver: "auto" (dense direct for small meshes, PCG otherwise),
    "dense", or "cg". Residual satisfies ||KU - F|| <= 1e-8 ||F||.
    """
    if penal < 1:
        raise ParameterError(f"penal must be >= 1, got {penal}")
    xv = _check_density(mesh, x)

    n_dofs = mesh.n_dofs
    f = load.force_vector(n_dofs)
    fixed = load.fixed_dofs
    if fixed.max() >= n_dofs:
        raise ParameterError(f"fixed dof {fixed.max()} outside mesh with {n_dofs} dofs")
    free = np.setdiff1d(np.arange(n_dofs), fixed, assume_unique=False)
    if free.size == 0:
        raise SingularSystemError("all dofs are fixed: nothing to solve")

    ke = element_stiffness(mesh.young_solid, mesh.poisson) * mesh.thickness
    edof = element_dof_map(mesh)
    scale = xv ** penal

    u = np.zeros(n_dofs)
    if np.any(f):
        s_k = (ke.ravel()[None, :] * scale[:, None]).ravel()
        i_k = np.repeat(edof, 8, axis=1).ravel()
        j_k = np.tile(edof, (1, 8)).ravel()
        k_full = coo_matrix((s_k, (i_k, j_k)), shape=(n_dofs, n_dofs)).tocsc()
        k_free = k_full[free][:, free]

        if solver == "auto":
            solver = "dense" if max(mesh.nelx, mesh.nely) <= _DENSE_LIMIT else "cg"
        if solver == "dense":
            try:
                u_free = np.linalg.solve(k_free.toarray(), f[free])
            except np.linalg.LinAlgError as exc:
                raise SingularSystemError(f"direct solve failed: {exc}") from exc
        elif solver == "cg":
            u_free = _solve_pcg(k_free, f[free])
        else:
            raise ParameterError(f"unknown solver {solver!r}")

        residual = np.linalg.norm(k_free @ u_free - f[free])
        fnorm = np.linalg.norm(f[free])
        if not np.all(np.isfinite(u_free)) or residual > 1e-8 * fnorm:
            raise SingularSystemError(
                "solution did not converge (near-singular stiffness: "
                f"relative residual {residual / fnorm:.2e}); check densities and constraints"
            )
        u[free] = u_free

    compliance = float(f @ u)
    ue = u[edof]
    energies = np.einsum("ij,jk,ik->i", ue, ke, ue).reshape(mesh.nely, mesh.nelx)
    return SolveResult(displacements=u, compliance=compliance, element_energies=energies)


def _solve_pcg(k_free, f_free: np.ndarray) -> np.ndarray:
    """Conjugate gradient with an incomplete-factorization preconditioner.

    SIMP systems reach a 1e9 stiffness contrast once densities hit the floor,
    so the factorization keeps most of the fill; if CG still stagnates we fall
    back to a complete sparse factorization before declaring the system
    singular."""
    k_csc = k_free.tocsc()
    try:
        ilu = spilu(k_csc, drop_tol=1e-7, fill_factor=30)
        precond = LinearOperator(k_csc.shape, ilu.solve)
        u, info = cg(k_csc, f_free, rtol=_CG_RTOL, atol=0.0, maxiter=500, M=precond)
    except RuntimeError:
        info = -1
        u = None
    if info != 0 or not np.all(np.isfinite(u)):
        try:
            u = splu(k_csc).solve(f_free)
        except RuntimeError as exc:
            raise SingularSystemError(
                f"stiffness matrix is singular (factorization failed: {exc}); "
                "check densities and constraints"
            ) from exc
    return u


def compliance_sensitivity(x: DensityField, result: SolveResult, penal: float) -> np.ndarray:
    """dc/dx_e = -penal * x_e^(penal-1) * u_e' k0 u_e, shape (nely, nelx), all <= 0."""
    energies = result.element_energies
    if energies.shape != x.values.shape:
        raise ShapeError(
            f"solve result grid {energies.shape} does not match density field {x.values.shape}"
        )
    return -penal * x.values ** (penal - 1) * energies
