"""Matrix-free linear elasticity on the voxel grid with SIMP interpolation.

Every voxel is one bilinear quadrilateral (2D, plane stress, unit thickness)
or trilinear hexahedron (3D). Nodes sit at voxel corners; node ``(i, j, k)``
has flat index ``(i * (ny + 1) + j) * (nz + 1) + k`` (``k`` absent in 2D) and
DOF ``node * dim + axis``. Element stiffness is scaled by
``E * (rho_min + (1 - rho_min) * rho**p)``.
"""
from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .grid import GridSpec, ScalarField

_AXES = {"x": 0, "y": 1, "z": 2}


class FEAConvergenceError(RuntimeError):
    def __init__(self, message: str, residuals: Sequence[float]):
        super().__init__(message)
        self.residuals = list(residuals)


@dataclass(frozen=True)
class MaterialModel:
    youngs_modulus: float = 1.0
    poisson_ratio: float = 0.3
    simp_exponent: float = 3.0
    rho_min: float = 1e-3

    def __post_init__(self):
        if not self.youngs_modulus > 0:
            raise ValueError("Young's modulus must be > 0")
        if not -1 < self.poisson_ratio < 0.5:
            raise ValueError("Poisson ratio must lie in (-1, 0.5)")
        if not self.simp_exponent >= 1:
            raise ValueError("SIMP exponent must be >= 1")
        if not 0 < self.rho_min < 1:
            raise ValueError("rho_min must lie in (0, 1)")

    def stiffness_scale(self, rho: np.ndarray) -> np.ndarray:
        return self.youngs_modulus * (self.rho_min + (1 - self.rho_min) * rho ** self.simp_exponent)

    def stiffness_slope(self, rho: np.ndarray) -> np.ndarray:
        p = self.simp_exponent
        return self.youngs_modulus * p * (1 - self.rho_min) * rho ** (p - 1)


def _gauss_points(dim: int):
    g = 1 / np.sqrt(3)
    return list(itertools.product((-g, g), repeat=dim))


def _elasticity_matrix(nu: float, dim: int) -> np.ndarray:
    if dim == 2:
        return np.array([[1, nu, 0], [nu, 1, 0], [0, 0, (1 - nu) / 2]]) / (1 - nu ** 2)
    lam = nu / ((1 + nu) * (1 - 2 * nu))
    mu = 1 / (2 * (1 + nu))
    D = np.zeros((6, 6))
    D[:3, :3] = lam
    D[np.arange(3), np.arange(3)] += 2 * mu
    D[3:, 3:] = np.eye(3) * mu
    return D


def corner_offsets(dim: int) -> np.ndarray:
    """Local node order: counter-clockwise in the xy plane, bottom (z=0) layer first."""
    quad = [(0, 0), (1, 0), (1, 1), (0, 1)]
    if dim == 2:
        return np.array(quad)
    return np.array([(i, j, k) for k in (0, 1) for (i, j) in quad])


def element_stiffness(spacing: Sequence[float], nu: float, dim: int) -> np.ndarray:
    """Unit-modulus element stiffness by 2-point Gauss quadrature per axis."""
    h = np.asarray(spacing[:dim], dtype=np.float64)
    corners = corner_offsets(dim)
    signs = 2 * corners - 1
    D = _elasticity_matrix(nu, dim)
    nn = len(corners)
    ke = np.zeros((nn * dim, nn * dim))
    detj = np.prod(h / 2)
    for gp in _gauss_points(dim):
        gp = np.asarray(gp)
        # dN/dxi for each node, then chain to physical coordinates
        dN = np.empty((nn, dim))
        for a in range(nn):
            for d in range(dim):
                term = signs[a, d] / 2 ** dim
                for e in range(dim):
                    if e != d:
                        term *= 1 + signs[a, e] * gp[e]
                dN[a, d] = term * 2 / h[d]
        if dim == 2:
            B = np.zeros((3, 2 * nn))
            B[0, 0::2] = dN[:, 0]
            B[1, 1::2] = dN[:, 1]
            B[2, 0::2] = dN[:, 1]
            B[2, 1::2] = dN[:, 0]
        else:
            B = np.zeros((6, 3 * nn))
            B[0, 0::3] = dN[:, 0]
            B[1, 1::3] = dN[:, 1]
            B[2, 2::3] = dN[:, 2]
            B[3, 0::3] = dN[:, 1]
            B[3, 1::3] = dN[:, 0]
            B[4, 1::3] = dN[:, 2]
            B[4, 2::3] = dN[:, 1]
            B[5, 0::3] = dN[:, 2]
            B[5, 2::3] = dN[:, 0]
        ke += B.T @ D @ B * detj
    return 0.5 * (ke + ke.T)


class Mesh:
    """Node numbering and element connectivity for a voxel grid."""

    def __init__(self, spec: GridSpec, nu: float):
        self.spec = spec
        self.dim = spec.ndim
        nx, ny, nz = spec.dims
        self.node_dims = (nx + 1, ny + 1) if self.dim == 2 else (nx + 1, ny + 1, nz + 1)
        self.n_nodes = int(np.prod(self.node_dims))
        self.ndof = self.n_nodes * self.dim
        self.n_elements = spec.n
        self.k0 = element_stiffness(spec.spacing, nu, self.dim)
        self.k0_diag = np.diag(self.k0).copy()
        el = np.indices(spec.dims[: self.dim]).reshape(self.dim, -1).T
        nodes = np.empty((self.n_elements, 2 ** self.dim), dtype=np.int64)
        for a, off in enumerate(corner_offsets(self.dim)):
            nodes[:, a] = np.ravel_multi_index(tuple((el + off).T), self.node_dims)
        self.element_nodes = nodes
        self.edof = (nodes[:, :, None] * self.dim + np.arange(self.dim)).reshape(self.n_elements, -1)
        self._edof_flat = self.edof.reshape(-1)

    def node_positions(self) -> np.ndarray:
        """World coordinates of nodes (voxel corners), shape ``(n_nodes, dim)``."""
        s = self.spec
        axes = [s.origin[a] - s.spacing[a] / 2 + np.arange(self.node_dims[a]) * s.spacing[a] for a in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1)

    def scatter(self, element_vectors: np.ndarray) -> np.ndarray:
        return np.bincount(self._edof_flat, weights=element_vectors.reshape(-1), minlength=self.ndof)

    def gather(self, u: np.ndarray) -> np.ndarray:
        return u[self.edof]


@functools.lru_cache(maxsize=16)
def get_mesh(spec: GridSpec, nu: float) -> Mesh:
    return Mesh(spec, nu)


@dataclass(frozen=True)
class LoadCase:
    """Fixed DOFs and nodal forces (DOF index -> force)."""

    fixed_dofs: np.ndarray
    forces: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self):
        fixed = np.unique(np.asarray(self.fixed_dofs, dtype=np.int64))
        if fixed.size == 0:
            raise ValueError("load case needs at least one fixed DOF")
        object.__setattr__(self, "fixed_dofs", fixed)
        object.__setattr__(self, "forces", {int(k): float(v) for k, v in dict(self.forces).items()})

    def force_vector(self, ndof: int) -> np.ndarray:
        f = np.zeros(ndof)
        for dof, val in self.forces.items():
            if not 0 <= dof < ndof:
                raise ValueError(f"force DOF {dof} out of range")
            f[dof] += val
        return f

    def free_mask(self, ndof: int) -> np.ndarray:
        if self.fixed_dofs.max() >= ndof:
            raise ValueError("fixed DOF out of range")
        free = np.ones(ndof, dtype=bool)
        free[self.fixed_dofs] = False
        return free

    @classmethod
    def from_boxes(cls, spec: GridSpec, fixed: Iterable[tuple], loads: Iterable[tuple]) -> "LoadCase":
        """Build from node-selection boxes.

        ``fixed``: ``(lo, hi, axes)`` with axes like ``"xy"``. ``loads``:
        ``(lo, hi, force_vector)``; the total force is split evenly over the
        nodes inside the closed box. Empty selections raise.
        """
        mesh = get_mesh(spec, 0.3)
        pos = mesh.node_positions()
        dim = mesh.dim
        tol = 1e-9 * min(spec.spacing)

        def select(lo, hi):
            lo = np.asarray(list(lo)[:dim], dtype=float)
            hi = np.asarray(list(hi)[:dim], dtype=float)
            ids = np.nonzero(np.all((pos >= lo - tol) & (pos <= hi + tol), axis=1))[0]
            if ids.size == 0:
                raise ValueError(f"box {lo.tolist()}..{hi.tolist()} selects no nodes")
            return ids

        dofs = []
        for lo, hi, axes in fixed:
            ids = select(lo, hi)
            for ax in axes:
                a = _AXES[ax] if isinstance(ax, str) else int(ax)
                if a >= dim:
                    raise ValueError(f"axis {ax!r} not available in {dim}D")
                dofs.append(ids * dim + a)
        forces: dict[int, float] = {}
        for lo, hi, vec in loads:
            ids = select(lo, hi)
            vec = list(vec)[:dim]
            for a, total in enumerate(vec):
                if total == 0:
                    continue
                for n in ids:
                    d = int(n * dim + a)
                    forces[d] = forces.get(d, 0.0) + float(total) / ids.size
        return cls(np.concatenate(dofs) if dofs else np.array([], dtype=np.int64), forces)


@dataclass(frozen=True)
class FESolution:
    displacements: np.ndarray
    compliance: float
    cg_iterations: int
    residual: float


def _rho_array(rho) -> np.ndarray:
    return rho.flat if isinstance(rho, ScalarField) else np.asarray(rho, dtype=np.float64).reshape(-1)


def apply_stiffness(rho: ScalarField, u: np.ndarray, model: MaterialModel) -> np.ndarray:
    """``K(rho) u`` without assembling ``K``."""
    mesh = get_mesh(rho.spec, model.poisson_ratio)
    return _apply(mesh, model.stiffness_scale(rho.flat), u)


def _apply(mesh: Mesh, scale: np.ndarray, u: np.ndarray) -> np.ndarray:
    ue = mesh.gather(u)
    fe = (ue @ mesh.k0) * scale[:, None]
    return mesh.scatter(fe)


def stiffness_diagonal(rho: ScalarField, model: MaterialModel) -> np.ndarray:
    mesh = get_mesh(rho.spec, model.poisson_ratio)
    scale = model.stiffness_scale(rho.flat)
    return mesh.scatter(scale[:, None] * mesh.k0_diag[None, :])


def solve(rho: ScalarField, load: LoadCase, model: MaterialModel, tol: float = 1e-6,
          max_iter: int | None = None, x0: np.ndarray | None = None) -> FESolution:
    """Jacobi-preconditioned conjugate gradients on the free DOFs."""
    mesh = get_mesh(rho.spec, model.poisson_ratio)
    ndof = mesh.ndof
    f = load.force_vector(ndof)
    free = load.free_mask(ndof)
    f[~free] = 0.0
    fnorm = np.linalg.norm(f)
    if fnorm == 0:
        return FESolution(np.zeros(ndof), 0.0, 0, 0.0)
    if max_iter is None:
        max_iter = max(1000, 10 * ndof)
    scale = model.stiffness_scale(rho.flat)
    diag = mesh.scatter(scale[:, None] * mesh.k0_diag[None, :])
    inv_d = np.where(free, 1.0 / np.where(free, diag, 1.0), 0.0)

    def A(v):
        out = _apply(mesh, scale, v)
        out[~free] = 0.0
        return out

    u = np.zeros(ndof) if x0 is None else np.where(free, x0, 0.0)
    r = f - A(u) if x0 is not None else f.copy()
    z = inv_d * r
    p = z.copy()
    rz = r @ z
    history = [np.linalg.norm(r) / fnorm]
    it = 0
    while history[-1] > tol:
        if it >= max_iter:
            raise FEAConvergenceError(
                f"CG did not reach relative residual {tol:g} in {max_iter} iterations (last {history[-1]:.3e})",
                history)
        Ap = A(p)
        alpha = rz / (p @ Ap)
        u += alpha * p
        r -= alpha * Ap
        z = inv_d * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
        it += 1
        history.append(np.linalg.norm(r) / fnorm)
        if not np.isfinite(history[-1]):
            raise FEAConvergenceError("CG produced a non-finite residual", history)
    return FESolution(u, float(f @ u), it, history[-1])


def element_energy(rho: ScalarField, u: np.ndarray, model: MaterialModel) -> np.ndarray:
    """``u_e^T k0 u_e`` per element (unit modulus)."""
    mesh = get_mesh(rho.spec, model.poisson_ratio)
    ue = mesh.gather(u)
    return np.einsum("ei,ij,ej->e", ue, mesh.k0, ue)


def compliance_sensitivity(rho: ScalarField, sol: FESolution, model: MaterialModel) -> ScalarField:
    """d(compliance)/d(rho) per element; the compliance problem is self-adjoint so no extra solve."""
    energy = element_energy(rho, sol.displacements, model)
    s = -model.stiffness_slope(rho.flat) * energy
    return ScalarField(rho.spec, s.reshape(rho.spec.dims))


def normalized(s: ScalarField) -> ScalarField:
    """``s / max|s|`` (zero field stays zero)."""
    m = np.abs(s.values).max()
    return s if m == 0 else s.replace(s.values / m)
