"""Uniform voxel grids and the scalar fields that live on them.

Layout convention (used by every module): a field on a grid with dims
``(nx, ny, nz)`` stores its values in a C-ordered array of that shape, so the
flat index of voxel ``(i, j, k)`` is ``(i * ny + j) * nz + k`` (z fastest).
Voxel ``(i, j, k)`` has its center at ``origin + (i, j, k) * spacing``.
A 2D grid is simply ``nz == 1``; its voxel measure is ``sx * sy`` (unit
thickness, ``sz`` is ignored).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

_LATTICE_TOL = 1e-9


class GridError(ValueError):
    """Two fields are not defined on compatible grids."""


class FieldValueError(ValueError):
    """Field values violate a value contract (non-finite, out of range)."""


def _triple(values, cast, name):
    vals = tuple(cast(v) for v in values)
    if len(vals) == 2:
        vals = vals + ((1 if cast is int else (1.0 if name == "spacing" else 0.0)),)
    if len(vals) != 3:
        raise ValueError(f"{name} must have 2 or 3 components, got {len(vals)}")
    return vals


@dataclass(frozen=True)
class GridSpec:
    dims: tuple[int, int, int]
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "dims", _triple(self.dims, int, "dims"))
        object.__setattr__(self, "spacing", _triple(self.spacing, float, "spacing"))
        object.__setattr__(self, "origin", _triple(self.origin, float, "origin"))
        if min(self.dims) < 1:
            raise ValueError(f"all dims must be >= 1, got {self.dims}")
        if min(self.spacing) <= 0 or not all(np.isfinite(self.spacing)):
            raise ValueError(f"all spacing components must be > 0, got {self.spacing}")
        if not all(np.isfinite(self.origin)):
            raise ValueError(f"origin must be finite, got {self.origin}")

    @property
    def is_2d(self) -> bool:
        return self.dims[2] == 1

    @property
    def ndim(self) -> int:
        return 2 if self.is_2d else 3

    @property
    def n(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    @property
    def dv(self) -> float:
        sx, sy, sz = self.spacing
        return sx * sy if self.is_2d else sx * sy * sz

    @property
    def h(self) -> float:
        """Isotropic voxel size; raises if the grid is anisotropic."""
        if not self.is_isotropic():
            raise GridError(f"grid spacing {self.spacing} is not isotropic")
        return self.spacing[0]

    def is_isotropic(self) -> bool:
        sx, sy, sz = self.spacing
        if not np.isclose(sx, sy, rtol=1e-12, atol=0):
            return False
        return self.is_2d or bool(np.isclose(sx, sz, rtol=1e-12, atol=0))

    def index(self, i, j, k=0):
        _, ny, nz = self.dims
        return (np.asarray(i) * ny + np.asarray(j)) * nz + np.asarray(k)

    def unravel(self, flat):
        return np.unravel_index(flat, self.dims)

    def centers(self, axis: int) -> np.ndarray:
        return self.origin[axis] + np.arange(self.dims[axis]) * self.spacing[axis]

    def upper(self) -> tuple[float, float, float]:
        """Center of the last voxel."""
        return tuple(o + (n - 1) * s for o, n, s in zip(self.origin, self.dims, self.spacing))

    def with_origin(self, origin) -> "GridSpec":
        return GridSpec(self.dims, self.spacing, origin)

    def same_spacing(self, other: "GridSpec") -> bool:
        axes = 2 if (self.is_2d and other.is_2d) else 3
        return bool(np.allclose(self.spacing[:axes], other.spacing[:axes], rtol=1e-12, atol=0))

    def matches(self, other: "GridSpec") -> bool:
        if self.dims != other.dims or not self.same_spacing(other):
            return False
        tol = _LATTICE_TOL * min(self.spacing)
        return bool(np.allclose(self.origin, other.origin, rtol=0, atol=tol))

    def lattice_shift(self, other: "GridSpec", shift=(0.0, 0.0, 0.0)):
        """Fractional index of ``other``'s first voxel (displaced by ``shift``) in this grid.

        Returns ``(base, frac)`` integer/float triples. Fractions within
        ``1e-9`` of an integer are snapped so lattice-aligned grids give exact
        integer offsets.
        """
        if not self.same_spacing(other):
            raise GridError(f"spacing mismatch: {self.spacing} vs {other.spacing}")
        base, frac = [], []
        for ax in range(3):
            if ax == 2 and self.is_2d and other.is_2d:
                base.append(0)
                frac.append(0.0)
                continue
            q = (other.origin[ax] + shift[ax] - self.origin[ax]) / self.spacing[ax]
            r = round(q)
            if abs(q - r) < _LATTICE_TOL:
                base.append(int(r))
                frac.append(0.0)
            else:
                b = int(np.floor(q))
                base.append(b)
                frac.append(q - b)
        return tuple(base), tuple(frac)


class ScalarField:
    """Immutable real-valued field on a :class:`GridSpec`."""

    __slots__ = ("spec", "values")

    def __init__(self, spec: GridSpec, values, *, check: bool = True):
        arr = np.array(values, dtype=np.float64, copy=True)
        if arr.size != spec.n:
            raise GridError(f"{arr.size} values given for a grid of {spec.n} voxels")
        arr = arr.reshape(spec.dims)
        if check and not np.all(np.isfinite(arr)):
            raise FieldValueError("field contains NaN or Inf")
        arr.flags.writeable = False
        object.__setattr__(self, "spec", spec)
        object.__setattr__(self, "values", arr)

    def __setattr__(self, name, value):
        raise AttributeError("ScalarField is immutable")

    def __repr__(self):
        return f"ScalarField(dims={self.spec.dims}, range=[{self.values.min():.4g}, {self.values.max():.4g}])"

    @classmethod
    def zeros(cls, spec: GridSpec) -> "ScalarField":
        return cls(spec, np.zeros(spec.dims))

    @classmethod
    def full(cls, spec: GridSpec, value: float) -> "ScalarField":
        return cls(spec, np.full(spec.dims, float(value)))

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def replace(self, values) -> "ScalarField":
        return ScalarField(self.spec, values)

    def is_binary(self) -> bool:
        return bool(np.all((self.values == 0.0) | (self.values == 1.0)))

    def support(self) -> np.ndarray:
        return self.values != 0.0

    def nonzero_bounds(self):
        """Index bounding box ``(lo, hi)`` (inclusive) of nonzero voxels, or ``None``."""
        idx = np.nonzero(self.values)
        if idx[0].size == 0:
            return None
        return tuple(int(a.min()) for a in idx), tuple(int(a.max()) for a in idx)


def check_same_grid(*fields: ScalarField) -> GridSpec:
    spec = fields[0].spec
    for f in fields[1:]:
        if not spec.matches(f.spec):
            raise GridError(f"grid mismatch: {spec} vs {f.spec}")
    return spec


def volume_integral(f: ScalarField) -> float:
    return float(f.spec.dv * np.sum(f.values))


def threshold(f: ScalarField, tau: float) -> ScalarField:
    """Binary field that is 1 where ``f > tau`` (strictly), else 0."""
    if not 0.0 < tau < 1.0:
        raise ValueError(f"threshold tau must lie in (0, 1), got {tau}")
    return ScalarField(f.spec, (f.values > tau).astype(np.float64))


def implicit_union(rho_omega: ScalarField, indicator_f: ScalarField) -> ScalarField:
    """Obstacle density: design density plus fixture indicator, clamped to [0, 1]."""
    check_same_grid(rho_omega, indicator_f)
    return ScalarField(rho_omega.spec, np.clip(rho_omega.values + indicator_f.values, 0.0, 1.0))


@dataclass(frozen=True)
class RegionMasks:
    accessible: ScalarField
    inaccessible: ScalarField
    secluded: ScalarField

    def validate(self, domain: ScalarField, design: ScalarField | None = None) -> None:
        a, b, g = self.accessible.values, self.inaccessible.values, self.secluded.values
        if np.any(a * b != 0):
            raise FieldValueError("accessible and inaccessible masks overlap")
        if not np.array_equal(a + b, domain.values):
            raise FieldValueError("accessible + inaccessible does not cover the design domain")
        if np.any(g > b):
            raise FieldValueError("secluded region is not inside the inaccessible region")
        if design is not None and np.any(g * design.values != 0):
            raise FieldValueError("secluded region intersects the design")


def _copy_shifted(src: np.ndarray, dst_shape, base) -> np.ndarray:
    """``out[i] = src[i + base]`` with zeros outside ``src``."""
    out = np.zeros(dst_shape)
    dst_sl, src_sl = [], []
    for b, n_src, n_dst in zip(base, src.shape, dst_shape):
        lo = max(0, -b)
        hi = min(n_dst, n_src - b)
        if hi <= lo:
            return out
        dst_sl.append(slice(lo, hi))
        src_sl.append(slice(lo + b, hi + b))
    out[tuple(dst_sl)] = src[tuple(src_sl)]
    return out


def sample_shifted(f: ScalarField, target: GridSpec, shift=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Values of ``f`` at ``x + shift`` for every voxel center ``x`` of ``target``.

    Multilinear interpolation between voxel centers of ``f`` with zero outside
    its grid. Because the shift is uniform, the interpolation weights are the
    same for every voxel, so this reduces to a weighted sum of integer-shifted
    copies (exact when the shift is a lattice vector).
    """
    base, frac = f.spec.lattice_shift(target, shift)
    out = np.zeros(target.dims)
    for cx in (0, 1):
        for cy in (0, 1):
            for cz in (0, 1):
                corner = (cx, cy, cz)
                w = 1.0
                for c, t in zip(corner, frac):
                    w *= t if c else 1.0 - t
                if w == 0.0:
                    continue
                b = tuple(bi + c for bi, c in zip(base, corner))
                out += w * _copy_shifted(f.values, target.dims, b)
    return out


def crop(f: ScalarField, target: GridSpec) -> ScalarField:
    """Restrict/extend ``f`` onto a lattice-aligned grid, zero-filling."""
    base, frac = f.spec.lattice_shift(target)
    if any(frac):
        raise GridError("crop requires lattice-aligned grids")
    return ScalarField(target, _copy_shifted(f.values, target.dims, base))


def sample_points(f: ScalarField, points: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of ``f`` at world ``points`` (shape ``(m, 3)``), zero outside."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    spec = f.spec
    q = (pts - np.asarray(spec.origin)) / np.asarray(spec.spacing)
    if spec.is_2d:
        q[:, 2] = 0.0
    r = np.round(q)
    q = np.where(np.abs(q - r) < _LATTICE_TOL, r, q)
    lo = np.floor(q).astype(np.int64)
    t = q - lo
    out = np.zeros(len(pts))
    dims = np.asarray(spec.dims)
    vals = f.values
    for cx in (0, 1):
        for cy in (0, 1):
            for cz in (0, 1):
                c = np.array([cx, cy, cz])
                w = np.prod(np.where(c == 1, t, 1.0 - t), axis=1)
                idx = lo + c
                ok = np.all((idx >= 0) & (idx < dims), axis=1) & (w != 0.0)
                if not np.any(ok):
                    continue
                ii = idx[ok]
                out[ok] += w[ok] * vals[ii[:, 0], ii[:, 1], ii[:, 2]]
    return out


def voxel_centers(spec: GridSpec) -> np.ndarray:
    """World coordinates of all voxel centers, shape ``(n, 3)`` in layout order."""
    axes = [spec.centers(a) for a in range(3)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1)


def box_mask(spec: GridSpec, lo: Sequence[float], hi: Sequence[float]) -> ScalarField:
    """Indicator of voxels whose centers lie in the closed box ``[lo, hi]``."""
    lo = list(lo) + [-np.inf] * (3 - len(lo))
    hi = list(hi) + [np.inf] * (3 - len(hi))
    inside = np.ones(spec.dims, dtype=bool)
    for ax in range(3):
        c = spec.centers(ax)
        tol = 1e-9 * spec.spacing[ax]
        sel = (c >= lo[ax] - tol) & (c <= hi[ax] + tol)
        shape = [1, 1, 1]
        shape[ax] = -1
        inside &= sel.reshape(shape)
    return ScalarField(spec, inside.astype(np.float64))
