"""Rigid transforms of voxel fields and FFT-based linear convolution.

The convolution of an obstacle density with a reflected, rotated tool
indicator gives the overlap volume for every lattice translation of the tool;
its positive support is the translational slice of the C-obstacle. Convolving
the free translations with the rotated cutter gives the swept (reachable)
region.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

from .grid import GridError, GridSpec, ScalarField, crop, sample_points, threshold, voxel_centers

# Convolution outputs smaller than this (times dv) are FFT round-off.
SNAP_FLOOR = 1e-12
# Relative round-off model: |error| <~ SNAP_REL * ||a||_2 * ||b||_2 * dv
SNAP_REL = 1e-13

REBINARIZE_TAU = 0.5


class UnsupportedConfigurationError(ValueError):
    pass


def _snap_lattice(m: np.ndarray) -> np.ndarray:
    """Round a near signed-permutation matrix to exact entries; leave others untouched."""
    r = np.round(m)
    if np.all(np.abs(m - r) < 1e-12) and np.all(np.abs(r).sum(axis=1) == 1):
        return r + 0.0
    return m


@dataclass(frozen=True)
class Orientation:
    """A rotation about the tool's local origin.

    ``quat`` is a unit quaternion ``(w, x, y, z)`` with ``w >= 0``. Planar
    orientations also carry ``angle`` in ``[0, 2*pi)`` (rotation about +z).
    """

    quat: tuple[float, float, float, float]
    id: int = 0
    angle: float | None = None

    def __post_init__(self):
        q = np.asarray(self.quat, dtype=np.float64)
        norm = np.linalg.norm(q)
        if q.shape != (4,) or not np.isfinite(norm) or norm == 0:
            raise ValueError(f"invalid quaternion {self.quat}")
        q = q / norm
        if q[0] < 0 or (q[0] == 0 and next(v for v in q[1:] if v != 0) < 0):
            q = -q
        object.__setattr__(self, "quat", tuple(float(v) for v in q))
        if self.angle is not None:
            object.__setattr__(self, "angle", float(self.angle) % (2 * math.pi))

    @classmethod
    def identity(cls, id: int = 0) -> "Orientation":
        return cls((1.0, 0.0, 0.0, 0.0), id)

    @classmethod
    def from_angle(cls, angle: float, id: int = 0) -> "Orientation":
        a = float(angle) % (2 * math.pi)
        return cls((math.cos(a / 2), 0.0, 0.0, math.sin(a / 2)), id, a)

    @classmethod
    def from_axis_angle(cls, axis, angle: float, id: int = 0) -> "Orientation":
        ax = np.asarray(axis, dtype=np.float64)
        n = np.linalg.norm(ax)
        if ax.shape != (3,) or n == 0:
            raise ValueError(f"invalid rotation axis {axis}")
        ax = ax / n
        s = math.sin(angle / 2)
        return cls((math.cos(angle / 2), *(ax * s)), id)

    @classmethod
    def from_direction(cls, direction, id: int = 0) -> "Orientation":
        """Rotation taking the canonical tool axis onto ``direction``.

        The canonical axis (cutter tip towards holder) is +y for 2-component
        directions and +z for 3-component ones. ``(+1, 0)`` therefore means
        the tool sits on the +x side of the point it cuts.
        """
        d = np.asarray(direction, dtype=np.float64)
        if d.shape == (2,):
            if not np.any(d):
                raise ValueError("zero direction")
            return cls.from_angle(math.atan2(d[1], d[0]) - math.pi / 2, id)
        if d.shape != (3,) or not np.any(d):
            raise ValueError(f"invalid direction {direction}")
        d = d / np.linalg.norm(d)
        z = np.array([0.0, 0.0, 1.0])
        c = float(np.dot(z, d))
        if c < -1 + 1e-12:
            return cls((0.0, 1.0, 0.0, 0.0), id)
        axis = np.cross(z, d)
        w = 1.0 + c
        return cls((w, *axis), id)

    @property
    def is_planar(self) -> bool:
        return abs(self.quat[1]) < 1e-12 and abs(self.quat[2]) < 1e-12

    def matrix(self) -> np.ndarray:
        w, x, y, z = self.quat
        m = np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ])
        # lattice-preserving rotations must map voxel centers exactly
        return _snap_lattice(m)

    def apply(self, points) -> np.ndarray:
        return np.atleast_2d(np.asarray(points, dtype=np.float64)) @ self.matrix().T

    def to_json(self) -> dict:
        out = {"id": self.id, "quaternion": list(self.quat)}
        if self.angle is not None:
            out["angle"] = self.angle
        return out


def rotate_resample(f: ScalarField, R: Orientation, binarize: bool = False) -> ScalarField:
    """Rotate ``f`` about the world origin and resample on the same lattice.

    The output grid is the tight axis-aligned box around the rotated support,
    with voxel centers on the input's lattice. Values are multilinear samples
    of ``f`` at the inverse-rotated output centers (zero outside). With
    ``binarize`` the result is re-thresholded at 0.5.
    """
    spec = f.spec
    if not spec.is_isotropic():
        raise UnsupportedConfigurationError(f"rotation needs isotropic spacing, got {spec.spacing}")
    if spec.is_2d and not R.is_planar:
        raise UnsupportedConfigurationError("2D fields only support rotations about +z")
    bounds = f.nonzero_bounds()
    if bounds is None:
        return ScalarField.zeros(spec)
    h = spec.h
    o = np.asarray(spec.origin)
    lo = o + np.asarray(bounds[0]) * h - h
    hi = o + np.asarray(bounds[1]) * h + h
    if spec.is_2d:
        lo[2] = hi[2] = o[2]
    corners = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
    M = R.matrix()
    rc = corners @ M.T
    m_lo = np.floor((rc.min(axis=0) - o) / h + 1e-9).astype(int)
    m_hi = np.ceil((rc.max(axis=0) - o) / h - 1e-9).astype(int)
    if spec.is_2d:
        m_lo[2] = m_hi[2] = 0
    out_spec = GridSpec(tuple(m_hi - m_lo + 1), spec.spacing, tuple(o + m_lo * h))
    pts = voxel_centers(out_spec)
    src = pts @ M  # row-vector form of R^T p
    if spec.is_2d:
        src[:, 2] = o[2]
    vals = sample_points(f, src)
    vals[np.abs(vals) < 1e-12] = 0.0
    out = ScalarField(out_spec, vals.reshape(out_spec.dims))
    out = trim(out)
    return threshold(out, REBINARIZE_TAU) if binarize else out


def trim(f: ScalarField) -> ScalarField:
    """Drop all-zero border slabs (keeps at least one voxel)."""
    b = f.nonzero_bounds()
    if b is None:
        return f
    lo, hi = b
    spec = f.spec
    origin = tuple(o + l * s for o, l, s in zip(spec.origin, lo, spec.spacing))
    new = GridSpec(tuple(h - l + 1 for l, h in zip(lo, hi)), spec.spacing, origin)
    sl = tuple(slice(l, h + 1) for l, h in zip(lo, hi))
    return ScalarField(new, f.values[sl])


def reflect(f: ScalarField) -> ScalarField:
    """Point reflection through the world origin: ``out(x) = f(-x)``."""
    spec = f.spec
    up = spec.upper()
    origin = [-u for u in up]
    if spec.is_2d:
        origin[2] = spec.origin[2]
    return ScalarField(GridSpec(spec.dims, spec.spacing, tuple(origin)), f.values[::-1, ::-1, ::-1])


@dataclass
class ConvolutionPlan:
    """Padded FFT geometry for convolving fields on two given grids.

    ``padded_dims >= dims_a + dims_b - 1`` so the result is a linear (not
    circular) convolution. A spectrum for either operand can be cached.
    """

    a_spec: GridSpec
    b_spec: GridSpec
    out_spec: GridSpec = field(init=False)
    padded_dims: tuple[int, ...] = field(init=False)
    axes: tuple[int, ...] = field(init=False)
    dv: float = field(init=False)
    cached: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        a, b = self.a_spec, self.b_spec
        if not a.same_spacing(b):
            raise GridError(f"spacing mismatch: {a.spacing} vs {b.spacing}")
        # a single-layer operand next to a 3D one is a 3D slab
        planar = a.is_2d and b.is_2d
        self.axes = (0, 1) if planar else (0, 1, 2)
        self.dv = a.dv if planar else float(np.prod(a.spacing))
        out_dims = tuple(na + nb - 1 for na, nb in zip(a.dims, b.dims))
        origin = [oa + ob for oa, ob in zip(a.origin, b.origin)]
        if planar:
            origin[2] = a.origin[2]
        self.out_spec = GridSpec(out_dims, a.spacing, tuple(origin))
        self.padded_dims = tuple(sfft.next_fast_len(out_dims[ax], real=True) for ax in self.axes)

    def matches(self, a: GridSpec, b: GridSpec) -> bool:
        return a.matches(self.a_spec) and b.matches(self.b_spec)

    def spectrum(self, f: ScalarField, key=None) -> np.ndarray:
        if key is not None and key in self.cached:
            return self.cached[key]
        arr = f.values[:, :, 0] if len(self.axes) == 2 else f.values
        spec = sfft.rfftn(arr, s=self.padded_dims, axes=self.axes)
        if key is not None:
            self.cached[key] = spec
        return spec


def convolve(a: ScalarField, b: ScalarField, plan: ConvolutionPlan | None = None,
             a_key=None, b_key=None) -> ScalarField:
    """Discrete linear convolution scaled by the voxel measure.

    ``out(t) = dv * sum_x a(x) b(t - x)``; for indicators of an obstacle and a
    reflected tool this is the overlap volume at translation ``t``. Round-off
    below the noise floor is snapped to exactly zero.
    """
    if plan is None:
        plan = ConvolutionPlan(a.spec, b.spec)
    elif not plan.matches(a.spec, b.spec):
        raise GridError("convolution plan does not match the operand grids")
    spec_out = plan.out_spec
    prod = plan.spectrum(a, a_key) * plan.spectrum(b, b_key)
    full = sfft.irfftn(prod, s=plan.padded_dims, axes=plan.axes)
    if len(plan.axes) == 2:
        vals = full[: spec_out.dims[0], : spec_out.dims[1]][:, :, None]
    else:
        vals = full[: spec_out.dims[0], : spec_out.dims[1], : spec_out.dims[2]]
    dv = plan.dv
    vals = vals * dv
    noise = dv * max(SNAP_FLOOR, SNAP_REL * float(np.linalg.norm(a.values)) * float(np.linalg.norm(b.values)))
    vals[np.abs(vals) < noise] = 0.0
    return ScalarField(spec_out, vals)


def oriented_indicator(f: ScalarField, R: Orientation) -> ScalarField:
    """Rotated, re-binarized copy of a tool indicator."""
    return rotate_resample(f, R, binarize=True)


def cobstacle_slice(rho_O: ScalarField, tool: ScalarField, R: Orientation) -> ScalarField:
    """Collision measure over lattice translations of the rotated tool assembly."""
    return convolve(rho_O, reflect(oriented_indicator(tool, R)))


def translation_window(domain: GridSpec, cutter: GridSpec) -> GridSpec:
    """Lattice of translations that place some cutter voxel inside ``domain``."""
    up = cutter.upper()
    origin = [o - u for o, u in zip(domain.origin, up)]
    dims = [nd + nc - 1 for nd, nc in zip(domain.dims, cutter.dims)]
    if domain.is_2d:
        origin[2] = domain.origin[2]
        dims[2] = 1
    return GridSpec(tuple(dims), domain.spacing, tuple(origin))


def free_translations(collision: ScalarField, window: GridSpec, tol: float = 0.0) -> ScalarField:
    """Complement of the C-obstacle slice restricted to ``window``.

    Translations whose collision volume is at most ``tol`` count as free;
    a relative slack of 1e-9 absorbs FFT round-off on the comparison.
    """
    c = crop(collision, window)
    return ScalarField(window, (c.values <= tol * (1 + 1e-9)).astype(np.float64))


def sweep_accessible(D_free: ScalarField, cutter: ScalarField, R: Orientation,
                     domain: ScalarField | None = None) -> ScalarField:
    """Points visited by the rotated cutter over all free translations.

    With ``domain`` the result is cropped to its grid and intersected with it.
    """
    rk = oriented_indicator(cutter, R)
    s = convolve(D_free, rk)
    hit = ScalarField(s.spec, (s.values > 0).astype(np.float64))
    if domain is None:
        return hit
    hit = crop(hit, domain.spec)
    return ScalarField(domain.spec, hit.values * (domain.values > 0))
