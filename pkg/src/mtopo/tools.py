"""Tool assemblies (holder + cutter), sharp points and primitive tool builders."""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .grid import GridSpec, ScalarField, voxel_centers
from .morphology import ConvolutionPlan, Orientation, oriented_indicator, reflect


class ToolError(ValueError):
    pass


def _face_offsets(is_2d: bool):
    offs = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0)]
    if not is_2d:
        offs += [(0, 0, 1), (0, 0, -1)]
    return offs


def _shift_mask(mask: np.ndarray, off) -> np.ndarray:
    """``out[i] = mask[i + off]`` with False outside."""
    out = np.zeros_like(mask)
    src = tuple(slice(max(o, 0), n + min(o, 0)) for o, n in zip(off, mask.shape))
    dst = tuple(slice(max(-o, 0), n + min(-o, 0)) for o, n in zip(off, mask.shape))
    out[dst] = mask[src]
    return out


def boundary_voxels(inside: np.ndarray, blocked: np.ndarray, is_2d: bool) -> np.ndarray:
    """Voxels of ``inside`` with at least one face neighbour outside ``blocked``."""
    exposed = np.zeros_like(inside)
    for off in _face_offsets(is_2d):
        exposed |= ~_shift_mask(blocked, off)
    return inside & exposed


def default_sharp_points(holder: ScalarField, cutter: ScalarField, stride: int = 1) -> np.ndarray:
    """Cutter boundary voxels whose outward neighbour is free of the whole assembly.

    Returned as local coordinates (rows, lexicographic voxel order), keeping
    every ``stride``-th candidate.
    """
    if stride < 1:
        raise ToolError("sharp point stride must be >= 1")
    k = cutter.values > 0
    t = k | (holder.values > 0)
    cand = boundary_voxels(k, t, cutter.spec.is_2d)
    pts = voxel_centers(cutter.spec)[cand.reshape(-1)]
    return pts[::stride]


@dataclass
class OrientedTool:
    orientation: Orientation
    assembly: ScalarField       # binary R T
    reflected: ScalarField      # binary -R T
    cutter: ScalarField         # binary R K
    sharp_points: np.ndarray    # R k, shape (m, 3)


@dataclass(eq=False)
class ToolAssembly:
    """Holder ``H`` and cutter ``K`` on one local grid whose lattice contains the local origin."""

    holder: ScalarField
    cutter: ScalarField
    sharp_points: np.ndarray
    orientations: tuple[Orientation, ...]
    name: str = ""
    _oriented: dict = field(default_factory=dict, init=False, repr=False)
    _plans: dict = field(default_factory=dict, init=False, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False)

    def __post_init__(self):
        hs, ks = self.holder.spec, self.cutter.spec
        if not hs.matches(ks):
            raise ToolError("holder and cutter must share one local grid")
        if not ks.is_isotropic():
            raise ToolError(f"tool grid must be isotropic, got spacing {ks.spacing}")
        h = ks.h
        q = np.asarray(ks.origin[: ks.ndim]) / h
        if not np.allclose(q, np.round(q), atol=1e-9):
            raise ToolError(f"tool grid origin {ks.origin} is not on the lattice through the local origin")
        if not (self.holder.is_binary() and self.cutter.is_binary()):
            raise ToolError("holder and cutter must be binary indicators")
        kmask = self.cutter.values > 0
        if np.any(kmask & (self.holder.values > 0)):
            raise ToolError("holder and cutter overlap")
        if not kmask.any():
            raise ToolError("cutter is empty")
        self.orientations = tuple(self.orientations)
        if not self.orientations:
            raise ToolError("tool needs at least one orientation")
        if ks.is_2d and not all(o.is_planar for o in self.orientations):
            raise ToolError("2D tools only support rotations about +z")
        pts = np.atleast_2d(np.asarray(self.sharp_points, dtype=np.float64))
        if pts.size == 0:
            raise ToolError("tool needs at least one sharp point")
        if pts.shape[1] == 2:
            pts = np.column_stack([pts, np.full(len(pts), ks.origin[2])])
        idx = np.round((pts - np.asarray(ks.origin)) / np.asarray(ks.spacing)).astype(int)
        if ks.is_2d:
            idx[:, 2] = 0
        if np.any(idx < 0) or np.any(idx >= np.asarray(ks.dims)):
            raise ToolError("sharp point outside the tool grid")
        on_cutter = kmask[idx[:, 0], idx[:, 1], idx[:, 2]]
        if not on_cutter.all():
            raise ToolError("sharp point not inside the cutter")
        edge = boundary_voxels(kmask, kmask, ks.is_2d)
        if not edge[idx[:, 0], idx[:, 1], idx[:, 2]].all():
            raise ToolError("sharp point not on the cutter boundary")
        self.sharp_points = pts

    @classmethod
    def from_fields(cls, holder: ScalarField, cutter: ScalarField, orientations: Sequence[Orientation],
                    stride: int = 1, sharp_points=None, name: str = "") -> "ToolAssembly":
        if sharp_points is None:
            sharp_points = default_sharp_points(holder, cutter, stride)
            if len(sharp_points) == 0:
                raise ToolError("cutter has no exposed boundary voxels")
        return cls(holder, cutter, sharp_points, tuple(orientations), name)

    @property
    def spec(self) -> GridSpec:
        return self.cutter.spec

    def assembly(self) -> ScalarField:
        return ScalarField(self.spec, np.maximum(self.holder.values, self.cutter.values))

    def with_sharp_points(self, pts) -> "ToolAssembly":
        return ToolAssembly(self.holder, self.cutter, pts, self.orientations, self.name)

    def with_orientations(self, orientations) -> "ToolAssembly":
        return ToolAssembly(self.holder, self.cutter, self.sharp_points, tuple(orientations), self.name)

    def oriented(self, R: Orientation) -> OrientedTool:
        key = R.quat
        with self._lock:
            hit = self._oriented.get(key)
        if hit is not None:
            return hit
        rt = oriented_indicator(self.assembly(), R)
        rk = oriented_indicator(self.cutter, R)
        ot = OrientedTool(R, rt, reflect(rt), rk, R.apply(self.sharp_points))
        with self._lock:
            self._oriented.setdefault(key, ot)
            return self._oriented[key]

    def plan_for(self, target: GridSpec, R: Orientation) -> ConvolutionPlan:
        """Convolution plan against ``target`` with the tool spectrum cached across calls."""
        ot = self.oriented(R)
        key = (target, R.quat)
        with self._lock:
            plan = self._plans.get(key)
            if plan is None:
                plan = ConvolutionPlan(target, ot.reflected.spec)
                self._plans[key] = plan
        return plan


# primitive tool descriptors --------------------------------------------------

def _profile_mask(spec: GridSpec, prims, axis_start: float) -> tuple[np.ndarray, float]:
    """Stack primitives along the tool axis starting at ``axis_start``."""
    pts = voxel_centers(spec)
    ax = 1 if spec.is_2d else 2
    lateral = [0] if spec.is_2d else [0, 1]
    mask = np.zeros(spec.n, dtype=bool)
    z0 = axis_start
    eps = 1e-9 * spec.spacing[0]
    for p in prims:
        shape = p.get("shape", "cylinder")
        length = float(p["length"])
        if length <= 0:
            raise ToolError("primitive length must be > 0")
        along = (pts[:, ax] >= z0 - eps) & (pts[:, ax] < z0 + length - eps)
        if shape == "cylinder":
            r = float(p["radius"])
            rr = np.sqrt(sum(pts[:, a] ** 2 for a in lateral))
            across = rr <= r + eps
        elif shape == "box":
            size = [float(s) for s in p["size"]]
            across = np.ones(spec.n, dtype=bool)
            for a, s in zip(lateral, size):
                across &= np.abs(pts[:, a]) <= s / 2 + eps
        else:
            raise ToolError(f"unknown primitive shape {shape!r}")
        mask |= along & across
        z0 += length
    return mask.reshape(spec.dims), z0


def build_primitive_tool(spacing: float, cutter: Sequence[dict], holder: Sequence[dict],
                         orientations: Sequence[Orientation], planar: bool, stride: int = 1,
                         name: str = "") -> ToolAssembly:
    """Voxelize a stacked-primitive tool.

    The cutter stack starts at the local origin and runs along the canonical
    tool axis (+y in 2D, +z in 3D); the holder stack continues after it.
    Cylinders are centered on the axis (a ``2r``-wide slab in 2D); boxes take
    ``size`` across the axis. A voxel belongs to a primitive when its center
    does.
    """
    if not cutter:
        raise ToolError("cutter needs at least one primitive")
    h = float(spacing)

    def extent(prims):
        length = sum(float(p["length"]) for p in prims)
        width = 0.0
        for p in prims:
            if p.get("shape", "cylinder") == "cylinder":
                width = max(width, float(p["radius"]))
            else:
                width = max(width, max(float(s) for s in p["size"]) / 2)
        return length, width

    lc, wc = extent(cutter)
    lh, wh = extent(holder) if holder else (0.0, 0.0)
    half = int(np.ceil(max(wc, wh) / h + 1e-9))
    n_axis = int(np.ceil((lc + lh) / h - 1e-9)) + 1
    if planar:
        spec = GridSpec((2 * half + 1, n_axis, 1), (h, h, h), (-half * h, 0.0, 0.0))
    else:
        spec = GridSpec((2 * half + 1, 2 * half + 1, n_axis), (h, h, h), (-half * h, -half * h, 0.0))
    kmask, end = _profile_mask(spec, cutter, 0.0)
    hmask = np.zeros_like(kmask)
    if holder:
        hmask, _ = _profile_mask(spec, holder, end)
    hmask &= ~kmask
    k = ScalarField(spec, kmask.astype(np.float64))
    hf = ScalarField(spec, hmask.astype(np.float64))
    return ToolAssembly.from_fields(hf, k, orientations, stride=stride, name=name)
