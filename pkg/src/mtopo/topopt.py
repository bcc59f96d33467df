"""SIMP compliance minimization with an accessibility penalty on the sensitivities.

Per iteration: project the design variables, solve the elasticity problem,
take the compliance sensitivity, (when the accessibility weight is nonzero)
compute the inaccessibility field of the projected design plus fixtures,
blend the two normalized fields, smooth, and apply an optimality-criteria
update that holds the projected volume at its target.

Sign convention: the blended field is an *importance* (larger = keep
material). The normalized compliance term is ``-dphi/dxi / max|dphi/dxi|``
in ``[0, 1]``; the accessibility filter is 1 on secluded voxels and the
normalized inaccessibility on solid voxels, so it resists removing material
where removal would leave unreachable negative space.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from . import fea
from .accessibility import AccessResult, accessibility
from .grid import GridSpec, ScalarField, check_same_grid
from .scene import Scene
from .tools import ToolAssembly

log = logging.getLogger(__name__)


class OCError(RuntimeError):
    pass


class OptimizationAborted(RuntimeError):
    def __init__(self, message: str, iteration: int):
        super().__init__(message)
        self.iteration = iteration


@dataclass
class TOConfig:
    volume_fraction: float = 0.5
    w_acc: float | str = 0.0
    w_acc_start: float = 0.1
    w_acc_end: float = 0.5
    w_acc_ramp: float = 0.4
    lam: float = 0.01
    beta: float = 2.0
    tau: float = 0.5
    filter_radius: float | None = None   # length units; None -> 1.5 voxels
    move_limit: float = 0.2
    oc_damping: float = 0.5
    oc_floor: float = 1e-3
    delta: float | None = None           # volume units; None -> 1e-3 * vol(domain)
    max_iter: int = 100
    secluded_tolerance: float = 0.01
    imf_stride: int = 1
    cg_tol: float = 1e-6
    checkpoint_every: int = 0

    def __post_init__(self):
        if not 0 < self.volume_fraction < 1:
            raise ValueError("volume_fraction must lie in (0, 1)")
        if isinstance(self.w_acc, str):
            if self.w_acc != "adaptive":
                raise ValueError("w_acc must be a number in [0, 1) or 'adaptive'")
            for v in (self.w_acc_start, self.w_acc_end):
                if not 0 <= v < 1:
                    raise ValueError("adaptive w_acc bounds must lie in [0, 1)")
            if not 0 < self.w_acc_ramp <= 1:
                raise ValueError("w_acc_ramp must lie in (0, 1]")
        elif not 0 <= self.w_acc < 1:
            raise ValueError("w_acc must lie in [0, 1)")
        if not self.beta > 0:
            raise ValueError("beta must be > 0")
        if not 0 < self.tau < 1:
            raise ValueError("tau must lie in (0, 1)")
        if not 0 <= self.lam < 1:
            raise ValueError("lambda must lie in [0, 1)")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not 0 <= self.move_limit <= 1:
            raise ValueError("move_limit must lie in [0, 1]")
        if not self.oc_damping > 0:
            raise ValueError("oc_damping must be > 0")
        if self.imf_stride < 1:
            raise ValueError("imf_stride must be >= 1")
        if self.secluded_tolerance < 0:
            raise ValueError("secluded_tolerance must be >= 0")

    @property
    def adaptive(self) -> bool:
        return isinstance(self.w_acc, str)

    def initial_weight(self) -> float:
        return self.w_acc_start if self.adaptive else float(self.w_acc)


@dataclass
class HistoryRow:
    iteration: int
    compliance: float
    volume_fraction: float
    secluded_fraction: float
    w_acc: float
    change: float


@dataclass
class TOState:
    xi: ScalarField
    rho: ScalarField
    iteration: int = 0
    history: list[HistoryRow] = field(default_factory=list)
    converged: bool = False
    final_compliance: float = math.nan
    access: AccessResult | None = None


# projection ------------------------------------------------------------------

def _heaviside(xi: np.ndarray, beta: float) -> np.ndarray:
    return 1.0 - np.exp(-beta * xi) + xi * math.exp(-beta)


def _heaviside_slope(xi: np.ndarray, beta: float) -> np.ndarray:
    return beta * np.exp(-beta * xi) + math.exp(-beta)


def heaviside_project(xi: ScalarField, beta: float) -> ScalarField:
    """``rho = 1 - exp(-beta xi) + xi exp(-beta)``: monotone, fixes 0 and 1."""
    if beta <= 0:
        raise ValueError("beta must be > 0")
    rho = np.clip(_heaviside(xi.values, beta), 0.0, 1.0)
    return xi.replace(rho)


# sensitivity shaping ---------------------------------------------------------

def build_access_filter(result: AccessResult, rho: ScalarField, tau: float) -> ScalarField:
    """Normalized IMF on solid voxels, 1 on secluded voxels, 0 elsewhere."""
    check_same_grid(result.imf, rho)
    solid = rho.values > tau
    s = np.where(solid, result.imf.values, 0.0)
    s = np.where(result.masks.secluded.values > 0, 1.0, s)
    return rho.replace(s)


def blend_sensitivity(s_phi_norm: ScalarField, s_imf: ScalarField, w_acc: float) -> ScalarField:
    if not 0 <= w_acc < 1:
        raise ValueError("w_acc must lie in [0, 1)")
    if w_acc == 0:
        return s_phi_norm
    check_same_grid(s_phi_norm, s_imf)
    return s_phi_norm.replace((1 - w_acc) * s_phi_norm.values + w_acc * s_imf.values)


class ConeFilter:
    """Linear cone smoothing ``sum w_ij s_j / sum w_ij`` over ``mask``, ``w = max(0, r - d)``."""

    def __init__(self, spec: GridSpec, radius: float, mask: np.ndarray | None = None):
        self.spec = spec
        self.mask = np.ones(spec.dims, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        dim = spec.ndim
        span = [int(math.ceil(radius / spec.spacing[a])) for a in range(dim)]
        grids = np.meshgrid(*[np.arange(-s, s + 1) * spec.spacing[a] for a, s in enumerate(span)], indexing="ij")
        dist = np.sqrt(sum(g ** 2 for g in grids))
        w = np.maximum(0.0, radius - dist)
        self.kernel = w if dim == 3 else w[:, :, None]
        m = self.mask.astype(np.float64)
        self.norm = ndimage.correlate(m, self.kernel, mode="constant", cval=0.0)

    def __call__(self, values: np.ndarray) -> np.ndarray:
        if not self.kernel.any():
            return values
        m = self.mask.astype(np.float64)
        num = ndimage.correlate(values * m, self.kernel, mode="constant", cval=0.0)
        return np.where(self.mask & (self.norm > 0), num / np.where(self.norm > 0, self.norm, 1.0), values)


# OC update -------------------------------------------------------------------

def _oc_candidate(xi, S, lmid, cfg, free):
    base = np.maximum(xi, cfg.oc_floor)
    pos = S > 0
    ratio = np.where(pos, S, 1.0) / lmid
    trial = np.where(pos, base * ratio ** cfg.oc_damping, -np.inf)
    lo = np.maximum(0.0, xi - cfg.move_limit)
    hi = np.minimum(1.0, xi + cfg.move_limit)
    new = np.clip(trial, lo, hi)
    return np.where(free, new, xi)


def oc_update(xi: ScalarField, S: ScalarField, cfg: TOConfig, *, free: np.ndarray | None = None,
              target_volume: float | None = None, smoother: Callable | None = None,
) -> ScalarField:
    """Optimality-criteria step on the design variables.

    ``S`` is the blended importance field (larger keeps material). Voxels
    with ``S <= 0`` take the downward move. The multiplier is bisected in log
    space so that the projected volume hits ``target_volume`` (default
    ``volume_fraction`` times the grid volume).
    """
    check_same_grid(xi, S)
    spec = xi.spec
    if not np.all(np.isfinite(S.values)):
        raise OCError("sensitivity field is not finite")
    free = np.ones(spec.dims, dtype=bool) if free is None else free
    if target_volume is None:
        target_volume = cfg.volume_fraction * spec.n * spec.dv
    s = smoother(S.values) if smoother is not None else S.values
    x = xi.values

    def volume(lmid):
        return spec.dv * float(np.sum(_heaviside(_oc_candidate(x, s, lmid, cfg, free), cfg.beta)))

    lo, hi = 1e-40, 1e40
    v_max, v_min = volume(lo), volume(hi)
    if target_volume >= v_max:
        return xi.replace(_oc_candidate(x, s, lo, cfg, free))
    if target_volume <= v_min:
        return xi.replace(_oc_candidate(x, s, hi, cfg, free))
    for _ in range(100):
        mid = math.sqrt(lo * hi)
        v = volume(mid)
        if abs(v - target_volume) <= 1e-7 * target_volume:
            return xi.replace(_oc_candidate(x, s, mid, cfg, free))
        if v > target_volume:
            lo = mid
        else:
            hi = mid
    mid = math.sqrt(lo * hi)
    v = volume(mid)
    if abs(v - target_volume) > 1e-4 * target_volume:
        raise OCError(f"OC bisection failed: volume {v:.6g} vs target {target_volume:.6g}")
    return xi.replace(_oc_candidate(x, s, mid, cfg, free))


# main loop -------------------------------------------------------------------

def initial_design(scene: Scene, cfg: TOConfig) -> ScalarField:
    xi = np.where(scene.domain.values > 0, cfg.volume_fraction, 0.0)
    xi = np.where(scene.retained.values > 0, 1.0, xi)
    xi = np.where(scene.void.values > 0, 0.0, xi)
    return ScalarField(scene.spec, xi)


def run_to(scene: Scene, tools: Sequence[ToolAssembly], load: fea.LoadCase, model: fea.MaterialModel,
           cfg: TOConfig, *, threads: int = 1, mem_budget_mb: float | None = None,
           callback: Callable[[TOState], None] | None = None) -> TOState:
    """Accessibility-constrained SIMP loop; stops when the L1 design change drops below ``delta``."""
    spec = scene.spec
    dv = spec.dv
    domain_volume = scene.domain_volume
    target = cfg.volume_fraction * domain_volume
    delta = cfg.delta if cfg.delta is not None else 1e-3 * domain_volume
    free = scene.free_mask()
    radius = cfg.filter_radius if cfg.filter_radius is not None else 1.5 * min(spec.spacing[: spec.ndim])
    smoother = ConeFilter(spec, radius, scene.domain.values > 0)
    tools = list(tools)
    w = cfg.initial_weight()
    if w > 0 and not tools:
        raise ValueError("accessibility weight is nonzero but no tools were given")
    ramp_step = 0.0
    if cfg.adaptive:
        ramp_step = (cfg.w_acc_end - cfg.w_acc_start) / max(1.0, cfg.w_acc_ramp * cfg.max_iter)

    xi = initial_design(scene, cfg)
    state = TOState(xi=xi, rho=heaviside_project(xi, cfg.beta))
    u_prev = None
    s_imf = None
    change = math.inf
    while change > delta and state.iteration < cfg.max_iter:
        it = state.iteration
        rho = heaviside_project(state.xi, cfg.beta)
        try:
            sol = fea.solve(rho, load, model, tol=cfg.cg_tol, x0=u_prev)
        except fea.FEAConvergenceError as exc:
            raise OptimizationAborted(f"FEA failed at iteration {it}: {exc}", it) from exc
        u_prev = sol.displacements
        dphi = fea.compliance_sensitivity(rho, sol, model).values * _heaviside_slope(state.xi.values, cfg.beta)
        importance = np.where(free, -dphi, 0.0)
        m = importance.max()
        s_phi = ScalarField(spec, importance / m if m > 0 else importance, check=False)

        sec = math.nan
        if w > 0:
            if s_imf is None or it % cfg.imf_stride == 0:
                res = accessibility(rho, scene.fixtures, scene.domain, tools, cfg.lam, cfg.tau,
                                    threads=threads, mem_budget_mb=mem_budget_mb)
                state.access = res
                s_imf = build_access_filter(res, rho, cfg.tau)
            sec = state.access.secluded_fraction
            S = blend_sensitivity(s_phi, s_imf, w)
        else:
            S = s_phi
        if not np.all(np.isfinite(S.values)) or not math.isfinite(sol.compliance):
            raise OptimizationAborted(f"non-finite values at iteration {it}", it)
        xi_new = oc_update(state.xi, S, cfg, free=free, target_volume=target, smoother=smoother)
        change = dv * float(np.abs(xi_new.values - state.xi.values).sum())
        vol_frac = dv * float(rho.values.sum()) / domain_volume
        state.history.append(HistoryRow(it, sol.compliance, vol_frac, sec, w, change))
        log.info("it %3d  phi %.6e  vol %.4f  secluded %.4f  w_acc %.3f  change %.4g",
                 it, sol.compliance, vol_frac, sec, w, change)
        if cfg.adaptive and not math.isnan(sec) and sec > cfg.secluded_tolerance:
            w = min(cfg.w_acc_end, w + ramp_step)
        state.xi = xi_new
        state.iteration += 1
        if callback is not None:
            callback(state)

    state.converged = change <= delta
    state.rho = heaviside_project(state.xi, cfg.beta)
    final = fea.solve(state.rho, load, model, tol=cfg.cg_tol, x0=u_prev)
    state.final_compliance = final.compliance
    return state
