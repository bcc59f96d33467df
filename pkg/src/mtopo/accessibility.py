"""Inaccessibility measure field and accessible/inaccessible/secluded decomposition.

For a tool assembly ``T = H u K`` with orientations ``Theta`` and sharp points
``k``, the inaccessibility of a query voxel ``x`` is the least overlap volume
between the obstacle density and the oriented tool placed so that a sharp
point touches ``x``::

    f(x) = min_{R, k} (rho_O * reflect(R T))(x - R k)

and the multi-tool field is the pointwise minimum over tools. Work is split
into (tool, orientation) tasks; each task produces its own minimum over sharp
points and tasks are reduced with a pointwise minimum, so the result does not
depend on scheduling.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .grid import RegionMasks, ScalarField, check_same_grid, implicit_union, sample_shifted, volume_integral
from .morphology import convolve
from .tools import ToolAssembly

log = logging.getLogger(__name__)

DEFAULT_LAMBDA = 0.01
DEFAULT_TAU = 0.5
DEFAULT_MEM_BUDGET_MB = 512.0


@dataclass(frozen=True)
class AccessResult:
    imf: ScalarField
    masks: RegionMasks
    secluded_volume: float
    domain_volume: float
    per_tool_imf: tuple[ScalarField, ...] | None = None

    @property
    def secluded_fraction(self) -> float:
        return self.secluded_volume / self.domain_volume if self.domain_volume > 0 else 0.0

    def passes(self, tolerance: float) -> bool:
        """``tolerance`` is a fraction of the design-domain volume."""
        return self.secluded_fraction <= tolerance


def _task_bytes(rho_O: ScalarField, tool: ToolAssembly, R) -> int:
    plan = tool.plan_for(rho_O.spec, R)
    padded = int(np.prod(plan.padded_dims))
    # real + complex workspaces plus the sampled output
    return 8 * (3 * padded + 2 * rho_O.spec.n)


def _orientation_min(rho_O: ScalarField, tool: ToolAssembly, R, dump=None) -> np.ndarray:
    ot = tool.oriented(R)
    plan = tool.plan_for(rho_O.spec, R)
    g = convolve(rho_O, ot.reflected, plan=plan, b_key="tool")
    if dump is not None:
        dump(tool, R, g)
    best = None
    for rk in ot.sharp_points:
        h = sample_shifted(g, rho_O.spec, shift=-rk)
        best = h if best is None else np.minimum(best, h)
    return best


def imf_fields(rho_O: ScalarField, tools: Sequence[ToolAssembly], *, threads: int = 1,
               mem_budget_mb: float | None = None, dump=None) -> list[ScalarField]:
    """Unnormalized single-tool inaccessibility fields (volume units), one per tool."""
    if len(tools) == 0:
        raise ValueError("at least one tool assembly is required")
    if rho_O.values.min() < 0 or rho_O.values.max() > 1:
        raise ValueError("obstacle density must lie in [0, 1]")
    tasks = [(i, R) for i, t in enumerate(tools) for R in t.orientations]
    budget = (DEFAULT_MEM_BUDGET_MB if mem_budget_mb is None else mem_budget_mb) * 2**20
    per_task = max(_task_bytes(rho_O, tools[i], R) for i, R in tasks)
    batch = max(1, int(budget // per_task))
    threads = max(1, int(threads))
    partial: list[np.ndarray | None] = [None] * len(tools)

    def run(task):
        i, R = task
        return i, _orientation_min(rho_O, tools[i], R, dump)

    for start in range(0, len(tasks), batch):
        chunk = tasks[start:start + batch]
        if threads > 1 and len(chunk) > 1:
            with ThreadPoolExecutor(max_workers=min(threads, len(chunk))) as pool:
                results = list(pool.map(run, chunk))
        else:
            results = [run(t) for t in chunk]
        for i, field in results:
            partial[i] = field if partial[i] is None else np.minimum(partial[i], field)
    return [ScalarField(rho_O.spec, p) for p in partial]


def imf_single_tool(rho_O: ScalarField, tool: ToolAssembly, **kw) -> ScalarField:
    return imf_fields(rho_O, [tool], **kw)[0]


def imf_multi_tool(rho_O: ScalarField, tools: Sequence[ToolAssembly], **kw) -> ScalarField:
    fields = imf_fields(rho_O, tools, **kw)
    out = fields[0].values
    for f in fields[1:]:
        out = np.minimum(out, f.values)
    return ScalarField(rho_O.spec, out)


def normalize_and_classify(f_imf: ScalarField, rho_omega: ScalarField, domain: ScalarField | None = None,
                           lam: float = DEFAULT_LAMBDA, tau: float = DEFAULT_TAU,
                           per_tool: Sequence[ScalarField] | None = None) -> AccessResult:
    """Normalize by the maximum over the design domain, apply the allowance, split the domain.

    ``B = {f/max f > lam}``, ``A = domain - B``, secluded ``= B`` where
    ``rho_omega <= tau``. Normalized values at or below ``lam`` are zeroed.
    """
    if lam < 0 or lam >= 1:
        raise ValueError(f"allowance lambda must lie in [0, 1), got {lam}")
    if not 0 < tau < 1:
        raise ValueError(f"threshold tau must lie in (0, 1), got {tau}")
    if domain is None:
        domain = ScalarField.full(f_imf.spec, 1.0)
    check_same_grid(f_imf, rho_omega, domain)
    inside = domain.values > 0
    f = np.where(inside, f_imf.values, 0.0)
    fmax = f.max() if inside.any() else 0.0
    fbar = f / fmax if fmax > 0 else np.zeros_like(f)
    b = inside & (fbar > lam)
    fbar = np.where(b, fbar, 0.0)
    a = inside & ~b
    gamma = b & (rho_omega.values <= tau)
    spec = f_imf.spec
    masks = RegionMasks(
        ScalarField(spec, a.astype(np.float64)),
        ScalarField(spec, b.astype(np.float64)),
        ScalarField(spec, gamma.astype(np.float64)),
    )
    return AccessResult(
        imf=ScalarField(spec, fbar),
        masks=masks,
        secluded_volume=volume_integral(masks.secluded),
        domain_volume=volume_integral(ScalarField(spec, inside.astype(np.float64))),
        per_tool_imf=tuple(per_tool) if per_tool is not None else None,
    )


def accessibility(rho_omega: ScalarField, fixtures: ScalarField, domain: ScalarField,
                  tools: Sequence[ToolAssembly], lam: float = DEFAULT_LAMBDA, tau: float = DEFAULT_TAU,
                  keep_per_tool: bool = False, **kw) -> AccessResult:
    """Full pipeline for a density design: obstacle union, IMF over all tools, classification."""
    rho_O = implicit_union(rho_omega, fixtures)
    fields = imf_fields(rho_O, tools, **kw)
    combined = fields[0].values
    for f in fields[1:]:
        combined = np.minimum(combined, f.values)
    return normalize_and_classify(ScalarField(rho_O.spec, combined), rho_omega, domain, lam, tau,
                                  per_tool=fields if keep_per_tool else None)


def access_check(design: ScalarField, scene, tools: Sequence[ToolAssembly], lam: float = DEFAULT_LAMBDA,
                 tau: float = DEFAULT_TAU, **kw) -> AccessResult:
    """Manufacturability verdict for a finished (binary) design inside ``scene``."""
    if not design.is_binary():
        raise ValueError("access_check expects a binary design; threshold it first")
    check_same_grid(design, scene.domain)
    omega = ScalarField(design.spec, design.values * scene.domain.values)
    return accessibility(omega, scene.fixtures, scene.domain, tools, lam, tau, **kw)
