"""Greedy machining process planning.

Collisions are checked against the final part plus fixtures (removed stock
is air), so each oriented tool has a fixed reachable sweep. Every round picks
the oriented tool that removes the most of the remaining negative space.

With an allowance ``lam > 0`` a placement is admissible when its collision
volume is at most ``lam`` times the largest inaccessibility value over the
design domain, the same relaxation the accessibility analysis applies. Every
voxel that analysis calls accessible is then covered by some sweep, so the
residual never exceeds the secluded volume.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .accessibility import imf_multi_tool
from .grid import ScalarField, check_same_grid, implicit_union
from .morphology import Orientation, convolve, free_translations, sweep_accessible, translation_window
from .tools import ToolAssembly

log = logging.getLogger(__name__)


@dataclass
class PlanStep:
    tool_index: int
    orientation: Orientation
    removed: ScalarField
    removed_volume: float
    stock_after: ScalarField
    residual_volume: float


@dataclass
class ProcessPlan:
    steps: list[PlanStep] = field(default_factory=list)
    residual_volume: float = 0.0
    negative_volume: float = 0.0

    def to_json(self, tools: Sequence[ToolAssembly] | None = None) -> dict:
        out = []
        for n, s in enumerate(self.steps):
            row = {
                "step": n,
                "tool_index": s.tool_index,
                "orientation": s.orientation.to_json(),
                "removed_volume": s.removed_volume,
                "residual_volume": s.residual_volume,
            }
            if tools is not None and tools[s.tool_index].name:
                row["tool_name"] = tools[s.tool_index].name
            out.append(row)
        return {"steps": out, "negative_volume": self.negative_volume, "residual_volume": self.residual_volume}

    def write_json(self, path, tools=None) -> None:
        Path(path).write_text(json.dumps(self.to_json(tools), indent=2) + "\n")


def reachable_sweep(obstacle: ScalarField, tool: ToolAssembly, R: Orientation, tol: float = 0.0) -> np.ndarray:
    """Boolean mask of domain voxels touched by the cutter over admissible translations."""
    ot = tool.oriented(R)
    collision = convolve(obstacle, ot.reflected, plan=tool.plan_for(obstacle.spec, R), b_key="tool")
    window = translation_window(obstacle.spec, ot.cutter.spec)
    free = free_translations(collision, window, tol)
    hit = sweep_accessible(free, ot.cutter, Orientation.identity(), ScalarField.full(obstacle.spec, 1.0))
    return hit.values > 0


def collision_allowance(obstacle: ScalarField, domain: ScalarField, tools: Sequence[ToolAssembly],
                        lam: float) -> float:
    """Absolute collision volume matching the normalized allowance ``lam``."""
    if lam <= 0:
        return 0.0
    f = imf_multi_tool(obstacle, tools).values
    inside = domain.values > 0
    return lam * float(f[inside].max()) if inside.any() else 0.0


def removable_region(stock: ScalarField, target: ScalarField, fixtures: ScalarField,
                     tool: ToolAssembly, R: Orientation, tol: float = 0.0) -> ScalarField:
    """Stock voxels outside the target that an admissible placement of the cutter covers."""
    check_same_grid(stock, target, fixtures)
    if np.any((target.values > 0) & (stock.values <= 0)):
        raise ValueError("target must be contained in stock")
    sweep = reachable_sweep(implicit_union(target, fixtures), tool, R, tol)
    rem = sweep & (stock.values > 0) & (target.values <= 0)
    return stock.replace(rem.astype(np.float64))


def greedy_plan(design: ScalarField, scene, tools: Sequence[ToolAssembly], lam: float = 0.0,
                stock: ScalarField | None = None) -> ProcessPlan:
    """Remove negative space greedily; ties go to the lowest tool index, then orientation order."""
    check_same_grid(design, scene.domain)
    dv = design.spec.dv
    target = design.replace(((design.values > 0) & (scene.domain.values > 0)).astype(np.float64))
    cur = (scene.domain.values > 0) if stock is None else (stock.values > 0)
    # fixtures are never stock to be removed
    cur = (cur & (scene.fixtures.values <= 0)) | (target.values > 0)
    obstacle = implicit_union(target, scene.fixtures)
    keep = target.values > 0
    tol = collision_allowance(obstacle, scene.domain, tools, lam)

    candidates = []
    for ti, tool in enumerate(tools):
        for R in sorted(tool.orientations, key=lambda o: o.id):
            candidates.append((ti, R, reachable_sweep(obstacle, tool, R, tol) & ~keep))

    negative = cur & ~keep
    plan = ProcessPlan(negative_volume=dv * int(negative.sum()))
    while True:
        best = None
        best_count = 0
        for ti, R, sweep in candidates:
            count = int(np.count_nonzero(sweep & negative))
            if count > best_count:
                best, best_count = (ti, R, sweep), count
        if best is None:
            break
        ti, R, sweep = best
        removed = sweep & negative
        negative = negative & ~removed
        cur = cur & ~removed
        step = PlanStep(ti, R, design.replace(removed.astype(np.float64)), dv * best_count,
                        design.replace(cur.astype(np.float64)), dv * int(negative.sum()))
        plan.steps.append(step)
        log.info("step %d: tool %d orientation %d removes %.6g, residual %.6g",
                 len(plan.steps), ti, R.id, step.removed_volume, step.residual_volume)
    plan.residual_volume = dv * int(negative.sum())
    return plan
