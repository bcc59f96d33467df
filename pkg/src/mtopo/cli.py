"""mt command line: accessibility analysis, constrained optimization and process planning.

Exit codes: 0 success (feasible), 1 error, 2 completed but infeasible.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .accessibility import AccessResult, access_check
from .config import ConfigError, SceneConfig, load_config
from .fea import FEAConvergenceError
from .fieldio import FieldFormatError, read_field, write_field, write_vtk
from .grid import ScalarField, threshold
from .planner import greedy_plan
from .topopt import OCError, OptimizationAborted, run_to

log = logging.getLogger("mtopo")

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE = 0, 1, 2


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _dumper(out: Path | None):
    if out is None:
        return None
    out.mkdir(parents=True, exist_ok=True)

    def dump(tool, R, g):
        write_field(g, out / f"collision_{tool.name or 'tool'}_o{R.id}.voxfield", dtype="f64")
    return dump


def _access_summary(res: AccessResult, cfg: SceneConfig) -> dict:
    tol = cfg.to.secluded_tolerance
    per_tool = []
    dom = cfg.scene.domain.values > 0
    for i, (tool, f) in enumerate(zip(cfg.tools, res.per_tool_imf or ())):
        vals = f.values[dom]
        per_tool.append({
            "tool_index": i,
            "name": tool.name,
            "orientations": len(tool.orientations),
            "sharp_points": int(len(tool.sharp_points)),
            "imf_max": float(vals.max()) if vals.size else 0.0,
            "inaccessible_voxels": int(np.count_nonzero(vals > 0)),
        })
    return {
        "secluded_volume": res.secluded_volume,
        "secluded_fraction": res.secluded_fraction,
        "domain_volume": res.domain_volume,
        "tolerance": tol,
        "feasible": bool(res.passes(tol)),
        "lambda": cfg.to.lam,
        "tau": cfg.to.tau,
        "per_tool_stats": per_tool,
    }


def _analyze(cfg: SceneConfig, design: ScalarField, out: Path, args) -> tuple[dict, AccessResult]:
    res = access_check(design, cfg.scene, cfg.tools, cfg.to.lam, cfg.to.tau, keep_per_tool=True,
                       threads=args.threads, mem_budget_mb=args.mem_budget_mb,
                       dump=_dumper(out / "intermediate" if args.dump_intermediate else None))
    write_field(res.imf, out / "imf.voxfield")
    write_field(res.masks.accessible, out / "accessible.voxfield")
    write_field(res.masks.inaccessible, out / "inaccessible.voxfield")
    write_field(res.masks.secluded, out / "secluded.voxfield")
    summary = _access_summary(res, cfg)
    _write_json(out / "summary.json", summary)
    return summary, res


def _read_design(cfg: SceneConfig, path) -> ScalarField:
    design = read_field(path, cfg.spec)
    if not design.is_binary():
        design = threshold(design, cfg.to.tau)
    return design


def cmd_analyze(args) -> int:
    cfg = load_config(args.config)
    if not cfg.tools:
        raise ConfigError("analysis needs at least one tool", "tools")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary, _ = _analyze(cfg, _read_design(cfg, args.design), out, args)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK if summary["feasible"] else EXIT_INFEASIBLE


def cmd_optimize(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    every = cfg.to.checkpoint_every

    def checkpoint(state):
        if every and state.iteration % every == 0:
            write_field(state.xi, out / f"xi_{state.iteration:04d}.voxfield", dtype="f64")

    state = run_to(cfg.scene, cfg.tools, cfg.load, cfg.material, cfg.to, threads=args.threads,
                   mem_budget_mb=args.mem_budget_mb, callback=checkpoint)
    write_field(state.xi, out / "xi.voxfield", dtype="f64")
    write_field(state.rho, out / "density.voxfield", dtype="f64")
    design = threshold(state.rho, cfg.to.tau)
    write_field(design, out / "design.voxfield")
    write_vtk(out / "design.vtk", {"density": state.rho, "design": design})
    with open(out / "history.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "compliance", "volume_fraction", "secluded_fraction", "w_acc", "change"])
        for r in state.history:
            w.writerow([r.iteration, repr(r.compliance), repr(r.volume_fraction),
                        "" if math.isnan(r.secluded_fraction) else repr(r.secluded_fraction),
                        repr(r.w_acc), repr(r.change)])
    manifest = {
        "version": __version__,
        "config_sha256": cfg.digest(),
        "resolved_config": cfg.resolved,
        "iterations": state.iteration,
        "converged": state.converged,
        "final_compliance": state.final_compliance,
    }
    status = EXIT_OK
    if cfg.tools:
        summary, _ = _analyze(cfg, design, out, args)
        manifest["secluded_fraction"] = summary["secluded_fraction"]
        if not summary["feasible"] and cfg.to.initial_weight() > 0:
            log.warning("final design exceeds the secluded tolerance (%.4f > %.4f)",
                        summary["secluded_fraction"], cfg.to.secluded_tolerance)
            status = EXIT_INFEASIBLE
    _write_json(out / "manifest.json", manifest)
    print(json.dumps({k: manifest[k] for k in ("config_sha256", "iterations", "converged", "final_compliance")}
                     | ({"secluded_fraction": manifest["secluded_fraction"]} if "secluded_fraction" in manifest
                        else {}), indent=2, sort_keys=True))
    return status


def cmd_plan(args) -> int:
    cfg = load_config(args.config)
    if not cfg.tools:
        raise ConfigError("planning needs at least one tool", "tools")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    design = _read_design(cfg, args.design)
    plan = greedy_plan(design, cfg.scene, cfg.tools, lam=cfg.to.lam)
    doc = plan.to_json(cfg.tools)
    allowed = cfg.to.secluded_tolerance * cfg.scene.domain_volume
    doc["tolerance_volume"] = allowed
    doc["feasible"] = plan.residual_volume <= allowed
    _write_json(out / "plan.json", doc)
    if args.snapshots:
        for n, step in enumerate(plan.steps):
            write_field(step.stock_after, out / f"stock_{n:03d}.voxfield")
    print(json.dumps({"steps": len(plan.steps), "residual_volume": plan.residual_volume,
                      "feasible": doc["feasible"]}, indent=2, sort_keys=True))
    if not doc["feasible"]:
        log.warning("plan leaves %.6g of negative space unremoved (allowed %.6g)", plan.residual_volume, allowed)
        return EXIT_INFEASIBLE
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out-dir", default=".", help="directory for output files (default: current)")
    common.add_argument("--threads", type=int, default=1, help="worker threads for inaccessibility tasks")
    common.add_argument("--mem-budget-mb", type=float, default=None,
                        help="memory budget for batching orientation tasks (default 512)")
    common.add_argument("--dump-intermediate", action="store_true",
                        help="write per-orientation collision fields")
    p = argparse.ArgumentParser(prog="mt", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    a = sub.add_parser("analyze", parents=[common], help="classify a design's negative space")
    a.add_argument("config")
    a.add_argument("design")
    a.set_defaults(func=cmd_analyze)
    o = sub.add_parser("optimize", parents=[common], help="run accessibility-constrained topology optimization")
    o.add_argument("config")
    o.set_defaults(func=cmd_optimize)
    pl = sub.add_parser("plan", parents=[common], help="greedy machining plan for a design")
    pl.add_argument("config")
    pl.add_argument("design")
    pl.add_argument("--snapshots", action="store_true", help="write the stock after every step")
    pl.set_defaults(func=cmd_plan)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("MT_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_ERROR
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error ({exc.code}): {exc}", file=sys.stderr)
    except OptimizationAborted as exc:
        print(f"optimization aborted at iteration {exc.iteration}: {exc}", file=sys.stderr)
    except (FEAConvergenceError, OCError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
    except (FieldFormatError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
