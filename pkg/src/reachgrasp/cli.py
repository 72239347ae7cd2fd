"""``reachgrasp`` command line.

Every command writes its outputs plus ``manifest.json`` into ``--out``. The
manifest records the argv, the config and input digests and the package
version; ``reachgrasp replay manifest.json`` reruns it. Wall-clock timings
go to the log and to ``timing.json``, never into the deterministic outputs.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .config import Config, ConfigError, load_config, num, object_from_dict, pose
from .experiments import METHODS, Suite, build_cases, curve_rows, hand_clearance, shipped_grid, summarize
from .grasp import GraspConfig, rank_grasp_list
from .kinematics import collision_free_ik_batch, pose_seeds
from .obstacles import embed_and_regenerate
from .planner import plan_grasps, reachability_flags
from .reachability import (
    GridFormatError,
    ReachabilityGrid,
    generate_reachability,
    load_grid,
    save_grid,
    spec_from_dict,
)
from .sdf import (
    DegenerateGridError,
    MetricParams,
    compute_sdf,
    evaluate_sdf_quality,
    load_sdf,
    query_sdf_batch,
    sample_box_poses,
    save_sdf,
)

log = logging.getLogger("reachgrasp")

EXIT_OK, EXIT_CONFIG, EXIT_DEGENERATE, EXIT_IO = 0, 2, 3, 4


# ---------------------------------------------------------------------------
# helpers


def _sha(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _dump_yaml(obj, path: Path) -> None:
    path.write_text(yaml.safe_dump(_plain(obj), sort_keys=False, default_flow_style=None), encoding="utf-8")


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, (np.floating, float)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def reach_grid(cfg: Config, path: str | None) -> ReachabilityGrid:
    if path:
        return load_grid(path)
    grid = shipped_grid(cfg)
    if grid is None:
        raise ConfigError("no --grid given and the config ships no reach_file")
    return grid


def base_sdf(cfg: Config, args):
    if getattr(args, "sdf", None):
        return load_sdf(args.sdf)
    return compute_sdf(reach_grid(cfg, getattr(args, "grid", None)), cfg.metric, cfg.neighbourhood)


def find_case(cfg: Config, scene_id: str):
    cases = build_cases(cfg)
    for c in cases:
        if c.scene_id == scene_id:
            return c
    raise ConfigError(f"unknown suite scene {scene_id!r}; choose from {[c.scene_id for c in cases]}")


def result_entry(r, flag: bool | None = None) -> dict:
    d = {
        "pose": [float(v) for v in r.config.pose.as_array()],
        "dof": [float(v) for v in r.config.dof],
        "energy": r.breakdown.to_dict(),
    }
    if hasattr(r, "found_at_step"):
        d["found_at_step"] = int(r.found_at_step)
    if flag is not None:
        d["reachable_ik"] = bool(flag)
    return d


# ---------------------------------------------------------------------------
# commands; each returns (outputs, timings)


def cmd_gen_reach(args, cfg: Config, out: Path):
    spec = spec_from_dict(cfg.section("grid"))
    log.info("grid shape %s: %d poses", spec.shape, spec.size)
    info = {"poses": int(spec.size), "shape": list(spec.shape)}
    if args.count_only:
        _dump_yaml(info, out / "reach_log.yaml")
        return ["reach_log.yaml"], {}
    t = time.perf_counter()
    grid = generate_reachability(cfg.arm, spec, cfg.scene, cfg.ik, workers=args.threads)
    dt = time.perf_counter() - t
    save_grid(grid, out / "reach.rgrd")
    info.update(reachable=grid.reachable_count, unreachable=int(spec.size - grid.reachable_count),
                reachable_fraction=grid.reachable_count / spec.size)
    log.info("reachable %d / %d (%.4f) in %.1fs", grid.reachable_count, spec.size,
             info["reachable_fraction"], dt)
    _dump_yaml(info, out / "reach_log.yaml")
    return ["reach.rgrd", "reach_log.yaml"], {"generation_seconds": dt}


def _metric(cfg: Config, args) -> tuple[MetricParams, str]:
    m, hood = cfg.metric, cfg.neighbourhood
    if args.neighbourhood:
        hood = args.neighbourhood
    return m, hood


def cmd_gen_sdf(args, cfg: Config, out: Path):
    grid = reach_grid(cfg, args.grid)
    m, hood = _metric(cfg, args)
    t = time.perf_counter()
    sdf = compute_sdf(grid, m, hood)
    dt = time.perf_counter() - t
    save_sdf(sdf, out / "field.sdf6")
    outputs = ["field.sdf6"]
    log.info("sdf (%s) over %d cells in %.2fs", hood, grid.spec.size, dt)
    if args.evaluate:
        q = evaluate_sdf_quality(sdf, cfg.arm, cfg.scene, args.evaluate, args.seed, cfg.ik)
        _dump_yaml({"n": args.evaluate, "seed": args.seed, **q}, out / "quality.yaml")
        outputs.append("quality.yaml")
        log.info("accuracy %.4f precision %.4f recall %.4f", q["accuracy"], q["precision"], q["recall"])
    return outputs, {"sdf_seconds": dt, "cells": grid.spec.size}


def cmd_embed(args, cfg: Config, out: Path):
    grid = reach_grid(cfg, args.grid)
    if args.scene:
        obstacles = find_case(cfg, args.scene).clutter
    else:
        obstacles = cfg.scene.dynamic_only()
    m, hood = _metric(cfg, args)
    clearance = hand_clearance(cfg) if args.clearance is None else args.clearance
    sdf, rep = embed_and_regenerate(grid, obstacles, m, clearance, hood)
    save_sdf(sdf, out / "embedded.sdf6")
    _dump_yaml({"obstacles": [o.name for o in obstacles], "hand_clearance": clearance,
                **rep.to_dict(timing=False)}, out / "mask_report.yaml")
    log.info("masked %d cells (%d previously reachable) and regenerated in %.2fs",
             rep.cells_masked, rep.cells_previously_reachable_masked, rep.regeneration_seconds)
    return ["embedded.sdf6", "mask_report.yaml"], {"regeneration_seconds": rep.regeneration_seconds}


def cmd_plan(args, cfg: Config, out: Path):
    case = find_case(cfg, args.scene)
    energy = args.energy
    pcfg = cfg.planner(energy="sa-cp" if energy == "sa-cp" else "sa-ours", seed=args.seed, steps=args.steps)
    sdf = None
    if energy != "sa-cp":
        sdf = base_sdf(cfg, args)
        if energy == "sa-ours-embedded" and case.has_obstacles and not args.sdf:
            sdf, _ = embed_and_regenerate(reach_grid(cfg, args.grid), case.clutter, cfg.metric,
                                          hand_clearance(cfg), cfg.neighbourhood)
    scene = cfg.scene.with_obstacles(case.clutter.obstacles)
    t = time.perf_counter()
    results = plan_grasps(pcfg, case.obj, cfg.gripper, sdf=sdf, scene=scene)
    dt = time.perf_counter() - t
    flags = reachability_flags(results, cfg.arm, scene, cfg.ik)
    attempts = next((i + 1 for i, f in enumerate(flags) if f), "none")
    doc = {
        "scene": case.scene_id,
        "energy": energy,
        "planner": pcfg.to_dict(),
        "summary": {"results": len(results), "reachable_fraction": float(np.mean(flags)),
                    "required_plan_attempts": attempts,
                    "lift_success_proxy": (None if attempts == "none" else bool(results[attempts - 1].breakdown.stable))},
        "results": [result_entry(r, f) for r, f in zip(results, flags)],
    }
    _dump_yaml(doc, out / "plan.yaml")
    log.info("%s %s: reachable %.2f, attempts %s (%.1fs)", case.scene_id, energy,
             doc["summary"]["reachable_fraction"], attempts, dt)
    return ["plan.yaml"], {"plan_seconds": dt}


def cmd_rank(args, cfg: Config, out: Path):
    doc = yaml.safe_load(Path(args.grasps).read_text(encoding="utf-8"))
    if not isinstance(doc, dict) or "grasps" not in doc:
        raise ConfigError("grasp list file must be a mapping with a 'grasps' list")
    if args.scene:
        obj = find_case(cfg, args.scene).obj
    elif "object" in doc:
        obj = object_from_dict(doc["object"])
    else:
        raise ConfigError("rank needs --scene or an 'object' entry in the grasp file")
    grasps = [GraspConfig(pose(g["pose"]), tuple(num(v) for v in g["dof"])) for g in doc["grasps"] or []]
    if not grasps:
        raise ConfigError("grasp list is empty")
    sdf = base_sdf(cfg, args)
    pcfg = cfg.planner()
    ranked = rank_grasp_list(grasps, obj, cfg.gripper, sdf, pcfg.alphas, pcfg.energy_params)
    _dump_yaml({"object": obj.name, "ranked": [dict(input_index=r.index, **result_entry(r)) for r in ranked]},
               out / "ranked.yaml")
    return ["ranked.yaml"], {}


def _parse_triple(s: str) -> tuple[float, float, float]:
    parts = s.split(",")
    if len(parts) != 3:
        raise ConfigError(f"triple must be res_lin_cm,res_rot,ratio: {s!r}")
    return tuple(num(p) for p in parts)


def cmd_sweep(args, cfg: Config, out: Path):
    """Per (res_lin, res_rot, r): regenerate the grid at that resolution and score its SDF."""
    triples = [_parse_triple(t) for t in args.triple] or [
        (cfg.metric.res_lin_cm, cfg.metric.res_rot, cfg.metric.ratio)]
    gd = cfg.section("grid")
    arm, scene, ik = cfg.arm, cfg.scene, cfg.ik
    poses = truth = None
    rows, timing = [], []
    base_spec = spec_from_dict(gd)
    for res_lin, res_rot, ratio in triples:
        d = {}
        for k, ax in gd.items():
            ax = dict(ax)
            if num(ax["min"]) != num(ax["max"]):
                if k in ("pitch", "yaw"):
                    ax["step"] = res_rot
                elif k == "roll":
                    # roll stays at its configured (coarser) sampling
                    ax["step"] = max(num(ax["step"]), res_rot)
                else:
                    ax["step"] = res_lin / 100.0
            d[k] = ax
        spec = spec_from_dict(d)
        t = time.perf_counter()
        if spec == base_spec and cfg.raw.get("reach_file") and not args.regenerate:
            grid = shipped_grid(cfg)
        else:
            grid = generate_reachability(arm, spec, scene, ik, workers=args.threads)
        t_gen = time.perf_counter() - t
        m = MetricParams(res_lin, res_rot, ratio)
        t = time.perf_counter()
        sdf = compute_sdf(grid, m, cfg.neighbourhood)
        t_sdf = time.perf_counter() - t
        if poses is None:
            # one labelled sample shared by every row, drawn in the first grid's box
            poses = sample_box_poses(spec, args.n, np.random.default_rng(args.seed))
            truth = collision_free_ik_batch(arm, poses, scene, ik, seeds=pose_seeds(poses, args.seed))
        inside = _inside(sdf, poses)
        q = evaluate_sdf_quality(sdf, arm, scene, int(inside.sum()), args.seed, ik,
                                 truth=truth[inside], poses=poses[inside])
        rows.append({"res_lin_cm": res_lin, "res_rot": res_rot, "ratio": ratio, "cells": grid.spec.size,
                     "n": int(inside.sum()), "accuracy": q["accuracy"], "precision": q["precision"],
                     "recall": q["recall"]})
        timing.append({"res_lin_cm": res_lin, "res_rot": res_rot, "ratio": ratio,
                       "grid_seconds": t_gen, "sdf_seconds": t_sdf})
        log.info("res %.3g cm / %.3g rad / r=%.3g: accuracy %.4f precision %.4f (sdf %.2fs)",
                 res_lin, res_rot, ratio, q["accuracy"], q["precision"], t_sdf)
    _write_tsv(rows, out / "sweep.tsv")
    return ["sweep.tsv"], {"rows": timing}


def _inside(sdf, poses) -> np.ndarray:
    return ~np.isnan(query_sdf_batch(sdf, poses, out_of_domain="nan"))


def _write_tsv(rows: list[dict], path: Path) -> None:
    cols = list(rows[0])
    lines = ["\t".join(cols)]
    for r in rows:
        lines.append("\t".join(_fmt(r[c]) for c in cols))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(round(v, 10))
    return str(v)


def cmd_curve(args, cfg: Config, out: Path):
    grid = reach_grid(cfg, args.grid)
    suite = Suite(cfg, grid, workers=args.threads)
    if args.budgets:
        suite.budgets = [int(b) for b in args.budgets.split(",")]
        suite.steps = max(suite.budgets)
    if args.seeds:
        suite.seeds = list(range(int(args.seeds)))
    if args.scene:
        suite.cases = [c for c in suite.cases if c.scene_id in set(args.scene)]
        if not suite.cases:
            raise ConfigError("no suite scene matches --scene")
    t = time.perf_counter()
    rows = curve_rows(suite)
    _write_tsv(rows, out / "curve.tsv")
    summary = summarize(suite)
    summary["note"] = "lift_success_proxy is force closure at the first reachable grasp, not a lift simulation"
    _dump_yaml(summary, out / "summary.yaml")
    per_run = []
    for m in METHODS:
        for r in suite.records([m])[m]:
            per_run.append({"scene": r.scene_id, "method": m, "seed": r.seed, "steps": r.steps,
                            "reachable_fraction": r.reachable_fraction, "attempts": r.attempts})
    _write_tsv(per_run, out / "runs.tsv")
    return ["curve.tsv", "summary.yaml", "runs.tsv"], {"curve_seconds": time.perf_counter() - t}


COMMANDS = {
    "gen-reach": cmd_gen_reach,
    "gen-sdf": cmd_gen_sdf,
    "embed": cmd_embed,
    "plan": cmd_plan,
    "rank": cmd_rank,
    "sweep": cmd_sweep,
    "curve": cmd_curve,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default="desk6", help="YAML path or builtin name (planar2, desk6)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--threads", type=int, default=1, help="worker processes")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="reachgrasp", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-reach", parents=[common], help="label the pose lattice with the IK oracle")
    s.add_argument("--count-only", action="store_true", help="log the pose count without solving IK")

    for name, helptext in (("gen-sdf", "build the signed distance field"),
                           ("embed", "mask obstacles and regenerate the field")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--grid", help="RGRD file (default: the config's shipped grid)")
        s.add_argument("--neighbourhood", choices=("face", "full"))
        if name == "gen-sdf":
            s.add_argument("--evaluate", type=int, default=0, metavar="N", help="score N random poses")
        else:
            s.add_argument("--scene", help="suite scene id whose clutter is embedded")
            s.add_argument("--clearance", type=float, help="hand clearance in meters")

    s = sub.add_parser("plan", parents=[common], help="run one annealing chain on a suite scene")
    s.add_argument("--scene", required=True)
    s.add_argument("--energy", choices=METHODS, default="sa-ours")
    s.add_argument("--steps", type=int)
    s.add_argument("--grid")
    s.add_argument("--sdf")

    s = sub.add_parser("rank", parents=[common], help="rank an external grasp list")
    s.add_argument("--grasps", required=True, help="YAML with a 'grasps' list of {pose, dof}")
    s.add_argument("--scene")
    s.add_argument("--grid")
    s.add_argument("--sdf")

    s = sub.add_parser("sweep", parents=[common], help="SDF accuracy over metric resolutions")
    s.add_argument("--triple", action="append", default=[], help="res_lin_cm,res_rot,ratio (repeatable)")
    s.add_argument("--n", type=int, default=2000, help="random poses per evaluation")
    s.add_argument("--regenerate", action="store_true", help="ignore the shipped grid")

    s = sub.add_parser("curve", parents=[common], help="reachable fraction against step budget")
    s.add_argument("--grid")
    s.add_argument("--budgets", help="comma-separated step budgets")
    s.add_argument("--seeds", help="number of seeds per scene")
    s.add_argument("--scene", action="append", help="restrict to suite scene ids (repeatable)")

    s = sub.add_parser("replay", help="rerun the command recorded in a manifest")
    s.add_argument("manifest")
    s.add_argument("--out", help="output directory (default: the recorded one)")
    return p


def _manifest(argv: list[str], args, cfg: Config, outputs: list[str], out: Path) -> dict:
    inputs = {}
    for k in ("grid", "sdf", "grasps"):
        v = getattr(args, k, None)
        if v:
            inputs[k] = {"path": str(v), "sha256": _sha(Path(v))}
    if cfg.raw.get("reach_file") and not getattr(args, "grid", None):
        inputs["shipped_grid"] = cfg.raw["reach_file"]
    return {
        "version": __version__,
        "command": args.command,
        "argv": argv,
        "seed": args.seed,
        "config": {"source": cfg.source, "sha256": cfg.digest},
        "inputs": inputs,
        "outputs": {name: _sha(out / name) for name in outputs},
    }


def _replay_argv(manifest_path: str, out: str | None) -> list[str]:
    m = json.loads(Path(manifest_path).read_text(encoding="utf-8"))
    argv = list(m["argv"])
    if out:
        if "--out" in argv:
            argv[argv.index("--out") + 1] = out
        else:
            argv += ["--out", out]
    return argv


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "replay":
        try:
            new = _replay_argv(args.manifest, args.out)
        except (OSError, ValueError, KeyError) as exc:
            print(f"reachgrasp: cannot read manifest: {exc}", file=sys.stderr)
            return EXIT_IO
        return main(new)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if getattr(args, "steps", None) is None and args.command == "plan":
            args.steps = int(cfg.section("suite", required=False).get("steps", 10000)) \
                if cfg.section("suite", required=False) else 10000
        outputs, timing = COMMANDS[args.command](args, cfg, out)
        (out / "manifest.json").write_text(
            json.dumps(_manifest(argv, args, cfg, outputs, out), indent=2, sort_keys=True) + "\n",
            encoding="utf-8")
        if timing:
            (out / "timing.json").write_text(json.dumps(timing, indent=2, sort_keys=True) + "\n",
                                             encoding="utf-8")
    except ConfigError as exc:
        print(f"reachgrasp: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DegenerateGridError as exc:
        print(f"reachgrasp: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (OSError, GridFormatError) as exc:
        print(f"reachgrasp: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
