"""Desk-scale comparison of the planners over a fixed scene suite.

A scene is one target object placed on the table, optionally with clutter
around it. Each (scene, method, seed, budget) run is independent; results are
memoized per :class:`Suite` instance so the curve and summary statistics can
share runs.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
from scipy.stats import binomtest

from .config import Config, ConfigError, num, object_from_dict, scene_from_dict, vec
from .geometry import Pose6
from .grasp import GraspObject, Gripper
from .kinematics import ArmModel, IKParams
from .obstacles import MaskReport, embed_and_regenerate
from .planner import GraspResult, PlannerConfig, plan_grasps, reachability_flags
from .reachability import ReachabilityGrid, load_grid
from .sdf import MetricParams, SdfGrid, compute_sdf
from .shapes import Scene

log = logging.getLogger(__name__)

METHODS = ("sa-cp", "sa-ours", "sa-ours-embedded")


@dataclass(frozen=True)
class SceneCase:
    scene_id: str
    layout: str
    obj: GraspObject
    clutter: Scene  # obstacles beyond the static scene

    @property
    def has_obstacles(self) -> bool:
        return len(self.clutter) > 0


@dataclass(frozen=True)
class RunRecord:
    scene_id: str
    layout: str
    method: str
    seed: int
    steps: int
    reachable: tuple[bool, ...]
    stable: tuple[bool, ...]
    results: tuple[GraspResult, ...] = field(repr=False, compare=False, default=())

    @property
    def reachable_fraction(self) -> float:
        return float(np.mean(self.reachable))

    @property
    def attempts(self) -> int | str:
        idx = [i for i, r in enumerate(self.reachable) if r]
        return idx[0] + 1 if idx else "none"

    @property
    def attempts_value(self) -> int:
        """Attempts with ``"none"`` counted as one more than the list length."""
        a = self.attempts
        return len(self.reachable) + 1 if a == "none" else a

    @property
    def lift_proxy(self) -> float:
        """Force closure at the first reachable grasp (a proxy, not a lift test)."""
        a = self.attempts
        return math.nan if a == "none" else float(self.stable[a - 1])


def _place(obj_d: dict, xy_yaw) -> GraspObject:
    """Rest an object on the table at ``(x, y)`` with its long axis vertical."""
    x, y, yaw = (num(v) for v in xy_yaw)
    shape = obj_d["shape"]
    if shape == "box":
        half = num(obj_d["size"][2]) / 2
    elif shape == "cylinder":
        half = num(obj_d["height"]) / 2
    else:
        half = num(obj_d["radius"])
    return object_from_dict(obj_d, Pose6(x, y, half, 0.0, 0.0, yaw))


def _clutter(layout: list, obj: GraspObject, base: Pose6) -> Scene:
    """Layout obstacles are placed relative to the object's table position.

    Offsets live in a frame whose +x points from the arm base to the object,
    so one layout blocks the same side of the approach at every placement.
    """
    c = obj.center
    yaw = math.atan2(c[1] - base.y, c[0] - base.x)
    cz, sz = math.cos(yaw), math.sin(yaw)
    obs = []
    for i, od in enumerate(layout or []):
        od = dict(od)
        dx, dy, z = vec(od.pop("offset"), 3, "layout offset")
        oyaw = num(od.pop("yaw", 0.0))
        wx = c[0] + cz * dx - sz * dy
        wy = c[1] + sz * dx + cz * dy
        od["pose"] = [wx, wy, z, 0.0, 0.0, yaw + oyaw]
        od.setdefault("name", f"clutter{i}")
        obs.append(od)
    return scene_from_dict(obs)


def shipped_grid(cfg: Config) -> ReachabilityGrid | None:
    """The precomputed grid named by ``reach_file``, checked against the config."""
    name = cfg.raw.get("reach_file")
    if not name:
        return None
    ref = resources.files("reachgrasp").joinpath(f"data/{name}")
    with resources.as_file(ref) as p:
        grid = load_grid(p)
    arm, scene = cfg.arm, cfg.scene
    if (grid.spec != cfg.grid_spec or grid.provenance.get("arm_hash") != arm.digest()
            or grid.provenance.get("scene_hash") != scene.digest()):
        raise ConfigError(f"shipped grid {name} does not match the config; rerun gen-reach")
    return grid


def hand_clearance(cfg: Config) -> float:
    """Suite masking clearance; defaults to the hand's bounding radius."""
    suite = cfg.section("suite", required=False) or {}
    hc = suite.get("hand_clearance")
    return cfg.gripper.bounding_radius if hc is None else num(hc)


def build_cases(cfg: Config) -> list[SceneCase]:
    suite = cfg.section("suite")
    try:
        objects, placements, layouts = suite["objects"], suite["placements"], suite["layouts"]
    except KeyError as exc:
        raise ConfigError(f"suite missing {exc}") from exc
    if not (objects and placements and layouts):
        raise ConfigError("suite needs at least one object, placement and layout")
    # a layout is an obstacle list, or {obstacles: [...], placements: [indices]}
    plans = {}
    for lname, lay in layouts.items():
        if isinstance(lay, dict):
            where = [int(i) for i in lay.get("placements", range(len(placements)))]
            if any(not 0 <= i < len(placements) for i in where):
                raise ConfigError(f"layout {lname}: placement index out of range")
            plans[lname] = (lay.get("obstacles") or [], set(where))
        else:
            plans[lname] = (lay or [], set(range(len(placements))))
    cases = []
    for od in objects:
        for i, pl in enumerate(placements):
            obj = _place(od, pl)
            for lname in sorted(plans):
                obstacles, where = plans[lname]
                if i in where:
                    cases.append(SceneCase(f"{od.get('name', od['shape'])}@{i}/{lname}", lname, obj,
                                           _clutter(obstacles, obj, cfg.arm.base)))
    return cases


class Suite:
    """Runs and caches planner results for one config and base SDF."""

    def __init__(self, cfg: Config, grid: ReachabilityGrid, sdf: SdfGrid | None = None,
                 workers: int = 1):
        self.cfg = cfg
        self.arm: ArmModel = cfg.arm
        self.hand: Gripper = cfg.gripper
        self.base_scene: Scene = cfg.scene
        self.ik: IKParams = cfg.ik
        self.metric: MetricParams = cfg.metric
        self.hood = cfg.neighbourhood
        self.grid = grid
        self.sdf = sdf if sdf is not None else compute_sdf(grid, self.metric, self.hood)
        suite = cfg.section("suite")
        self.cases = build_cases(cfg)
        self.seeds = [int(s) for s in suite.get("seeds", [0])]
        self.budgets = [int(b) for b in suite.get("budgets", [10000])]
        self.steps = int(suite.get("steps", max(self.budgets)))
        self.hand_clearance = hand_clearance(cfg)
        self.workers = workers
        self._runs: dict[tuple, RunRecord] = {}
        self._embedded: dict[str, tuple[SdfGrid, MaskReport]] = {}

    # ----------------------------------------------------------------- sdfs
    def embedded_sdf(self, case: SceneCase) -> tuple[SdfGrid, MaskReport]:
        if case.scene_id not in self._embedded:
            self._embedded[case.scene_id] = embed_and_regenerate(
                self.grid, case.clutter, self.metric, self.hand_clearance, self.hood)
        return self._embedded[case.scene_id]

    def sdf_for(self, case: SceneCase, method: str) -> SdfGrid | None:
        if method == "sa-cp":
            return None
        if method == "sa-ours-embedded" and case.has_obstacles:
            return self.embedded_sdf(case)[0]
        return self.sdf

    def planner_config(self, method: str, seed: int, steps: int) -> PlannerConfig:
        energy = "sa-cp" if method == "sa-cp" else "sa-ours"
        return self.cfg.planner(energy=energy, seed=seed, steps=steps)

    def full_scene(self, case: SceneCase) -> Scene:
        return self.base_scene.with_obstacles(case.clutter.obstacles)

    # ----------------------------------------------------------------- runs
    def _key(self, case: SceneCase, method: str, seed: int, steps: int) -> tuple:
        # the embedded planner on a clutter-free scene is the plain one
        if method == "sa-ours-embedded" and not case.has_obstacles:
            method = "sa-ours"
        return case.scene_id, method, seed, steps

    def _task(self, case: SceneCase, method: str, seed: int, steps: int):
        return (self.planner_config(method, seed, steps), case, method, self.hand,
                self.sdf_for(case, method), self.full_scene(case), self.arm, self.ik)

    def run(self, case: SceneCase, method: str, seed: int, steps: int | None = None) -> RunRecord:
        steps = self.steps if steps is None else steps
        key = self._key(case, method, seed, steps)
        if key not in self._runs:
            rec = _execute(self._task(case, method, seed, steps))
            self._runs[key] = rec
        rec = self._runs[key]
        if rec.method != method:
            rec = RunRecord(rec.scene_id, rec.layout, method, rec.seed, rec.steps, rec.reachable,
                            rec.stable, rec.results)
        return rec

    def run_many(self, jobs: list[tuple[SceneCase, str, int, int]]) -> list[RunRecord]:
        todo = {}
        for case, method, seed, steps in jobs:
            key = self._key(case, method, seed, steps)
            if key not in self._runs and key not in todo:
                if method == "sa-ours-embedded" and case.has_obstacles:
                    self.embedded_sdf(case)
                todo[key] = self._task(case, method, seed, steps)
        if todo:
            keys = list(todo)
            if self.workers > 1 and len(keys) > 1:
                with ProcessPoolExecutor(max_workers=self.workers) as ex:
                    recs = list(ex.map(_execute, [todo[k] for k in keys]))
            else:
                recs = [_execute(todo[k]) for k in keys]
            for k, r in zip(keys, recs):
                self._runs[k] = r
        return [self.run(c, m, s, n) for c, m, s, n in jobs]

    def records(self, methods=METHODS, steps: int | None = None, cases=None) -> dict[str, list[RunRecord]]:
        steps = self.steps if steps is None else steps
        cases = self.cases if cases is None else cases
        jobs = [(c, m, s, steps) for m in methods for c in cases for s in self.seeds]
        recs = self.run_many(jobs)
        out: dict[str, list[RunRecord]] = {m: [] for m in methods}
        for (c, m, s, n), r in zip(jobs, recs):
            out[m].append(r)
        return out


def _execute(task) -> RunRecord:
    cfg, case, method, hand, sdf, scene, arm, ik = task
    results = plan_grasps(cfg, case.obj, hand, sdf=sdf, scene=scene)
    flags = reachability_flags(results, arm, scene, ik)
    stable = tuple(bool(r.breakdown.stable) for r in results)
    log.info("%s %s seed=%d steps=%d reachable=%.2f", case.scene_id, method, cfg.seed, cfg.steps,
             float(np.mean(flags)))
    return RunRecord(case.scene_id, case.layout, method, cfg.seed, cfg.steps,
                     tuple(bool(f) for f in flags), stable, tuple(results))


# ---------------------------------------------------------------------------
# statistics


def mean_stderr(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return math.nan, math.nan
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), se


def sign_test_less(a, b) -> dict:
    """Paired one-sided sign test that ``a`` tends to be below ``b``; ties dropped."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    wins = int(np.sum(a < b))
    losses = int(np.sum(a > b))
    n = wins + losses
    p = binomtest(wins, n, 0.5, alternative="greater").pvalue if n else 1.0
    return {"wins": wins, "losses": losses, "ties": int(a.size - n), "p_value": float(p)}


def curve_rows(suite: Suite, methods=METHODS) -> list[dict]:
    rows = []
    for budget in suite.budgets:
        recs = suite.records(methods, steps=budget)
        for m in methods:
            mean, se = mean_stderr([r.reachable_fraction for r in recs[m]])
            rows.append({"budget": budget, "method": m, "mean": mean, "stderr": se, "n": len(recs[m])})
    return rows


def summarize(suite: Suite) -> dict:
    """Headline comparisons at the suite's full step budget."""
    recs = suite.records()
    cp, ours, emb = recs["sa-cp"], recs["sa-ours"], recs["sa-ours-embedded"]
    rf = {m: mean_stderr([r.reachable_fraction for r in recs[m]]) for m in METHODS}
    att = {m: mean_stderr([r.attempts_value for r in recs[m]]) for m in METHODS}
    per_scene = {}
    for o, e in zip(ours, emb):
        if not next(c for c in suite.cases if c.scene_id == o.scene_id).has_obstacles:
            continue
        d = per_scene.setdefault(o.scene_id, [[], []])
        d[0].append(o.reachable_fraction)
        d[1].append(e.reachable_fraction)
    strict = sum(1 for u, e in per_scene.values() if np.mean(e) > np.mean(u))
    obst_u = [x for u, _ in per_scene.values() for x in u]
    obst_e = [x for _, e in per_scene.values() for x in e]
    lift = {m: [r.lift_proxy for r in recs[m] if not math.isnan(r.lift_proxy)] for m in METHODS}
    return {
        "runs_per_method": len(cp),
        "reachable_fraction": {m: {"mean": v[0], "stderr": v[1]} for m, v in rf.items()},
        "improvement_ours_minus_cp": rf["sa-ours"][0] - rf["sa-cp"][0],
        "attempts": {m: {"mean": v[0], "stderr": v[1]} for m, v in att.items()},
        "attempts_sign_test": sign_test_less([r.attempts_value for r in ours], [r.attempts_value for r in cp]),
        "obstacle_scenes": len(per_scene),
        "embedded_strictly_better_scenes": strict,
        "obstacle_mean_unembedded": float(np.mean(obst_u)) if obst_u else math.nan,
        "obstacle_mean_embedded": float(np.mean(obst_e)) if obst_e else math.nan,
        "lift_success_proxy": {m: (float(np.mean(v)) if v else math.nan) for m, v in lift.items()},
    }
