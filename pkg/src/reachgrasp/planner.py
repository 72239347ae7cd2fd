"""Simulated-annealing grasp search over the 6+N hand space.

A *step* is one proposal; the initial state is step 0, so ``steps=1`` only
evaluates the initial state. Proposals that put the hand inside the object
(or an obstacle) are rejected before any energy is computed but still use up
a step.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .geometry import Pose6, wrap_angle
from .grasp import (
    DEFAULT_ALPHAS,
    DEFAULT_ENERGY,
    EnergyBreakdown,
    EnergyParams,
    GraspConfig,
    GraspObject,
    Gripper,
    evaluate_grasp,
)
from .kinematics import ArmModel, IKParams, collision_free_ik_batch, pose_seeds
from .sdf import MetricParams, SdfGrid
from .shapes import Scene

log = logging.getLogger(__name__)

ENERGIES = ("sa-cp", "sa-ours")


@dataclass(frozen=True)
class PlannerConfig:
    steps: int = 10000
    t0: float = 100.0
    t_floor: float = 0.1
    step_lin: float = 0.03
    step_rot: float = 0.5
    step_dof: float = 0.2  # fraction of each DOF range
    keep_top_k: int = 20
    seed: int = 0
    energy: str = "sa-ours"
    alphas: tuple[float, float, float] = DEFAULT_ALPHAS
    margin: float = 0.02
    distinct_metric: MetricParams = field(default_factory=lambda: MetricParams(5.0, math.pi / 4, 1.0))
    distinct_dist: float = 0.25
    distinct_dof: float = 0.05
    avoid_obstacles: bool = True
    energy_params: EnergyParams = DEFAULT_ENERGY

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not (self.t0 > 0 and self.t_floor > 0):
            raise ValueError("temperatures must be positive")
        if self.t_floor > self.t0:
            raise ValueError("t_floor must not exceed t0")
        if self.keep_top_k < 1:
            raise ValueError("keep_top_k must be >= 1")
        if self.energy not in ENERGIES:
            raise ValueError(f"energy must be one of {ENERGIES}, got {self.energy!r}")
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))

    @property
    def cooling(self) -> float:
        """Geometric factor that takes ``t0`` to ``t_floor`` at the last step."""
        if self.steps <= 1:
            return 1.0
        return (self.t_floor / self.t0) ** (1.0 / (self.steps - 1))

    def to_dict(self) -> dict:
        return {
            "steps": self.steps, "t0": self.t0, "t_floor": self.t_floor,
            "step_lin": self.step_lin, "step_rot": self.step_rot, "step_dof": self.step_dof,
            "keep_top_k": self.keep_top_k, "seed": self.seed, "energy": self.energy,
            "alphas": list(self.alphas), "margin": self.margin,
            "distinct_dist": self.distinct_dist, "distinct_dof": self.distinct_dof,
            "avoid_obstacles": self.avoid_obstacles,
        }


@dataclass(frozen=True)
class GraspResult:
    config: GraspConfig
    breakdown: EnergyBreakdown
    found_at_step: int


# ---------------------------------------------------------------------------
# generic annealing core


@dataclass
class _Entry:
    energy: float
    step: int
    x: np.ndarray
    payload: object


class TopK:
    """k lowest-energy mutually distinct states.

    A newcomer replaces every archived near-duplicate if it beats all of them
    and is dropped otherwise. Once the archive has been full, nothing worse
    than the worst energy at that moment is admitted, so the worst archived
    energy never rises.
    """

    def __init__(self, k: int, similar: Callable[[np.ndarray, np.ndarray], bool]):
        self.k = k
        self.similar = similar
        self.items: list[_Entry] = []
        self.cutoff = math.inf

    def offer(self, energy: float, step: int, x: np.ndarray, payload=None) -> bool:
        if energy >= self.cutoff:
            return False
        dup = [e for e in self.items if self.similar(e.x, x)]
        if dup and min(e.energy for e in dup) <= energy:
            return False
        if dup:
            ids = {id(e) for e in dup}
            self.items = [e for e in self.items if id(e) not in ids]
        self.items.append(_Entry(energy, step, x.copy(), payload))
        self.items.sort(key=lambda e: (e.energy, e.step))
        if len(self.items) > self.k:
            self.items.pop()
        if len(self.items) == self.k:
            self.cutoff = min(self.cutoff, self.items[-1].energy)
        return True

    def worst(self) -> float:
        return self.items[-1].energy if self.items else math.inf


@dataclass
class AnnealRun:
    archive: list[_Entry]
    accepted: int
    rejected_invalid: int
    trace: list[tuple[int, float]] | None = None


def anneal(
    energy_fn: Callable[[np.ndarray], tuple[float, object] | None],
    x0: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    angular: np.ndarray,
    scales: np.ndarray,
    cfg: PlannerConfig,
    similar: Callable[[np.ndarray, np.ndarray], bool] | None = None,
    rng: np.random.Generator | None = None,
    trace: bool = False,
) -> AnnealRun:
    """Minimize ``energy_fn``; it returns ``(energy, payload)`` or ``None`` to reject.

    Bounded dimensions are clipped to ``[lower, upper]``; ``angular`` ones are
    wrapped instead.
    """
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    similar = similar or (lambda a, b: bool(np.all(a == b)))
    archive = TopK(cfg.keep_top_k, similar)
    x = np.asarray(x0, dtype=float).copy()
    first = energy_fn(x)
    if first is None:
        raise ValueError("initial state is invalid")
    e, payload = first
    archive.offer(e, 0, x, payload)
    tr = [(0, e)] if trace else None
    T = cfg.t0
    c = cfg.cooling
    accepted = rejected = 0
    for step in range(1, cfg.steps):
        tau = T / cfg.t0
        u = rng.random(x.shape[0])
        y = x + scales * tau * np.tan(math.pi * (u - 0.5))
        y = np.where(angular, wrap_angle(y), np.clip(y, lower, upper))
        res = energy_fn(y)
        if res is None:
            rejected += 1
        else:
            ey, py = res
            archive.offer(ey, step, y, py)
            d = ey - e
            if d <= 0 or rng.random() < math.exp(-d / T):
                x, e = y, ey
                accepted += 1
        if tr is not None:
            tr.append((step, e))
        T *= c
    return AnnealRun(archive.items, accepted, rejected, tr)


# ---------------------------------------------------------------------------
# grasp planning


def state_bounds(obj: GraspObject, hand: Gripper, cfg: PlannerConfig):
    """Object-centred translation box plus DOF limits; angles are unbounded."""
    reach = obj.bounding_radius + hand.finger_tip + cfg.margin
    c = obj.center
    lo = np.concatenate([c - reach, [-math.pi] * 3, hand.dof_lower])
    hi = np.concatenate([c + reach, [math.pi] * 3, hand.dof_upper])
    angular = np.array([False] * 3 + [True] * 3 + [False] * hand.n_dof)
    return lo, hi, angular


def hand_penetrates(g: GraspConfig, obj: GraspObject, hand: Gripper, scene: Scene | None = None) -> bool:
    pts, rad = hand.collision_points(g.dof)
    R = g.pose.rotation()
    w = pts @ R.T + g.pose.position
    if np.any(obj.solid.signed_distance(w) < rad):
        return True
    if scene is not None and len(scene):
        return bool(np.any(scene.signed_distance(w) < rad))
    return False


def _similar_fn(cfg: PlannerConfig, hand: Gripper):
    m = cfg.distinct_metric
    wl = 100.0 / m.res_lin_cm
    wr2 = m.ratio / m.res_rot ** 2
    dof_tol = cfg.distinct_dof * (hand.dof_upper - hand.dof_lower)
    lim2 = cfg.distinct_dist ** 2

    def similar(a: np.ndarray, b: np.ndarray) -> bool:
        d = a - b
        lin = d[:3] * wl
        rot = wrap_angle(d[3:6])
        dist2 = float(lin @ lin) + wr2 * float(rot @ rot)
        return dist2 <= lim2 and bool(np.all(np.abs(d[6:]) <= dof_tol))

    return similar


def initial_state(obj: GraspObject, hand: Gripper, cfg: PlannerConfig, rng: np.random.Generator,
                  scene: Scene | None = None, tries: int = 10000) -> np.ndarray:
    lo, hi, _ = state_bounds(obj, hand, cfg)
    for _ in range(tries):
        x = rng.uniform(lo, hi)
        if not hand_penetrates(GraspConfig.from_array(x), obj, hand, scene):
            return x
    raise RuntimeError("no collision-free initial hand state found")


def plan_grasps(
    cfg: PlannerConfig,
    obj: GraspObject,
    hand: Gripper,
    sdf: SdfGrid | None = None,
    scene: Scene | None = None,
    trace: bool = False,
    return_run: bool = False,
):
    """Run one annealing chain; return results sorted by ascending energy."""
    if cfg.energy == "sa-ours" and sdf is None:
        raise ValueError("sa-ours planning requires a reachability SDF")
    obstacles = scene if (cfg.avoid_obstacles and scene is not None) else None
    rng = np.random.default_rng(cfg.seed)
    lo, hi, angular = state_bounds(obj, hand, cfg)
    if np.any(hi <= lo):
        raise ValueError("invalid state bounds")
    scales = np.concatenate([[cfg.step_lin] * 3, [cfg.step_rot] * 3,
                             cfg.step_dof * (hand.dof_upper - hand.dof_lower)])

    def energy_fn(x):
        g = GraspConfig.from_array(x)
        if hand_penetrates(g, obj, hand, obstacles):
            return None
        b = evaluate_grasp(g, obj, hand, cfg.energy, sdf, cfg.alphas, cfg.energy_params)
        return b.total, (g, b)

    x0 = initial_state(obj, hand, cfg, rng, obstacles)
    run = anneal(energy_fn, x0, lo, hi, angular, scales, cfg, _similar_fn(cfg, hand), rng, trace)
    results = [GraspResult(e.payload[0], e.payload[1], e.step) for e in run.archive]
    log.debug("plan %s seed=%d: accepted=%d rejected=%d best=%.4g", cfg.energy, cfg.seed,
              run.accepted, run.rejected_invalid, results[0].breakdown.total)
    return (results, run) if return_run else results


# ---------------------------------------------------------------------------
# evaluation metrics


def _result_poses(results: Sequence) -> np.ndarray:
    out = []
    for r in results:
        p = r.config.pose if hasattr(r, "config") else (r.pose if hasattr(r, "pose") else r)
        out.append(p.as_array() if isinstance(p, Pose6) else np.asarray(p, float))
    return np.array(out).reshape(-1, 6)


def reachability_flags(results, arm: ArmModel, scene: Scene, oracle_params: IKParams) -> np.ndarray:
    if len(results) == 0:
        raise ValueError("no results to check")
    P = _result_poses(results)
    return collision_free_ik_batch(arm, P, scene, oracle_params, seeds=pose_seeds(P, oracle_params.seed))


def reachable_fraction(results, arm: ArmModel, scene: Scene, oracle_params: IKParams) -> float:
    """Share of result poses with a collision-free IK solution."""
    return float(np.mean(reachability_flags(results, arm, scene, oracle_params)))


def required_plan_attempts(results, arm: ArmModel, scene: Scene, oracle_params: IKParams) -> int | str:
    """1-based index of the first reachable result, or ``"none"``."""
    ok = reachability_flags(results, arm, scene, oracle_params)
    idx = np.flatnonzero(ok)
    return int(idx[0]) + 1 if idx.size else "none"
