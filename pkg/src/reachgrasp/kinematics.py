"""Serial-chain kinematics, damped least-squares IK and the reachability oracle.

Everything is batched over poses/configurations: the reachability sweep asks
hundreds of thousands of IK questions, so the solver advances a whole block of
targets per numpy iteration. Restart initial guesses come from a counter-based
hash of ``(pose seed, restart index, joint index)``, which makes every answer
independent of batch composition and evaluation order.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .geometry import (
    Pose6,
    axis_angle_batch,
    poses_to_rt,
    rotation_log,
)
from .shapes import Capsule, Scene


@dataclass(frozen=True)
class Joint:
    name: str
    kind: str  # "revolute" | "prismatic"
    axis: tuple[float, float, float]
    origin: Pose6  # fixed transform from the parent frame, applied before the motion
    lower: float
    upper: float
    geometry: tuple[Capsule, ...] = ()

    def __post_init__(self):
        if self.kind not in ("revolute", "prismatic"):
            raise ValueError(f"joint {self.name}: unknown type {self.kind!r}")
        if self.lower > self.upper:
            raise ValueError(f"joint {self.name}: lower limit {self.lower} > upper {self.upper}")
        ax = np.asarray(self.axis, dtype=float)
        n = np.linalg.norm(ax)
        if n == 0:
            raise ValueError(f"joint {self.name}: zero axis")
        object.__setattr__(self, "axis", tuple(float(v) for v in ax / n))
        object.__setattr__(self, "geometry", tuple(self.geometry))

    @property
    def continuous(self) -> bool:
        return self.kind == "revolute" and self.upper - self.lower >= 2 * math.pi - 1e-9


@dataclass(frozen=True)
class ArmModel:
    """Serial arm. Link ``i`` (1-based) moves with joint ``i``; link 0 is the base.

    ``tool_geometry`` rides on the end-effector frame and is treated as link
    ``n + 1``. Links ``i`` and ``i + 1`` never self-collide; ``extra_adjacent``
    lists further pairs that share a joint through zero-length links.
    """

    name: str
    joints: tuple[Joint, ...]
    base: Pose6 = Pose6()
    ee_offset: Pose6 = Pose6()
    base_geometry: tuple[Capsule, ...] = ()
    tool_geometry: tuple[Capsule, ...] = ()
    extra_adjacent: tuple[tuple[int, int], ...] = ()
    home: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "joints", tuple(self.joints))
        object.__setattr__(self, "extra_adjacent", tuple(tuple(sorted(p)) for p in self.extra_adjacent))
        self_home = self.home
        if self_home is None:
            self_home = tuple(float(np.clip(0.0, j.lower, j.upper)) for j in self.joints)
        object.__setattr__(self, "home", tuple(self_home))
        lo = np.array([j.lower for j in self.joints])
        hi = np.array([j.upper for j in self.joints])
        object.__setattr__(self, "_lo", lo)
        object.__setattr__(self, "_hi", hi)
        object.__setattr__(self, "_collision_pairs", self._build_pairs())

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    @property
    def limits(self) -> tuple[np.ndarray, np.ndarray]:
        return self._lo, self._hi

    def link_geometry(self) -> list[tuple[Capsule, ...]]:
        return [self.base_geometry] + [j.geometry for j in self.joints] + [self.tool_geometry]

    def _build_pairs(self):
        geoms = self.link_geometry()
        skip = set(self.extra_adjacent)
        pairs = []
        for i in range(len(geoms)):
            for k in range(i + 2, len(geoms)):
                if (i, k) in skip or not geoms[i] or not geoms[k]:
                    continue
                pairs.append((i, k))
        return tuple(pairs)

    @property
    def self_collision_pairs(self) -> tuple[tuple[int, int], ...]:
        return self._collision_pairs

    def max_reach(self) -> tuple[np.ndarray, float]:
        """Center and radius of a sphere that contains every end-effector position."""
        first = self.joints[0] if self.joints else None
        center = self.base.compose(first.origin).position if first else self.base.position
        r = 0.0
        for j in self.joints[1:]:
            r += float(np.linalg.norm(j.origin.position))
        for j in self.joints:
            if j.kind == "prismatic":
                r += max(abs(j.lower), abs(j.upper))
        r += float(np.linalg.norm(self.ee_offset.position))
        return center, r

    def digest(self) -> str:
        payload = json.dumps(_jsonable(asdict(self)), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float):
        return repr(obj)
    return obj


def _check_q(arm: ArmModel, Q: np.ndarray, check_limits: bool = True) -> np.ndarray:
    Q = np.asarray(Q, dtype=float)
    single = Q.ndim == 1
    Q2 = np.atleast_2d(Q)
    if Q2.shape[1] != arm.n_joints:
        raise ValueError(f"expected {arm.n_joints} joint values, got {Q2.shape[1]}")
    if check_limits:
        lo, hi = arm.limits
        bad = (Q2 < lo - 1e-9) | (Q2 > hi + 1e-9)
        if np.any(bad):
            i = int(np.argwhere(bad)[0][1])
            raise ValueError(f"joint {arm.joints[i].name} outside limits [{lo[i]}, {hi[i]}]")
    return Q2 if not single else Q2


def _chain(arm: ArmModel, Q: np.ndarray):
    """Frames along the chain for a batch of configurations.

    Returns per-link rotations/positions (links 0..n+1), joint world axes and
    joint origins (for the Jacobian).
    """
    N = Q.shape[0]
    base_R = np.broadcast_to(arm.base.rotation(), (N, 3, 3)).copy()
    base_p = np.broadcast_to(arm.base.position, (N, 3)).copy()
    Rs, ps = [base_R], [base_p]
    axes, origins = [], []
    R, p = base_R, base_p
    for i, j in enumerate(arm.joints):
        oR = j.origin.rotation()
        p = p + np.einsum("nij,j->ni", R, j.origin.position)
        R = R @ oR
        ax = np.asarray(j.axis)
        w_ax = np.einsum("nij,j->ni", R, ax)
        axes.append(w_ax)
        origins.append(p)
        if j.kind == "revolute":
            R = R @ axis_angle_batch(ax, Q[:, i])
        else:
            p = p + w_ax * Q[:, i:i + 1]
        Rs.append(R)
        ps.append(p)
    eR = arm.ee_offset.rotation()
    p_ee = p + np.einsum("nij,j->ni", R, arm.ee_offset.position)
    R_ee = R @ eR
    Rs.append(R_ee)
    ps.append(p_ee)
    return Rs, ps, axes, origins


def forward_kinematics_batch(arm: ArmModel, Q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """End-effector rotations ``(N, 3, 3)`` and positions ``(N, 3)``."""
    Q = _check_q(arm, Q)
    Rs, ps, _, _ = _chain(arm, Q)
    return Rs[-1], ps[-1]


def forward_kinematics(arm: ArmModel, q: Sequence[float]) -> Pose6:
    """End-effector pose in the base frame's parent (world) frame."""
    q = np.asarray(q, dtype=float)
    if q.ndim != 1:
        raise ValueError("q must be a 1-D joint vector")
    R, p = forward_kinematics_batch(arm, q[None, :])
    T = np.eye(4)
    T[:3, :3] = R[0]
    T[:3, 3] = p[0]
    return Pose6.from_matrix(T)


def jacobian_batch(arm: ArmModel, Q: np.ndarray):
    """Geometric Jacobian ``(N, 6, n)`` (linear rows first) plus the FK result."""
    Rs, ps, axes, origins = _chain(arm, Q)
    p_ee = ps[-1]
    N, n = Q.shape
    J = np.zeros((N, 6, n))
    for i, j in enumerate(arm.joints):
        if j.kind == "revolute":
            J[:, :3, i] = np.cross(axes[i], p_ee - origins[i])
            J[:, 3:, i] = axes[i]
        else:
            J[:, :3, i] = axes[i]
    return J, Rs[-1], p_ee


# ---------------------------------------------------------------------------
# counter-based hashing for seeds


_M64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def _splitmix(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        x = (x + np.uint64(0x9E3779B97F4A7C15)) & _M64
        x = ((x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & _M64
        x = ((x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & _M64
        return x ^ (x >> np.uint64(31))


def hash_combine(*parts) -> np.ndarray:
    """Hash a sequence of integer arrays (broadcast together) into uint64 keys."""
    h = np.zeros(np.broadcast(*[np.asarray(p) for p in parts]).shape, dtype=np.uint64)
    for part in parts:
        v = np.asarray(part).astype(np.int64).view(np.uint64) if np.asarray(part).dtype != np.uint64 \
            else np.asarray(part)
        h = _splitmix(h ^ v)
    return h


def hash_uniform(*parts) -> np.ndarray:
    """Deterministic uniforms in [0, 1) from integer keys."""
    return (hash_combine(*parts) >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def pose_seeds(poses: np.ndarray, seed: int) -> np.ndarray:
    """Per-pose seeds keyed on the pose value (micrometer/microradian lattice)."""
    poses = np.atleast_2d(np.asarray(poses, dtype=float))
    keys = np.round(poses * 1e6).astype(np.int64)
    parts = [np.int64(seed)] + [keys[:, k] for k in range(keys.shape[1])]
    return hash_combine(*parts)


# ---------------------------------------------------------------------------
# inverse kinematics


@dataclass(frozen=True)
class IKParams:
    tol_pos: float = 1e-3
    tol_rot: float = 1e-2
    restarts: int = 8
    max_iter: int = 80
    damping: float = 0.02
    rot_weight: float = 0.2  # meters per radian in the stacked error
    max_step: float = 0.5  # radians (or meters) per iteration, per joint
    mode: str = "full"  # "full" | "position"
    seed: int = 0

    def __post_init__(self):
        if not (self.tol_pos > 0 and self.tol_rot > 0):
            raise ValueError("IK tolerances must be strictly positive")
        if self.restarts < 1 or self.max_iter < 1:
            raise ValueError("restarts and max_iter must be >= 1")
        if self.mode not in ("full", "position"):
            raise ValueError(f"unknown IK mode {self.mode!r}")


def _wrap_limits(arm: ArmModel, Q: np.ndarray) -> np.ndarray:
    lo, hi = arm.limits
    for i, j in enumerate(arm.joints):
        if j.continuous:
            Q[:, i] = lo[i] + np.mod(Q[:, i] - lo[i], 2 * math.pi)
    return np.clip(Q, lo, hi)


def restart_guess(arm: ArmModel, seeds: np.ndarray, k: int) -> np.ndarray:
    """Initial configuration for restart ``k`` (restart 0 is the home pose)."""
    n = arm.n_joints
    if k == 0:
        return np.tile(np.asarray(arm.home, dtype=float), (len(seeds), 1))
    lo, hi = arm.limits
    u = hash_uniform(seeds[:, None], np.int64(k), np.arange(n)[None, :])
    return lo + u * (hi - lo)


def _ik_errors(R, p, R_t, p_t):
    e_pos = p_t - p
    e_rot = rotation_log(R_t @ np.transpose(R, (0, 2, 1)))
    return e_pos, e_rot


def _dls_step(A: np.ndarray, e: np.ndarray, lam2: float) -> np.ndarray:
    m = A.shape[1]
    JJt = A @ np.transpose(A, (0, 2, 1)) + lam2 * np.eye(m)
    y = np.linalg.solve(JJt, e[..., None])[..., 0]
    return np.einsum("nmj,nm->nj", A, y)


def solve_ik_batch(arm: ArmModel, targets: np.ndarray, Q0: np.ndarray, params: IKParams):
    """Run DLS from ``Q0`` toward each target; returns ``(Q, converged)``."""
    R_t, p_t = poses_to_rt(targets)
    Q = _wrap_limits(arm, np.array(Q0, dtype=float))
    N = Q.shape[0]
    done = np.zeros(N, dtype=bool)
    active = np.arange(N)
    lam2 = params.damping ** 2
    w = params.rot_weight
    position_only = params.mode == "position"
    lo, hi = arm.limits
    continuous = np.array([j.continuous for j in arm.joints])
    for _ in range(params.max_iter + 1):
        if active.size == 0:
            break
        Qa = Q[active]
        J, R, p = jacobian_batch(arm, Qa)
        e_pos, e_rot = _ik_errors(R, p, R_t[active], p_t[active])
        ok = np.linalg.norm(e_pos, axis=1) < params.tol_pos
        if not position_only:
            ok &= np.linalg.norm(e_rot, axis=1) < params.tol_rot
        done[active[ok]] = True
        keep = ~ok
        active = active[keep]
        if active.size == 0:
            break
        J = J[keep]
        if position_only:
            A = J[:, :3, :]
            e = e_pos[keep]
        else:
            A = J.copy()
            A[:, 3:, :] *= w
            e = np.concatenate([e_pos[keep], w * e_rot[keep]], axis=1)
        dq = _dls_step(A, e, lam2)
        # joints pinned at a limit and pushed outward are frozen, then re-solve
        Qk = Qa[keep]
        pinned = ((Qk <= lo + 1e-9) & (dq < 0)) | ((Qk >= hi - 1e-9) & (dq > 0))
        pinned &= ~continuous
        redo = np.flatnonzero(pinned.any(axis=1))
        if redo.size:
            A2 = A[redo] * (~pinned[redo])[:, None, :]
            dq[redo] = _dls_step(A2, e[redo], lam2)
        big = np.max(np.abs(dq), axis=1, keepdims=True)
        dq *= np.minimum(1.0, params.max_step / np.maximum(big, 1e-300))
        Q[active] = _wrap_limits(arm, Qa[keep] + dq)
    return Q, done


def solve_ik(
    arm: ArmModel,
    target: Pose6,
    tol_pos: float = 1e-3,
    tol_rot: float = 1e-2,
    restarts: int = 8,
    rng_seed: int = 0,
    params: IKParams | None = None,
) -> np.ndarray | None:
    """Joint vector placing the end effector at ``target``, or ``None``.

    ``None`` means no restart converged, which is not a proof that the pose is
    unreachable.
    """
    base = params or IKParams()
    params = IKParams(**{**asdict(base), "tol_pos": tol_pos, "tol_rot": tol_rot,
                         "restarts": restarts, "seed": rng_seed})
    tgt = target.as_array()[None, :]
    seeds = pose_seeds(tgt, params.seed)
    for k in range(params.restarts):
        Q, ok = solve_ik_batch(arm, tgt, restart_guess(arm, seeds, k), params)
        if ok[0]:
            return Q[0]
    return None


# ---------------------------------------------------------------------------
# collision checking


def _link_segments(arm: ArmModel, Q: np.ndarray):
    """World segments ``(N, 3)`` for every capsule: list of (link, a, b, radius)."""
    Rs, ps, _, _ = _chain(arm, Q)
    out = []
    for link, geoms in enumerate(arm.link_geometry()):
        R, p = Rs[link], ps[link]
        for cap in geoms:
            a = p + np.einsum("nij,j->ni", R, np.asarray(cap.a, dtype=float))
            b = p + np.einsum("nij,j->ni", R, np.asarray(cap.b, dtype=float))
            out.append((link, a, b, cap.radius))
    return out


def check_collision_batch(arm: ArmModel, Q: np.ndarray, scene: Scene) -> np.ndarray:
    """Collision flag per configuration (links vs. obstacles and non-adjacent links)."""
    from .shapes import segment_segment_distance

    Q = _check_q(arm, Q, check_limits=False)
    segs = _link_segments(arm, Q)
    hit = np.zeros(Q.shape[0], dtype=bool)
    for _, a, b, r in segs:
        for ob in scene:
            todo = ~hit
            if not np.any(todo):
                return hit
            d = ob.solid.segment_distance(a[todo], b[todo])
            hit[np.flatnonzero(todo)[d < r]] = True
    pairs = set(arm.self_collision_pairs)
    for i in range(len(segs)):
        for k in range(i + 1, len(segs)):
            li, lk = segs[i][0], segs[k][0]
            if (min(li, lk), max(li, lk)) not in pairs:
                continue
            d = segment_segment_distance(segs[i][1], segs[i][2], segs[k][1], segs[k][2])
            hit |= d < segs[i][3] + segs[k][3]
    return hit


def check_collision(arm: ArmModel, q: Sequence[float], scene: Scene) -> bool:
    q = np.asarray(q, dtype=float)
    _check_q(arm, q[None, :])
    return bool(check_collision_batch(arm, q[None, :], scene)[0])


def collision_free_ik_batch(
    arm: ArmModel,
    poses: np.ndarray,
    scene: Scene,
    params: IKParams,
    seeds: np.ndarray | None = None,
    return_q: bool = False,
):
    """Reachability oracle for a block of poses.

    A pose is reachable when some restart converges to a configuration that is
    collision free. Poses farther from the first joint than the chain's total
    length skip the solver (no IK can exist there).
    """
    poses = np.atleast_2d(np.asarray(poses, dtype=float))
    N = poses.shape[0]
    if seeds is None:
        seeds = pose_seeds(poses, params.seed)
    found = np.zeros(N, dtype=bool)
    Q_out = np.full((N, arm.n_joints), np.nan)
    center, reach = arm.max_reach()
    candidate = np.linalg.norm(poses[:, :3] - center, axis=1) <= reach + params.tol_pos
    todo = np.flatnonzero(candidate)
    for k in range(params.restarts):
        if todo.size == 0:
            break
        Q, ok = solve_ik_batch(arm, poses[todo], restart_guess(arm, seeds[todo], k), params)
        conv = np.flatnonzero(ok)
        if conv.size:
            free = ~check_collision_batch(arm, Q[conv], scene)
            good = conv[free]
            found[todo[good]] = True
            Q_out[todo[good]] = Q[good]
        todo = todo[~found[todo]]
    if return_q:
        return found, Q_out
    return found


def has_collision_free_ik(arm: ArmModel, pose: Pose6, scene: Scene, ik_params: IKParams) -> bool:
    return bool(collision_free_ik_batch(arm, pose.as_array()[None, :], scene, ik_params)[0])
