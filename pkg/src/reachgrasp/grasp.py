"""Grasp energies: contact proximity, force-closure potential, reachability.

Hand frame convention: the hand approaches along +x and fingers close toward
the x axis. Finger ``i`` sits at angle ``phi_i`` in the hand y-z plane; its
pad site is ``(pad_depth, a/2 cos phi, a/2 sin phi)`` for aperture ``a`` and
it closes along ``-(0, cos phi, sin phi)``.

Contact and potential energies are scaled to millimetre-like magnitudes
(``contact_scale``/``potential_scale``) so that they sit in the same order of
magnitude as ``10 * d_sdf``; see the notes in the README.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, QhullError

from .geometry import Pose6
from .sdf import SdfGrid, box_diagonal, query_sdf_array
from .shapes import Solid, make_solid

DEFAULT_ALPHAS = (-0.1, -10.0, -10.0)


@dataclass(frozen=True)
class GraspObject:
    shape: str
    dims: dict
    pose: Pose6 = field(default_factory=Pose6)
    mu: float = 0.5
    name: str = "object"

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("friction coefficient must be positive")
        object.__setattr__(self, "dims", dict(self.dims))
        object.__setattr__(self, "_solid", make_solid(self.shape, self.dims, self.pose))

    @property
    def solid(self) -> Solid:
        return self._solid

    @property
    def center(self) -> np.ndarray:
        return self._solid.center

    @property
    def bounding_radius(self) -> float:
        return self._solid.bounding_radius

    def moved(self, pose: Pose6) -> "GraspObject":
        return GraspObject(self.shape, self.dims, pose, self.mu, self.name)

    def __hash__(self):
        return hash((self.shape, tuple(sorted((k, repr(v)) for k, v in self.dims.items())), self.pose, self.mu))


@dataclass(frozen=True)
class Gripper:
    """Parallel-jaw (one DOF: aperture) or three-finger (aperture, spread) hand.

    Lengths are meters. ``aperture`` is the pad-to-pad opening for the jaw and
    twice the pad radius for the three-finger hand.
    """

    name: str = "parallel_jaw"
    kind: str = "parallel"
    aperture: tuple[float, float] = (0.0, 0.11)
    spread: tuple[float, float] = (0.0, math.pi / 2)
    pad_depth: float = 0.065
    finger_base: float = 0.01
    finger_tip: float = 0.08
    finger_radius: float = 0.008
    palm_radius: float = 0.018
    torsion: float = 0.01

    def __post_init__(self):
        if self.kind not in ("parallel", "three_finger"):
            raise ValueError(f"unknown gripper kind {self.kind!r}")
        if not (0 <= self.aperture[0] < self.aperture[1]):
            raise ValueError("aperture limits must satisfy 0 <= lo < hi")
        if not self.finger_base < self.finger_tip:
            raise ValueError("finger_base must be below finger_tip")

    @property
    def n_dof(self) -> int:
        return 1 if self.kind == "parallel" else 2

    @property
    def dof_lower(self) -> np.ndarray:
        return np.array([self.aperture[0]] if self.n_dof == 1 else [self.aperture[0], self.spread[0]])

    @property
    def dof_upper(self) -> np.ndarray:
        return np.array([self.aperture[1]] if self.n_dof == 1 else [self.aperture[1], self.spread[1]])

    def check_dof(self, dof) -> np.ndarray:
        d = np.asarray(dof, dtype=float).reshape(-1)
        if d.shape != (self.n_dof,):
            raise ValueError(f"{self.name} expects {self.n_dof} DOF values, got {d.shape[0]}")
        if np.any(d < self.dof_lower - 1e-12) or np.any(d > self.dof_upper + 1e-12):
            raise ValueError(f"DOF {d.tolist()} outside limits")
        return d

    def finger_angles(self, dof) -> np.ndarray:
        if self.kind == "parallel":
            return np.array([0.0, math.pi])
        s = float(dof[1])
        return np.array([0.0, math.pi - s, math.pi + s])

    def sites(self, dof) -> tuple[np.ndarray, np.ndarray]:
        """Hand-frame pad sites and their inward (closing) unit directions."""
        phi = self.finger_angles(dof)
        half = 0.5 * float(dof[0])
        radial = np.stack([np.zeros_like(phi), np.cos(phi), np.sin(phi)], axis=1)
        pts = radial * half
        pts[:, 0] = self.pad_depth
        return pts, -radial

    def collision_points(self, dof, per_segment: int = 8) -> tuple[np.ndarray, np.ndarray]:
        """Hand-frame sample points on the finger and palm axes with their radii."""
        phi = self.finger_angles(dof)
        r_axis = 0.5 * float(dof[0]) + self.finger_radius
        t = np.linspace(0.0, 1.0, per_segment)
        pts, rad = [], []
        for p in phi:
            c, s = math.cos(p), math.sin(p)
            x = self.finger_base + t * (self.finger_tip - self.finger_base)
            pts.append(np.stack([x, np.full_like(x, r_axis * c), np.full_like(x, r_axis * s)], axis=1))
            rad.append(np.full(per_segment, self.finger_radius))
        w = 0.5 * self.aperture[1] + self.finger_radius
        ys = np.linspace(-w, w, per_segment)
        pts.append(np.stack([np.zeros_like(ys), ys, np.zeros_like(ys)], axis=1))
        rad.append(np.full(per_segment, self.palm_radius))
        return np.concatenate(pts), np.concatenate(rad)

    @property
    def bounding_radius(self) -> float:
        w = 0.5 * self.aperture[1] + self.finger_radius
        return math.hypot(self.finger_tip, w) + self.finger_radius


@dataclass(frozen=True)
class GraspConfig:
    pose: Pose6
    dof: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "dof", tuple(float(v) for v in np.asarray(self.dof).reshape(-1)))

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.pose.as_array(), self.dof])

    @classmethod
    def from_array(cls, v) -> "GraspConfig":
        v = np.asarray(v, dtype=float)
        return cls(Pose6.from_array(v[:6]), tuple(v[6:]))


@dataclass(frozen=True)
class EnergyParams:
    beta: float = 0.1
    contact_scale: float = 1000.0
    potential_scale: float = 1000.0
    cone_edges: int = 8
    missing_contact: float = 10.0


DEFAULT_ENERGY = EnergyParams()


@dataclass(frozen=True)
class EnergyBreakdown:
    e_p: float
    e_contact: float
    e_reach: float
    total: float
    stable: bool
    reachable: bool
    branch: str = ""

    def to_dict(self) -> dict:
        return {"e_p": self.e_p, "e_contact": self.e_contact, "e_reach": self.e_reach,
                "total": self.total, "stable": self.stable, "reachable": self.reachable,
                "branch": self.branch}


def _world_sites(g: GraspConfig, hand: Gripper):
    pts, dirs = hand.sites(g.dof)
    R = g.pose.rotation()
    return pts @ R.T + g.pose.position, dirs @ R.T


def contact_energy(g: GraspConfig, obj: GraspObject, hand: Gripper,
                   params: EnergyParams = DEFAULT_ENERGY) -> float:
    """Sum over pad sites of surface distance plus ``beta * (1 - cos theta)``."""
    sites, dirs = _world_sites(g, hand)
    total = 0.0
    for s, d in zip(sites, dirs):
        _, n_out, sd = obj.solid.closest_surface_point(s)
        cos_t = -float(d @ n_out)
        total += abs(sd) + params.beta * (1.0 - cos_t)
    return params.contact_scale * total


# ---------------------------------------------------------------------------
# force closure


def close_fingers(g: GraspConfig, obj: GraspObject, hand: Gripper):
    """Close every finger along its direction; return hit points and inward normals.

    A finger misses when its ray does not meet the object within its travel
    (half the aperture). Missing fingers are dropped.
    """
    sites, dirs = _world_sites(g, hand)
    travel = 0.5 * g.dof[0] + 1e-9
    pts, normals = [], []
    for s, d in zip(sites, dirs):
        hit = obj.solid.raycast(s, d)
        if hit is None or hit[0] > travel:
            continue
        t, n_out = hit
        pts.append(s + t * d)
        normals.append(-np.asarray(n_out))
    return np.array(pts).reshape(-1, 3), np.array(normals).reshape(-1, 3)


def _tangent_basis(n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    t1 = _cross(n, a)
    t1 /= np.linalg.norm(t1)
    return t1, _cross(n, t1)


def _cross(a, b):
    # np.cross carries heavy per-call overhead for tiny inputs
    return np.stack([a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1],
                     a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2],
                     a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]], axis=-1)


def contact_wrenches(points, normals, mu, center, rho, cone_edges=8, torsion=0.0) -> np.ndarray:
    """Soft-finger primitive wrenches: friction-pyramid edges plus torsional pair.

    Forces have unit normal component; torques are divided by ``rho`` so that
    force and torque coordinates are commensurate.
    """
    points = np.asarray(points, float)
    normals = np.asarray(normals, float)
    if len(points) == 0:
        return np.zeros((0, 6))
    ang = 2 * math.pi * np.arange(cone_edges) / cone_edges
    ca, sa = np.cos(ang), np.sin(ang)
    blocks = []
    for c, n in zip(points, normals):
        t1, t2 = _tangent_basis(n)
        f = n + mu * (ca[:, None] * t1 + sa[:, None] * t2)
        blk = np.empty((cone_edges + (2 if torsion > 0 else 0), 6))
        blk[:cone_edges, :3] = f
        blk[:cone_edges, 3:] = _cross(c - center, f) / rho
        if torsion > 0:
            tn = torsion * mu * n / rho
            blk[cone_edges:, :3] = 0.0
            blk[cone_edges, 3:] = tn
            blk[cone_edges + 1, 3:] = -tn
        blocks.append(blk)
    return np.vstack(blocks)


def planar_contact_wrenches(points, normals, mu, center, rho) -> np.ndarray:
    """2D analog: two friction-cone edges per contact, wrench ``(fx, fy, tau)``."""
    out = []
    for c, n in zip(np.asarray(points, float), np.asarray(normals, float)):
        n = n / np.linalg.norm(n)
        t = np.array([-n[1], n[0]])
        r = c - center
        for s in (-1.0, 1.0):
            f = n + s * mu * t
            out.append([f[0], f[1], (r[0] * f[1] - r[1] * f[0]) / rho])
    return np.asarray(out)


def hull_quality(W: np.ndarray) -> tuple[bool, float]:
    """``(closed, value)``: inscribed radius of the hull about the origin if it
    strictly contains the origin, else the largest facet violation (>= 0)."""
    W = np.asarray(W, float)
    d = W.shape[1] if W.ndim == 2 else 0
    if W.shape[0] <= d or np.linalg.matrix_rank(W) < d:
        return False, 1.0
    try:
        # Q0 skips facet merging: several times faster, same offsets here
        hull = ConvexHull(W, qhull_options="Q0")
    except (QhullError, ValueError):
        return False, 1.0
    off = hull.equations[:, -1]
    worst = float(off.max())
    if worst < -1e-12:
        return True, float(-worst)
    return False, max(worst, 0.0)


def force_closure_lp(W: np.ndarray) -> bool:
    """LP verdict: origin strictly inside ``conv(W)`` and ``W`` spans the space."""
    W = np.asarray(W, float)
    m, d = W.shape
    if m <= d or np.linalg.matrix_rank(W) < d:
        return False
    # maximize s subject to sum(l) = 1, W^T l = 0, l_i >= s
    c = np.zeros(m + 1)
    c[-1] = -1.0
    A_eq = np.zeros((d + 1, m + 1))
    A_eq[:d, :m] = W.T
    A_eq[d, :m] = 1.0
    b_eq = np.zeros(d + 1)
    b_eq[d] = 1.0
    A_ub = np.hstack([-np.eye(m), np.ones((m, 1))])
    res = linprog(c, A_ub=A_ub, b_ub=np.zeros(m), A_eq=A_eq, b_eq=b_eq,
                  bounds=[(0, None)] * m + [(None, 1.0)], method="highs")
    return bool(res.status == 0 and -res.fun > 1e-9)


def grasp_wrenches(g: GraspConfig, obj: GraspObject, hand: Gripper,
                   params: EnergyParams = DEFAULT_ENERGY) -> tuple[np.ndarray, int]:
    pts, normals = close_fingers(g, obj, hand)
    W = contact_wrenches(pts, normals, obj.mu, obj.center, obj.bounding_radius,
                         params.cone_edges, hand.torsion)
    return W, len(pts)


def potential_energy(g: GraspConfig, obj: GraspObject, hand: Gripper,
                     params: EnergyParams = DEFAULT_ENERGY) -> float:
    """``-scale * q_eps`` under force closure, else ``+scale * residual``."""
    W, n_contacts = grasp_wrenches(g, obj, hand, params)
    if n_contacts < 2:
        return params.potential_scale * params.missing_contact
    closed, value = hull_quality(W)
    return params.potential_scale * (-value if closed else value)


# ---------------------------------------------------------------------------
# reachability and combined energies


def reachability_energy(sdf: SdfGrid, p: Pose6) -> float:
    """SDF value at ``p``, or ``-(box diagonal)`` outside the grid box."""
    v = query_sdf_array(sdf, p.as_array())
    if math.isnan(v):
        return -box_diagonal(sdf.spec, sdf.metric)
    return float(v)


def combine_cp(e_p: float, e_contact: float) -> float:
    return e_p if e_p < 0 else e_contact


def combine_ours(e_p: float, e_contact: float, e_reach: float,
                 alphas=DEFAULT_ALPHAS) -> EnergyBreakdown:
    a1, a2, a3 = alphas
    stable = e_p < 0
    reachable = e_reach >= 0
    if reachable and stable:
        total, branch = e_p + a1 * e_reach, "reachable_stable"
    elif reachable:
        total, branch = e_contact + a2 * e_reach, "reachable_unstable"
    else:
        total, branch = e_contact + a3 * e_reach, "unreachable"
    return EnergyBreakdown(float(e_p), float(e_contact), float(e_reach), float(total),
                           stable, reachable, branch)


def energy_sa_cp(g: GraspConfig, obj: GraspObject, hand: Gripper,
                 params: EnergyParams = DEFAULT_ENERGY) -> float:
    e_p = potential_energy(g, obj, hand, params)
    if e_p < 0:
        return e_p
    return contact_energy(g, obj, hand, params)


def energy_sa_ours(g: GraspConfig, obj: GraspObject, hand: Gripper, sdf: SdfGrid,
                   a1: float = DEFAULT_ALPHAS[0], a2: float = DEFAULT_ALPHAS[1],
                   a3: float = DEFAULT_ALPHAS[2], params: EnergyParams = DEFAULT_ENERGY) -> EnergyBreakdown:
    e_p = potential_energy(g, obj, hand, params)
    e_reach = reachability_energy(sdf, g.pose)
    e_contact = contact_energy(g, obj, hand, params)
    return combine_ours(e_p, e_contact, e_reach, (a1, a2, a3))


def evaluate_grasp(g: GraspConfig, obj: GraspObject, hand: Gripper, energy: str,
                   sdf: SdfGrid | None = None, alphas=DEFAULT_ALPHAS,
                   params: EnergyParams = DEFAULT_ENERGY) -> EnergyBreakdown:
    """Breakdown under either energy; for ``sa-cp`` the total is the contact-and-potential value."""
    e_p = potential_energy(g, obj, hand, params)
    e_contact = contact_energy(g, obj, hand, params)
    e_reach = reachability_energy(sdf, g.pose) if sdf is not None else math.nan
    if energy == "sa-ours":
        if sdf is None:
            raise ValueError("sa-ours needs a reachability SDF")
        return combine_ours(e_p, e_contact, e_reach, alphas)
    if energy == "sa-cp":
        stable = e_p < 0
        return EnergyBreakdown(float(e_p), float(e_contact), float(e_reach), float(combine_cp(e_p, e_contact)),
                               stable, bool(e_reach >= 0), "stable" if stable else "unstable")
    raise ValueError(f"unknown energy {energy!r}")


@dataclass(frozen=True)
class RankedGrasp:
    config: GraspConfig
    breakdown: EnergyBreakdown
    index: int


def rank_grasp_list(grasps, obj: GraspObject, hand: Gripper, sdf: SdfGrid,
                    alphas=DEFAULT_ALPHAS, params: EnergyParams = DEFAULT_ENERGY) -> list[RankedGrasp]:
    """Ascending total energy; ties go to larger ``e_reach`` then input order."""
    grasps = list(grasps)
    if not grasps:
        raise ValueError("cannot rank an empty grasp list")
    ranked = [RankedGrasp(g, energy_sa_ours(g, obj, hand, sdf, *alphas, params=params), i)
              for i, g in enumerate(grasps)]
    ranked.sort(key=lambda r: (r.breakdown.total, -r.breakdown.e_reach, r.index))
    return ranked
