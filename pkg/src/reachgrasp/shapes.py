"""Solid primitives (box, sphere, cylinder), capsules and a static scene.

Every solid exposes a vectorized signed distance; segment-versus-solid
distances exploit convexity (the unsigned distance of a convex solid is a
convex function along a segment) and are found by golden-section search to
well below a nanometer.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .geometry import Pose6

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
_GSS_ITERS = 48


@dataclass(frozen=True)
class Solid:
    pose: Pose6

    def __post_init__(self):
        R = self.pose.rotation()
        object.__setattr__(self, "_R", R)
        object.__setattr__(self, "_t", self.pose.position)

    def to_local(self, pts: np.ndarray) -> np.ndarray:
        return (np.asarray(pts, dtype=float) - self._t) @ self._R

    def to_world_dir(self, v: np.ndarray) -> np.ndarray:
        return np.asarray(v) @ self._R.T

    @property
    def center(self) -> np.ndarray:
        return self._t

    def signed_distance(self, pts: np.ndarray) -> np.ndarray:
        return self._local_sd(self.to_local(pts))

    def distance(self, pts: np.ndarray) -> np.ndarray:
        """Unsigned distance, zero inside the solid."""
        return np.maximum(self.signed_distance(pts), 0.0)

    def segment_distance(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Distance from segments ``a[i]-b[i]`` (``(N, 3)``) to the solid."""
        a = self.to_local(a)
        b = self.to_local(b)
        d = b - a

        def f(t):
            return np.maximum(self._local_sd(a + t[:, None] * d), 0.0)

        lo = np.zeros(a.shape[0])
        hi = np.ones(a.shape[0])
        for _ in range(_GSS_ITERS):
            x1 = hi - _GOLDEN * (hi - lo)
            x2 = lo + _GOLDEN * (hi - lo)
            left = f(x1) <= f(x2)
            hi = np.where(left, x2, hi)
            lo = np.where(left, lo, x1)
        best = f(0.5 * (lo + hi))
        ends = np.minimum(f(np.zeros_like(lo)), f(np.ones_like(lo)))
        return np.minimum(best, ends)

    def closest_surface_point(self, p: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
        """Nearest surface point, outward unit normal there, and signed distance."""
        q, n, sd = self._local_closest(self.to_local(np.asarray(p, dtype=float)))
        return q @ self._R.T + self._t, n @ self._R.T, sd

    def raycast(self, origin: np.ndarray, direction: np.ndarray) -> tuple[float, np.ndarray] | None:
        """First entry of the ray into the solid: ``(t, outward normal)``."""
        o = self.to_local(origin)
        d = np.asarray(direction, dtype=float) @ self._R
        hit = self._local_ray(o, d)
        if hit is None:
            return None
        t, n = hit
        return t, n @ self._R.T

    # subclasses implement the local-frame primitives
    def _local_sd(self, p: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _local_closest(self, p: np.ndarray):
        raise NotImplementedError

    def _local_ray(self, o: np.ndarray, d: np.ndarray):
        raise NotImplementedError

    @property
    def bounding_radius(self) -> float:
        raise NotImplementedError

    def sample_surface(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Roughly uniform world-frame surface samples (used by test oracles)."""
        return self._local_samples(n, rng) @ self._R.T + self._t


@dataclass(frozen=True)
class Sphere(Solid):
    radius: float = 0.0

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("sphere radius must be positive")
        super().__post_init__()

    def _local_sd(self, p):
        return np.linalg.norm(p, axis=-1) - self.radius

    def _local_closest(self, p):
        r = float(np.linalg.norm(p))
        n = p / r if r > 0 else np.array([0.0, 0.0, 1.0])
        return n * self.radius, n, r - self.radius

    def _local_ray(self, o, d):
        b = float(o @ d)
        c = float(o @ o) - self.radius ** 2
        disc = b * b - c
        if disc < 0:
            return None
        t = -b - math.sqrt(disc)
        if t < 0:
            if c <= 0:  # origin inside
                return 0.0, o / max(np.linalg.norm(o), 1e-300)
            return None
        hit = o + t * d
        return t, hit / self.radius

    @property
    def bounding_radius(self):
        return self.radius

    def _local_samples(self, n, rng):
        v = rng.normal(size=(n, 3))
        return self.radius * v / np.linalg.norm(v, axis=1, keepdims=True)


@dataclass(frozen=True)
class Box(Solid):
    size: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if len(self.size) != 3 or min(self.size) <= 0:
            raise ValueError("box dimensions must be three positive lengths")
        object.__setattr__(self, "size", tuple(float(s) for s in self.size))
        object.__setattr__(self, "_h", np.array(self.size) / 2.0)
        super().__post_init__()

    def _local_sd(self, p):
        q = np.abs(p) - self._h
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(np.max(q, axis=-1), 0.0)
        return outside + inside

    def _local_closest(self, p):
        h = self._h
        q = np.abs(p) - h
        if np.any(q > 0):
            c = np.clip(p, -h, h)
            diff = p - c
            dist = float(np.linalg.norm(diff))
            return c, diff / dist, dist
        k = int(np.argmax(q))
        c = p.copy()
        s = 1.0 if p[k] >= 0 else -1.0
        c[k] = s * h[k]
        n = np.zeros(3)
        n[k] = s
        return c, n, float(q[k])

    def _local_ray(self, o, d):
        h = self._h
        t_enter, t_exit = -math.inf, math.inf
        axis_enter = -1
        for k in range(3):
            if abs(d[k]) < 1e-15:
                if abs(o[k]) > h[k]:
                    return None
                continue
            t1 = (-h[k] - o[k]) / d[k]
            t2 = (h[k] - o[k]) / d[k]
            if t1 > t2:
                t1, t2 = t2, t1
            if t1 > t_enter:
                t_enter, axis_enter = t1, k
            t_exit = min(t_exit, t2)
        if t_enter > t_exit or t_exit < 0:
            return None
        if t_enter < 0:
            # origin inside: report the nearest face as contact at t=0
            _, n, _ = self._local_closest(o)
            return 0.0, n
        n = np.zeros(3)
        n[axis_enter] = -math.copysign(1.0, d[axis_enter])
        return t_enter, n

    @property
    def bounding_radius(self):
        return float(np.linalg.norm(self._h))

    def _local_samples(self, n, rng):
        h = self._h
        areas = np.array([h[1] * h[2], h[0] * h[2], h[0] * h[1]])
        faces = rng.choice(3, size=n, p=areas / areas.sum())
        pts = rng.uniform(-h, h, size=(n, 3))
        sign = rng.choice([-1.0, 1.0], size=n)
        pts[np.arange(n), faces] = sign * h[faces]
        return pts


@dataclass(frozen=True)
class Cylinder(Solid):
    """Solid cylinder whose axis is the local z axis."""

    radius: float = 0.0
    height: float = 0.0

    def __post_init__(self):
        if not (self.radius > 0 and self.height > 0):
            raise ValueError("cylinder radius and height must be positive")
        super().__post_init__()

    def _local_sd(self, p):
        dr = np.hypot(p[..., 0], p[..., 1]) - self.radius
        dz = np.abs(p[..., 2]) - self.height / 2.0
        outside = np.hypot(np.maximum(dr, 0.0), np.maximum(dz, 0.0))
        inside = np.minimum(np.maximum(dr, dz), 0.0)
        return outside + inside

    def _local_closest(self, p):
        R, H = self.radius, self.height / 2.0
        rho = math.hypot(p[0], p[1])
        u = np.array([p[0] / rho, p[1] / rho, 0.0]) if rho > 0 else np.array([1.0, 0.0, 0.0])
        dr, dz = rho - R, abs(p[2]) - H
        sz = 1.0 if p[2] >= 0 else -1.0
        if dr > 0 or dz > 0:
            c_rho = min(rho, R)
            c = np.array([u[0] * c_rho, u[1] * c_rho, min(max(p[2], -H), H)])
            diff = p - c
            dist = float(np.linalg.norm(diff))
            return c, diff / dist, dist
        if dr > dz:
            c = np.array([u[0] * R, u[1] * R, p[2]])
            return c, u, dr
        c = np.array([p[0], p[1], sz * H])
        return c, np.array([0.0, 0.0, sz]), dz

    def _local_ray(self, o, d):
        R, H = self.radius, self.height / 2.0
        if self._local_sd(o) <= 0:
            _, n, _ = self._local_closest(o)
            return 0.0, n
        best = None
        # lateral surface
        a = d[0] ** 2 + d[1] ** 2
        if a > 1e-18:
            b = o[0] * d[0] + o[1] * d[1]
            c = o[0] ** 2 + o[1] ** 2 - R * R
            disc = b * b - a * c
            if disc >= 0:
                t = (-b - math.sqrt(disc)) / a
                if t >= 0 and abs(o[2] + t * d[2]) <= H:
                    hit = o + t * d
                    best = (t, np.array([hit[0] / R, hit[1] / R, 0.0]))
        # caps
        if abs(d[2]) > 1e-15:
            for s in (-1.0, 1.0):
                t = (s * H - o[2]) / d[2]
                if t >= 0:
                    hit = o + t * d
                    if hit[0] ** 2 + hit[1] ** 2 <= R * R and (best is None or t < best[0]):
                        best = (t, np.array([0.0, 0.0, s]))
        return best

    @property
    def bounding_radius(self):
        return math.hypot(self.radius, self.height / 2.0)

    def _local_samples(self, n, rng):
        R, H = self.radius, self.height / 2.0
        side = 2 * math.pi * R * 2 * H
        cap = math.pi * R * R
        kind = rng.choice(3, size=n, p=np.array([side, cap, cap]) / (side + 2 * cap))
        th = rng.uniform(0, 2 * math.pi, n)
        rr = R * np.sqrt(rng.uniform(0, 1, n))
        pts = np.empty((n, 3))
        pts[:, 0] = np.where(kind == 0, R * np.cos(th), rr * np.cos(th))
        pts[:, 1] = np.where(kind == 0, R * np.sin(th), rr * np.sin(th))
        pts[:, 2] = np.where(kind == 0, rng.uniform(-H, H, n), np.where(kind == 1, -H, H))
        return pts


def make_solid(shape: str, dims: dict, pose: Pose6) -> Solid:
    shape = shape.lower()
    if shape == "box":
        return Box(pose=pose, size=tuple(dims["size"]))
    if shape == "sphere":
        return Sphere(pose=pose, radius=float(dims["radius"]))
    if shape == "cylinder":
        return Cylinder(pose=pose, radius=float(dims["radius"]), height=float(dims["height"]))
    raise ValueError(f"unknown primitive shape {shape!r}")


@dataclass(frozen=True)
class Capsule:
    """Link primitive: segment ``a``-``b`` in the link frame swept by ``radius``.

    A sphere is the degenerate capsule with ``a == b``.
    """

    a: tuple[float, float, float]
    b: tuple[float, float, float]
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("capsule radius must be positive")


@dataclass(frozen=True)
class Obstacle:
    solid: Solid
    name: str = ""
    tags: tuple[str, ...] = ()

    @property
    def static(self) -> bool:
        return bool({"table", "wall", "static"} & set(self.tags))


@dataclass(frozen=True)
class Scene:
    obstacles: tuple[Obstacle, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "obstacles", tuple(self.obstacles))

    def __len__(self):
        return len(self.obstacles)

    def __iter__(self):
        return iter(self.obstacles)

    def with_obstacles(self, extra: Iterable[Obstacle]) -> "Scene":
        return Scene(self.obstacles + tuple(extra))

    def static_only(self) -> "Scene":
        return Scene(tuple(o for o in self.obstacles if o.static))

    def dynamic_only(self) -> "Scene":
        return Scene(tuple(o for o in self.obstacles if not o.static))

    def digest(self) -> str:
        import hashlib
        return hashlib.sha256(repr(self.obstacles).encode()).hexdigest()[:16]

    def signed_distance(self, pts: np.ndarray) -> np.ndarray:
        """Minimum signed distance over obstacles (``+inf`` for an empty scene)."""
        pts = np.asarray(pts, dtype=float)
        out = np.full(pts.shape[:-1], np.inf)
        for ob in self.obstacles:
            out = np.minimum(out, ob.solid.signed_distance(pts))
        return out


def segment_segment_distance(p1, q1, p2, q2) -> np.ndarray:
    """Vectorized closest distance between segments ``p1-q1`` and ``p2-q2``."""
    p1, q1, p2, q2 = (np.asarray(v, dtype=float) for v in (p1, q1, p2, q2))
    d1 = q1 - p1
    d2 = q2 - p2
    r = p1 - p2
    a = np.einsum("...i,...i", d1, d1)
    e = np.einsum("...i,...i", d2, d2)
    f = np.einsum("...i,...i", d2, r)
    c = np.einsum("...i,...i", d1, r)
    b = np.einsum("...i,...i", d1, d2)
    eps = 1e-18
    denom = a * e - b * b
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(denom > eps, np.clip((b * f - c * e) / np.where(denom > eps, denom, 1.0), 0.0, 1.0), 0.0)
        s = np.where(a <= eps, 0.0, s)
        t = np.where(e > eps, (b * s + f) / np.where(e > eps, e, 1.0), 0.0)
        # clamp t and recompute s where needed
        t_lo = t < 0.0
        t_hi = t > 1.0
        t = np.clip(t, 0.0, 1.0)
        s_lo = np.where(a > eps, np.clip(-c / np.where(a > eps, a, 1.0), 0.0, 1.0), 0.0)
        s_hi = np.where(a > eps, np.clip((b - c) / np.where(a > eps, a, 1.0), 0.0, 1.0), 0.0)
        s = np.where(t_lo & (e > eps), s_lo, s)
        s = np.where(t_hi & (e > eps), s_hi, s)
        s = np.where((e <= eps) & (a > eps), np.clip(-c / np.where(a > eps, a, 1.0), 0.0, 1.0), s)
    c1 = p1 + d1 * s[..., None]
    c2 = p2 + d2 * t[..., None]
    return np.linalg.norm(c1 - c2, axis=-1)
