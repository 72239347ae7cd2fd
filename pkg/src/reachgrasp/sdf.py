"""Signed distance fields over reachability grids.

Distances live in a unified pose metric: one ``res_lin_cm`` centimeters of
translation or ``res_rot / sqrt(ratio)`` radians of rotation is one unit.
Positive values are reachable, negative unreachable; the zero level sits
midway between opposite-labelled neighbours.

The ``SDF6`` file is the ``RGRD`` header (magic ``b"SDF6"``), then
``res_lin_cm, res_rot, ratio`` as three f64, then one f32 per cell row-major,
then a CRC32 of everything before it.
"""
from __future__ import annotations

import itertools
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

from .geometry import Pose6, TWO_PI, wrap_angle
from .kinematics import ArmModel, IKParams, collision_free_ik_batch, pose_seeds
from .reachability import (
    GridFormatError,
    GridSpec,
    ReachabilityGrid,
    pack_header,
    unpack_header,
    with_checksum,
)
from .shapes import Scene


class DegenerateGridError(ValueError):
    """The grid has no boundary (every cell carries the same label)."""


class OutOfDomainError(ValueError):
    """Query pose lies outside the grid's translational box."""


@dataclass(frozen=True)
class MetricParams:
    res_lin_cm: float = 10.0
    res_rot: float = math.pi / 4
    ratio: float = 1.0

    def __post_init__(self):
        if not (self.res_lin_cm > 0 and self.res_rot > 0 and self.ratio > 0):
            raise ValueError("metric resolutions and ratio must be positive")

    @property
    def lin_weight(self) -> float:
        """Metric units per meter."""
        return 100.0 / self.res_lin_cm

    @property
    def rot_weight(self) -> float:
        """Metric units per radian."""
        return math.sqrt(self.ratio) / self.res_rot

    def axis_weights(self, spec: GridSpec) -> np.ndarray:
        return np.where(spec.angular, self.rot_weight, self.lin_weight)


def metric_distance(a: Pose6, b: Pose6, m: MetricParams) -> float:
    da = a.as_array() - b.as_array()
    lin = da[:3] * 100.0 / m.res_lin_cm
    rot = np.array([wrap_angle(float(v)) for v in da[3:]]) / m.res_rot
    return math.sqrt(float(lin @ lin) + m.ratio * float(rot @ rot))


def metric_distance_batch(A: np.ndarray, B: np.ndarray, m: MetricParams) -> np.ndarray:
    d = np.asarray(A, dtype=float) - np.asarray(B, dtype=float)
    lin = d[..., :3] * (100.0 / m.res_lin_cm)
    rot = wrap_angle(d[..., 3:]) / m.res_rot
    return np.sqrt(np.sum(lin * lin, axis=-1) + m.ratio * np.sum(rot * rot, axis=-1))


def edge_lengths(spec: GridSpec, m: MetricParams) -> np.ndarray:
    """Metric length of a single step along each axis."""
    return spec.steps * m.axis_weights(spec)


def step_metric_length(spec: GridSpec, m: MetricParams) -> float:
    """Tolerance unit "one grid step": the longest single-axis step in metric units."""
    e = edge_lengths(spec, m)
    e = e[np.asarray(spec.shape) > 1]
    return float(e.max()) if e.size else 0.0


def box_diagonal(spec: GridSpec, m: MetricParams) -> float:
    ext = np.array([a.max - a.min for a in spec.axes])
    return float(np.linalg.norm(ext * m.axis_weights(spec)))


@dataclass(frozen=True)
class SdfGrid:
    spec: GridSpec
    metric: MetricParams
    values: np.ndarray  # float32, shape == spec.shape
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.values, dtype=np.float32).reshape(self.spec.shape))
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "_flat", v.ravel().astype(np.float64))
        object.__setattr__(self, "_shape", np.array(self.spec.shape, dtype=np.int64))
        object.__setattr__(self, "_mins", self.spec.mins)
        object.__setattr__(self, "_steps", self.spec.steps)
        object.__setattr__(self, "_cyc", self.spec.cyclic)
        object.__setattr__(self, "_ang", self.spec.angular)

    def __eq__(self, other):
        if not isinstance(other, SdfGrid):
            return NotImplemented
        return (self.spec == other.spec and self.metric == other.metric
                and np.array_equal(self.values, other.values) and self.provenance == other.provenance)

    __hash__ = None

    def digest(self) -> str:
        import hashlib

        h = hashlib.sha256(repr((self.spec, self.metric)).encode())
        h.update(self.values.tobytes())
        return h.hexdigest()[:16]


# ---------------------------------------------------------------------------
# wavefront distance transform


def neighbour_offsets(ndim: int, mode: str) -> np.ndarray:
    if mode == "face":
        offs = []
        for k in range(ndim):
            for s in (-1, 1):
                o = [0] * ndim
                o[k] = s
                offs.append(o)
        return np.array(offs, dtype=np.int64)
    if mode == "full":
        offs = [o for o in itertools.product((-1, 0, 1), repeat=ndim) if any(o)]
        return np.array(offs, dtype=np.int64)
    raise ValueError(f"unknown neighbourhood {mode!r}")


@numba.njit(cache=True)
def _decode(idx, strides, coord):
    rem = idx
    for k in range(strides.shape[0]):
        c = rem // strides[k]
        rem -= c * strides[k]
        coord[k] = c


@numba.njit(cache=True)
def _neighbour(coord, off, shape, strides, cyc):
    """Flat index of ``coord + off`` or -1 if it leaves a non-cyclic axis."""
    out = 0
    for k in range(shape.shape[0]):
        c2 = coord[k] + off[k]
        n = shape[k]
        if c2 < 0 or c2 >= n:
            if not cyc[k]:
                return -1
            c2 = c2 % n
        out += c2 * strides[k]
    return out


@numba.njit(cache=True)
def _heap_push(heap, pos, key, size, cell):
    i = size
    heap[i] = cell
    pos[cell] = i
    while i > 0:
        parent = (i - 1) // 2
        if key[heap[parent]] <= key[heap[i]]:
            break
        a, b = heap[parent], heap[i]
        heap[parent], heap[i] = b, a
        pos[b] = parent
        pos[a] = i
        i = parent
    return size + 1


@numba.njit(cache=True)
def _heap_sift_up(heap, pos, key, i):
    while i > 0:
        parent = (i - 1) // 2
        if key[heap[parent]] <= key[heap[i]]:
            break
        a, b = heap[parent], heap[i]
        heap[parent], heap[i] = b, a
        pos[b] = parent
        pos[a] = i
        i = parent


@numba.njit(cache=True)
def _heap_pop(heap, pos, key, size):
    top = heap[0]
    pos[top] = -2
    size -= 1
    if size > 0:
        last = heap[size]
        heap[0] = last
        pos[last] = 0
        i = 0
        while True:
            l = 2 * i + 1
            r = l + 1
            m = i
            if l < size and key[heap[l]] < key[heap[m]]:
                m = l
            if r < size and key[heap[r]] < key[heap[m]]:
                m = r
            if m == i:
                break
            a, b = heap[m], heap[i]
            heap[m], heap[i] = b, a
            pos[b] = m
            pos[a] = i
            i = m
    return top, size


@numba.njit(cache=True)
def _wavefront(labels, shape, cyc, offsets, weights):
    n = labels.shape[0]
    ndim = shape.shape[0]
    strides = np.empty(ndim, dtype=np.int64)
    s = 1
    for k in range(ndim - 1, -1, -1):
        strides[k] = s
        s *= shape[k]
    coord = np.empty(ndim, dtype=np.int64)
    dist = np.full(n, np.inf)
    heap = np.empty(n, dtype=np.int64)
    pos = np.full(n, -1, dtype=np.int64)
    size = 0
    n_off = offsets.shape[0]
    for i in range(n):
        best = np.inf
        _decode(i, strides, coord)
        for o in range(n_off):
            j = _neighbour(coord, offsets[o], shape, strides, cyc)
            if j < 0 or j == i:
                continue
            if labels[j] != labels[i] and 0.5 * weights[o] < best:
                best = 0.5 * weights[o]
        if best < np.inf:
            dist[i] = best
            size = _heap_push(heap, pos, dist, size, i)
    while size > 0:
        i, size = _heap_pop(heap, pos, dist, size)
        di = dist[i]
        _decode(i, strides, coord)
        for o in range(n_off):
            j = _neighbour(coord, offsets[o], shape, strides, cyc)
            if j < 0 or j == i or labels[j] != labels[i] or pos[j] == -2:
                continue
            nd = di + weights[o]
            if nd < dist[j]:
                dist[j] = nd
                if pos[j] == -1:
                    size = _heap_push(heap, pos, dist, size, j)
                else:
                    _heap_sift_up(heap, pos, dist, pos[j])
    return dist


def _check_degenerate(grid: ReachabilityGrid) -> None:
    n_true = grid.reachable_count
    if n_true == 0:
        raise DegenerateGridError("degenerate grid: no reachable cell, the field has no boundary")
    if n_true == grid.spec.size:
        raise DegenerateGridError("degenerate grid: every cell reachable, the field has no boundary")


def compute_sdf(grid: ReachabilityGrid, m: MetricParams, neighbourhood: str = "full") -> SdfGrid:
    """Signed distance by Dijkstra propagation over the grid graph.

    ``"full"`` links every cell to all 3**ndim - 1 neighbours and stays within
    about one step of the exact metric distance. ``"face"`` keeps only the
    2*ndim axis neighbours: much faster, but diagonal distances come out as
    city-block sums, so it overestimates away from the boundary.
    """
    _check_degenerate(grid)
    spec = grid.spec
    offsets = neighbour_offsets(spec.ndim, neighbourhood)
    step_len = edge_lengths(spec, m)
    weights = np.sqrt(((offsets * step_len) ** 2).sum(axis=1))
    labels = grid.labels.ravel()
    dist = _wavefront(labels, np.array(spec.shape, dtype=np.int64), spec.cyclic, offsets, weights)
    values = np.where(labels, dist, -dist)
    prov = {"source": grid.provenance, "neighbourhood": neighbourhood}
    return SdfGrid(spec, m, values, prov)


def brute_force_sdf(grid: ReachabilityGrid, m: MetricParams) -> SdfGrid:
    """Exact distance from each cell center to the nearest opposite-label center.

    Quadratic in the number of cells; meant as a test oracle on small grids.
    """
    _check_degenerate(grid)
    spec = grid.spec
    pts = np.stack(np.meshgrid(*[a.min + a.step * np.arange(a.count) for a in spec.axes],
                               indexing="ij"), axis=-1).reshape(-1, spec.ndim)
    labels = grid.labels.ravel()
    w = m.axis_weights(spec)
    cyc = spec.cyclic
    out = np.empty(len(pts))
    for i in range(len(pts)):
        other = pts[labels != labels[i]]
        d = np.abs(other - pts[i])
        d = np.where(cyc, np.minimum(d, TWO_PI - d), d)
        out[i] = np.sqrt((((d * w) ** 2).sum(axis=1)).min())
    values = np.where(labels, out, -out)
    return SdfGrid(spec, m, values, {"source": grid.provenance, "neighbourhood": "brute_force"})


# ---------------------------------------------------------------------------
# interpolation


@numba.njit(cache=True)
def _interp(flat, shape, mins, steps, cyc, ang, p, eps):
    ndim = shape.shape[0]
    i0 = np.empty(ndim, dtype=np.int64)
    i1 = np.empty(ndim, dtype=np.int64)
    frac = np.empty(ndim)
    for k in range(ndim):
        n = shape[k]
        x = p[k]
        if n == 1:
            if not ang[k] and abs(x - mins[k]) > eps:
                return np.nan
            i0[k] = 0
            i1[k] = 0
            frac[k] = 0.0
            continue
        if ang[k]:
            x = mins[k] + ((x - mins[k]) % (2.0 * np.pi))
            if not cyc[k] and (x - mins[k]) / steps[k] > n - 1 + eps:
                # partial-range angular axis: also try the representative below
                x -= 2.0 * np.pi
        u = (x - mins[k]) / steps[k]
        # snap lattice roundoff so corners return stored values exactly
        r = np.floor(u + 0.5)
        if abs(u - r) <= eps:
            u = r
        if cyc[k]:
            u = u % n
            f = np.floor(u)
            lo = np.int64(f)
            if lo >= n:
                lo = n - 1
            i0[k] = lo
            i1[k] = (lo + 1) % n
            frac[k] = u - f
        else:
            if u < -eps or u > n - 1 + eps:
                return np.nan
            if u < 0.0:
                u = 0.0
            if u > n - 1:
                u = n - 1.0
            lo = np.int64(np.floor(u))
            if lo >= n - 1:
                lo = n - 2
            i0[k] = lo
            i1[k] = lo + 1
            frac[k] = u - lo
    strides = np.empty(ndim, dtype=np.int64)
    s = 1
    for k in range(ndim - 1, -1, -1):
        strides[k] = s
        s *= shape[k]
    total = 0.0
    for corner in range(1 << ndim):
        w = 1.0
        idx = 0
        for k in range(ndim):
            if (corner >> k) & 1:
                w *= frac[k]
                idx += i1[k] * strides[k]
            else:
                w *= 1.0 - frac[k]
                idx += i0[k] * strides[k]
            if w == 0.0:
                break
        if w != 0.0:
            total += w * flat[idx]
    return total


@numba.njit(cache=True)
def _interp_many(flat, shape, mins, steps, cyc, ang, P, eps):
    out = np.empty(P.shape[0])
    for i in range(P.shape[0]):
        out[i] = _interp(flat, shape, mins, steps, cyc, ang, P[i], eps)
    return out


_EPS = 1e-9


def query_sdf_array(sdf: SdfGrid, p) -> float:
    """Interpolated value at a raw coordinate vector; ``nan`` when out of domain."""
    return _interp(sdf._flat, sdf._shape, sdf._mins, sdf._steps, sdf._cyc, sdf._ang,
                   np.asarray(p, dtype=np.float64), _EPS)


def query_sdf(sdf: SdfGrid, p: Pose6 | np.ndarray) -> float:
    """Multilinear interpolation over the enclosing hypervoxel's corners.

    Raises :class:`OutOfDomainError` for translations outside the grid box.
    """
    v = p.as_array() if isinstance(p, Pose6) else np.asarray(p, dtype=np.float64)
    out = query_sdf_array(sdf, v)
    if math.isnan(out):
        raise OutOfDomainError(f"pose {tuple(np.round(v, 6))} is outside the grid box")
    return out


def query_sdf_batch(sdf: SdfGrid, P: np.ndarray, out_of_domain: str = "raise") -> np.ndarray:
    P = np.ascontiguousarray(np.atleast_2d(P), dtype=np.float64)
    out = _interp_many(sdf._flat, sdf._shape, sdf._mins, sdf._steps, sdf._cyc, sdf._ang, P, _EPS)
    if out_of_domain == "raise" and np.isnan(out).any():
        i = int(np.flatnonzero(np.isnan(out))[0])
        raise OutOfDomainError(f"pose {tuple(np.round(P[i], 6))} is outside the grid box")
    return out


# ---------------------------------------------------------------------------
# classification quality


def sample_box_poses(spec: GridSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform poses over the lattice bounding box (full circle on cyclic axes)."""
    cols = []
    for a in spec.axes:
        if a.count == 1:
            cols.append(np.full(n, a.min))
        elif a.cyclic:
            cols.append(rng.uniform(a.min, a.min + TWO_PI, n))
        else:
            cols.append(rng.uniform(a.min, a.max, n))
    return np.stack(cols, axis=1)


def classification_scores(predicted: np.ndarray, truth: np.ndarray) -> dict:
    predicted = np.asarray(predicted, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    tp = int(np.sum(predicted & truth))
    fp = int(np.sum(predicted & ~truth))
    tn = int(np.sum(~predicted & ~truth))
    fn = int(np.sum(~predicted & truth))
    n = tp + fp + tn + fn
    return {
        "accuracy": (tp + tn) / n if n else math.nan,
        "precision": tp / (tp + fp) if tp + fp else math.nan,
        "recall": tp / (tp + fn) if tp + fn else math.nan,
        "tp": tp, "fp": fp, "tn": tn, "fn": fn,
    }


def evaluate_sdf_quality(
    sdf: SdfGrid,
    arm: ArmModel,
    scene: Scene,
    n: int,
    seed: int,
    ik_params: IKParams | None = None,
    truth: np.ndarray | None = None,
    poses: np.ndarray | None = None,
) -> dict:
    """Classify random poses by ``sign(sdf)`` and score against the IK oracle.

    A value of exactly zero counts as reachable. ``poses``/``truth`` may be
    supplied to reuse one labelled sample across several fields.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if poses is None:
        poses = sample_box_poses(sdf.spec, n, np.random.default_rng(seed))
    if truth is None:
        params = ik_params or IKParams()
        truth = collision_free_ik_batch(arm, poses, scene, params, seeds=pose_seeds(poses, seed))
    predicted = query_sdf_batch(sdf, poses) >= 0.0
    return classification_scores(predicted, truth)


# ---------------------------------------------------------------------------
# persistence


def save_sdf(sdf: SdfGrid, path: str | Path) -> None:
    body = pack_header(b"SDF6", sdf.spec, sdf.provenance)
    body += struct.pack("<ddd", sdf.metric.res_lin_cm, sdf.metric.res_rot, sdf.metric.ratio)
    body += sdf.values.astype("<f4").tobytes()
    Path(path).write_bytes(with_checksum(body))


def load_sdf(path: str | Path) -> SdfGrid:
    buf = Path(path).read_bytes()
    spec, prov, off = unpack_header(buf, b"SDF6")
    res_lin, res_rot, ratio = struct.unpack_from("<ddd", buf, off)
    off += 24
    payload = buf[off:len(buf) - 4]
    if len(payload) != 4 * spec.size:
        raise GridFormatError(f"payload has {len(payload)} bytes, expected {4 * spec.size}")
    values = np.frombuffer(payload, dtype="<f4").reshape(spec.shape)
    return SdfGrid(spec, MetricParams(res_lin, res_rot, ratio), values, prov)
