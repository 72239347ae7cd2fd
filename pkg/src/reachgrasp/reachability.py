"""Workspace discretization and the binary reachability map.

A grid is a product of per-axis lattices ``min + i * step``. Angular axes that
span the full circle are cyclic and exclude the max endpoint (it aliases the
min). Labels are stored row-major with the first axis slowest.

Binary layout of an ``RGRD`` file (all little-endian)::

    magic   4s   b"RGRD"
    version u32
    naxes   u32
    naxes * (min f64, step f64, count u32, flags u8)  flags: bit0 cyclic, bit1 angular
    provenance: u32 byte length + UTF-8 JSON
    payload: labels bit-packed MSB-first, row-major, zero padded to a byte
    crc32   u32 over every preceding byte
"""
from __future__ import annotations

import json
import logging
import math
import struct
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import TWO_PI
from .kinematics import ArmModel, IKParams, collision_free_ik_batch
from .shapes import Scene

log = logging.getLogger(__name__)

AXIS_NAMES = ("x", "y", "z", "roll", "pitch", "yaw")
FORMAT_VERSION = 1


class GridFormatError(ValueError):
    """Bad magic, unsupported version or malformed grid file."""


class ChecksumError(GridFormatError):
    """Stored checksum does not match the file contents (truncation/corruption)."""


@dataclass(frozen=True)
class Axis:
    name: str
    min: float
    step: float
    count: int
    cyclic: bool = False
    angular: bool = False

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError(f"axis {self.name}: step must be positive")
        if self.count < 1:
            raise ValueError(f"axis {self.name}: needs at least one cell")
        if self.cyclic:
            if not self.angular:
                raise ValueError(f"axis {self.name}: only angular axes can be cyclic")
            if abs(self.count * self.step - TWO_PI) > 1e-9:
                raise ValueError(f"axis {self.name}: cyclic axis must cover 2*pi exactly")

    @classmethod
    def from_range(cls, name: str, lo: float, hi: float, step: float, cyclic: bool = False,
                   angular: bool | None = None, endpoint: bool = True) -> "Axis":
        """Lattice over ``[lo, hi]`` (``[lo, hi)`` when ``endpoint`` is false or cyclic)."""
        if angular is None:
            angular = name in AXIS_NAMES[3:]
        if not step > 0:
            raise ValueError(f"axis {name}: step must be positive")
        if hi < lo:
            raise ValueError(f"axis {name}: min {lo} > max {hi}")
        if cyclic:
            if abs((hi - lo) - TWO_PI) > 1e-9:
                raise ValueError(f"axis {name}: cyclic axis needs max - min = 2*pi")
            count = int(round((hi - lo) / step))
            return cls(name, float(lo), TWO_PI / count if abs(count * step - TWO_PI) < 1e-9 else step,
                       count, True, True)
        span = (hi - lo) / step
        if endpoint or hi == lo:
            count = int(math.floor(span + 1e-9)) + 1
        else:
            count = max(1, int(math.ceil(span - 1e-9)))
        return cls(name, float(lo), float(step), count, False, bool(angular))

    @property
    def max(self) -> float:
        """Upper edge: ``min + 2*pi`` for cyclic axes, else the last lattice point."""
        if self.cyclic:
            return self.min + self.count * self.step
        return self.min + (self.count - 1) * self.step

    def lattice(self) -> np.ndarray:
        # rounding keeps lattice values identical between grids that share points
        return np.round(self.min + self.step * np.arange(self.count), 12)

    @property
    def flags(self) -> int:
        return int(self.cyclic) | (int(self.angular) << 1)


@dataclass(frozen=True)
class GridSpec:
    """Per-axis lattices. Six axes ``x y z roll pitch yaw`` for pose grids."""

    axes: tuple[Axis, ...]

    def __post_init__(self):
        object.__setattr__(self, "axes", tuple(self.axes))

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(a.count for a in self.axes)

    @property
    def ndim(self) -> int:
        return len(self.axes)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))

    @property
    def mins(self) -> np.ndarray:
        return np.array([a.min for a in self.axes])

    @property
    def steps(self) -> np.ndarray:
        return np.array([a.step for a in self.axes])

    @property
    def cyclic(self) -> np.ndarray:
        return np.array([a.cyclic for a in self.axes])

    @property
    def angular(self) -> np.ndarray:
        return np.array([a.angular for a in self.axes])

    def to_dict(self) -> dict:
        return {"axes": [asdict(a) for a in self.axes]}

    def lattice_points(self, flat_index: np.ndarray) -> np.ndarray:
        idx = np.unravel_index(np.asarray(flat_index), self.shape)
        return np.stack([a.lattice()[i] for a, i in zip(self.axes, idx)], axis=-1)

    def subgrid_offset(self, other: "GridSpec") -> tuple[int, ...] | None:
        """Index offset of ``other`` inside self when it is an aligned sub-block."""
        off = []
        for a, b in zip(self.axes, other.axes):
            k = (b.min - a.min) / a.step
            if abs(b.step - a.step) > 1e-12 or abs(k - round(k)) > 1e-9:
                return None
            k = int(round(k))
            if k < 0 or k + b.count > a.count:
                return None
            off.append(k)
        return tuple(off)


def GridSpec6(**axes: Axis) -> GridSpec:
    """Six-axis pose grid from keyword axes ``x=..., ..., yaw=...``."""
    missing = [n for n in AXIS_NAMES if n not in axes]
    if missing:
        raise ValueError(f"missing axes: {missing}")
    return GridSpec(tuple(axes[n] for n in AXIS_NAMES))


def table_i_spec() -> GridSpec:
    """The mobile-manipulator workspace discretization (meters / radians).

    Every axis is half-open ``[min, max)``: with inclusive linear axes the
    lattice would hold 803,712 poses instead of the documented 675,840.
    """
    pi = math.pi
    return GridSpec6(
        x=Axis.from_range("x", 0.0, 1.2, 0.1, endpoint=False),
        y=Axis.from_range("y", -1.1, 1.1, 0.1, endpoint=False),
        z=Axis.from_range("z", 0.0, 2.0, 0.1, endpoint=False),
        roll=Axis.from_range("roll", -pi, pi, pi, cyclic=True),
        pitch=Axis.from_range("pitch", -pi, pi, pi / 4, cyclic=True),
        yaw=Axis.from_range("yaw", -pi, pi, pi / 4, cyclic=True),
    )


def spec_from_dict(d: dict) -> GridSpec:
    from .config import ConfigError, num

    axes = []
    for name in AXIS_NAMES:
        if name not in d:
            raise ConfigError(f"grid config missing axis {name!r}")
        ad = d[name]
        try:
            axes.append(Axis.from_range(
                name, num(ad["min"]), num(ad["max"]), num(ad["step"]),
                cyclic=bool(ad.get("cyclic", False)), endpoint=bool(ad.get("endpoint", True)),
            ))
        except KeyError as exc:
            raise ConfigError(f"grid axis {name}: missing {exc}") from exc
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    return GridSpec(tuple(axes))


def uniform_sample_workspace(spec: GridSpec) -> np.ndarray:
    """Lattice point of every cell, row-major, as an ``(n_cells, ndim)`` array."""
    grids = np.meshgrid(*[a.lattice() for a in spec.axes], indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=-1)


@dataclass(frozen=True)
class ReachabilityGrid:
    spec: GridSpec
    labels: np.ndarray  # bool, shape == spec.shape
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=bool)
        if labels.size != self.spec.size:
            raise ValueError(f"label count {labels.size} != cell count {self.spec.size}")
        labels = labels.reshape(self.spec.shape)
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @property
    def reachable_count(self) -> int:
        return int(self.labels.sum())

    def with_labels(self, labels: np.ndarray, **extra) -> "ReachabilityGrid":
        prov = dict(self.provenance)
        prov.update(extra)
        return ReachabilityGrid(self.spec, labels, prov)

    def __eq__(self, other):
        if not isinstance(other, ReachabilityGrid):
            return NotImplemented
        return (self.spec == other.spec and np.array_equal(self.labels, other.labels)
                and self.provenance == other.provenance)

    __hash__ = None


def _label_block(args):
    arm, poses, scene, params = args
    return collision_free_ik_batch(arm, poses, scene, params)


def generate_reachability(
    arm: ArmModel,
    spec: GridSpec,
    scene: Scene,
    params: IKParams,
    chunk: int = 20000,
    workers: int = 1,
) -> ReachabilityGrid:
    """Label every lattice pose with the collision-free IK oracle.

    Seeds derive from the pose value and ``params.seed`` only, so labels do not
    depend on chunking, worker count or evaluation order.
    """
    poses = uniform_sample_workspace(spec)
    blocks = [(arm, poses[i:i + chunk], scene, params) for i in range(0, len(poses), chunk)]
    if workers > 1 and len(blocks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_label_block, blocks))
    else:
        parts = []
        for i, b in enumerate(blocks):
            parts.append(_label_block(b))
            log.debug("labelled block %d/%d", i + 1, len(blocks))
    labels = np.concatenate(parts) if parts else np.zeros(0, dtype=bool)
    prov = {
        "arm": arm.name,
        "arm_hash": arm.digest(),
        "scene_hash": scene.digest(),
        "oracle": {k: (repr(v) if isinstance(v, float) else v) for k, v in asdict(params).items()},
    }
    return ReachabilityGrid(spec, labels, prov)


# ---------------------------------------------------------------------------
# binary I/O shared with the SDF format


def pack_header(magic: bytes, spec: GridSpec, provenance: dict) -> bytes:
    out = [struct.pack("<4sII", magic, FORMAT_VERSION, spec.ndim)]
    for a in spec.axes:
        out.append(struct.pack("<ddIB", a.min, a.step, a.count, a.flags))
    prov = json.dumps(provenance, sort_keys=True, separators=(",", ":")).encode("utf-8")
    out.append(struct.pack("<I", len(prov)))
    out.append(prov)
    return b"".join(out)


def _names_for(n: int) -> Sequence[str]:
    return AXIS_NAMES if n == len(AXIS_NAMES) else [f"a{i}" for i in range(n)]


def unpack_header(buf: bytes, magic: bytes) -> tuple[GridSpec, dict, int]:
    """Parse a header; returns ``(spec, provenance, payload offset)``."""
    if len(buf) < 16:
        raise ChecksumError("file too short")
    body, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    if zlib.crc32(body) != crc:
        raise ChecksumError("checksum mismatch (truncated or corrupted file)")
    m, version, naxes = struct.unpack_from("<4sII", buf, 0)
    if m != magic:
        raise GridFormatError(f"bad magic {m!r}, expected {magic!r}")
    if version != FORMAT_VERSION:
        raise GridFormatError(f"unsupported format version {version}")
    off = 12
    axes = []
    for name in _names_for(naxes):
        lo, step, count, flags = struct.unpack_from("<ddIB", buf, off)
        off += struct.calcsize("<ddIB")
        axes.append(Axis(name, lo, step, count, bool(flags & 1), bool(flags & 2)))
    (plen,) = struct.unpack_from("<I", buf, off)
    off += 4
    provenance = json.loads(buf[off:off + plen].decode("utf-8"))
    off += plen
    return GridSpec(tuple(axes)), provenance, off


def with_checksum(body: bytes) -> bytes:
    return body + struct.pack("<I", zlib.crc32(body))


def save_grid(grid: ReachabilityGrid, path: str | Path) -> None:
    body = pack_header(b"RGRD", grid.spec, grid.provenance)
    body += np.packbits(grid.labels.ravel()).tobytes()
    Path(path).write_bytes(with_checksum(body))


def load_grid(path: str | Path) -> ReachabilityGrid:
    buf = Path(path).read_bytes()
    spec, prov, off = unpack_header(buf, b"RGRD")
    nbytes = (spec.size + 7) // 8
    payload = buf[off:len(buf) - 4]
    if len(payload) != nbytes:
        raise GridFormatError(f"payload has {len(payload)} bytes, expected {nbytes}")
    labels = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), count=spec.size).astype(bool)
    return ReachabilityGrid(spec, labels, prov)
