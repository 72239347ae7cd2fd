"""Pose algebra: 6D poses, roll-pitch-yaw rotations and rigid transforms.

Rotations use the fixed-axis roll-pitch-yaw convention
``R = Rz(yaw) @ Ry(pitch) @ Rx(roll)``, so roll turns the hand about its own
x (approach) axis. Batched helpers operate on ``(N, 6)`` pose arrays and
``(N, 3, 3)`` rotation stacks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.spatial.transform import Rotation

TWO_PI = 2.0 * math.pi


def wrap_angle(a):
    """Wrap angle(s) into the half-open interval [-pi, pi)."""
    if isinstance(a, np.ndarray):
        w = np.mod(a + math.pi, TWO_PI) - math.pi
        # mod can round up to exactly 2*pi for tiny negative inputs
        return np.where(w >= math.pi, w - TWO_PI, w)
    w = math.fmod(a + math.pi, TWO_PI)
    if w < 0.0:
        w += TWO_PI
    w -= math.pi
    if w >= math.pi:
        w -= TWO_PI
    return w


def rpy_to_matrix(roll: float, pitch: float, yaw: float) -> np.ndarray:
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    return np.array([
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
        [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
        [-sp, cp * sr, cp * cr],
    ])


def rpy_to_matrix_batch(rpy: np.ndarray) -> np.ndarray:
    """``(N, 3)`` roll/pitch/yaw -> ``(N, 3, 3)`` rotation matrices."""
    rpy = np.asarray(rpy, dtype=float)
    cr, sr = np.cos(rpy[:, 0]), np.sin(rpy[:, 0])
    cp, sp = np.cos(rpy[:, 1]), np.sin(rpy[:, 1])
    cy, sy = np.cos(rpy[:, 2]), np.sin(rpy[:, 2])
    R = np.empty((rpy.shape[0], 3, 3))
    R[:, 0, 0] = cy * cp
    R[:, 0, 1] = cy * sp * sr - sy * cr
    R[:, 0, 2] = cy * sp * cr + sy * sr
    R[:, 1, 0] = sy * cp
    R[:, 1, 1] = sy * sp * sr + cy * cr
    R[:, 1, 2] = sy * sp * cr - cy * sr
    R[:, 2, 0] = -sp
    R[:, 2, 1] = cp * sr
    R[:, 2, 2] = cp * cr
    return R


def matrix_to_rpy(R: np.ndarray) -> tuple[float, float, float]:
    """Inverse of :func:`rpy_to_matrix`; pitch is returned in [-pi/2, pi/2]."""
    sp = -R[2, 0]
    sp = min(1.0, max(-1.0, sp))
    pitch = math.asin(sp)
    if abs(sp) < 1.0 - 1e-12:
        roll = math.atan2(R[2, 1], R[2, 2])
        yaw = math.atan2(R[1, 0], R[0, 0])
    else:
        # gimbal lock: only roll -/+ yaw is observable, put it all on yaw
        roll = 0.0
        yaw = math.atan2(-R[0, 1], R[1, 1])
    return wrap_angle(roll), pitch, wrap_angle(yaw)


def rotation_angle(R: np.ndarray) -> np.ndarray | float:
    """Geodesic angle of rotation matrix/matrices, in [0, pi]."""
    R = np.asarray(R)
    if R.ndim == 2:
        return float(np.linalg.norm(Rotation.from_matrix(R).as_rotvec()))
    return np.linalg.norm(Rotation.from_matrix(R).as_rotvec(), axis=-1)


def rotation_log(R: np.ndarray) -> np.ndarray:
    """Rotation vector(s) of ``R`` (``(3, 3)`` or ``(N, 3, 3)``)."""
    return Rotation.from_matrix(R).as_rotvec()


def axis_angle_batch(axis: np.ndarray, angle: np.ndarray) -> np.ndarray:
    """Rodrigues rotation about a fixed unit ``axis`` for each angle in ``(N,)``."""
    x, y, z = axis
    c, s = np.cos(angle), np.sin(angle)
    C = 1.0 - c
    R = np.empty(angle.shape + (3, 3))
    R[..., 0, 0] = c + x * x * C
    R[..., 0, 1] = x * y * C - z * s
    R[..., 0, 2] = x * z * C + y * s
    R[..., 1, 0] = y * x * C + z * s
    R[..., 1, 1] = c + y * y * C
    R[..., 1, 2] = y * z * C - x * s
    R[..., 2, 0] = z * x * C - y * s
    R[..., 2, 1] = z * y * C + x * s
    R[..., 2, 2] = c + z * z * C
    return R


@dataclass(frozen=True)
class Pose6:
    """Hand pose: translation in meters and roll/pitch/yaw in radians.

    Angles are normalized to [-pi, pi) on construction.
    """

    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    roll: float = 0.0
    pitch: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        for name in ("x", "y", "z"):
            object.__setattr__(self, name, float(getattr(self, name)))
        for name in ("roll", "pitch", "yaw"):
            object.__setattr__(self, name, wrap_angle(float(getattr(self, name))))

    @classmethod
    def from_array(cls, v: Sequence[float]) -> "Pose6":
        if len(v) != 6:
            raise ValueError(f"pose needs 6 values, got {len(v)}")
        return cls(*(float(c) for c in v))

    @classmethod
    def from_matrix(cls, T: np.ndarray) -> "Pose6":
        roll, pitch, yaw = matrix_to_rpy(T[:3, :3])
        return cls(T[0, 3], T[1, 3], T[2, 3], roll, pitch, yaw)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.roll, self.pitch, self.yaw])

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    def rotation(self) -> np.ndarray:
        return rpy_to_matrix(self.roll, self.pitch, self.yaw)

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation()
        T[:3, 3] = self.position
        return T

    def compose(self, other: "Pose6") -> "Pose6":
        """Pose of ``other`` expressed in this pose's frame, mapped to the parent."""
        return Pose6.from_matrix(self.matrix() @ other.matrix())

    def inverse(self) -> "Pose6":
        R = self.rotation()
        T = np.eye(4)
        T[:3, :3] = R.T
        T[:3, 3] = -R.T @ self.position
        return Pose6.from_matrix(T)


IDENTITY = Pose6()


def poses_to_rt(poses: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``(N, 6)`` poses -> rotations ``(N, 3, 3)`` and positions ``(N, 3)``."""
    poses = np.atleast_2d(np.asarray(poses, dtype=float))
    return rpy_to_matrix_batch(poses[:, 3:6]), poses[:, :3].copy()


def transform_points(pose: Pose6, pts: np.ndarray) -> np.ndarray:
    """Map ``(..., 3)`` points from the pose's frame to its parent frame."""
    return np.asarray(pts) @ pose.rotation().T + pose.position
