"""Rigid transforms and the Euler-angle convention used everywhere.

Rotations are built as ``Rz(alpha) @ Ry(beta) @ Rx(gamma)``. Every pose file,
calibration file and solver parameter follows this convention; ingesting
angles produced with a different ordering gives meaningless calibrations.
Angles are radians internally.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation, Slerp


class InvalidParameterError(ValueError):
    pass


def _wrap_angle(a: float) -> float:
    # canonical interval (-pi, pi]
    w = float(np.mod(a + np.pi, 2 * np.pi) - np.pi)
    return np.pi if w == -np.pi else w


@dataclass(frozen=True)
class Pose6:
    """Translation (mm) and Z-Y-X Euler angles (rad)."""

    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    alpha: float = 0.0
    beta: float = 0.0
    gamma: float = 0.0

    def __post_init__(self):
        vals = (self.x, self.y, self.z, self.alpha, self.beta, self.gamma)
        if not np.all(np.isfinite(vals)):
            raise InvalidParameterError(f"non-finite pose component in {vals}")
        for name in ("alpha", "beta", "gamma"):
            object.__setattr__(self, name, _wrap_angle(getattr(self, name)))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.alpha, self.beta, self.gamma])

    @classmethod
    def from_array(cls, a) -> "Pose6":
        return cls(*(float(v) for v in a))


def rot_x(g):
    c, s = np.cos(g), np.sin(g)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(b):
    c, s = np.cos(b), np.sin(b)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def euler_to_matrix(alpha, beta, gamma) -> np.ndarray:
    return rot_z(alpha) @ rot_y(beta) @ rot_x(gamma)


def euler_derivatives(alpha, beta, gamma):
    """Partial derivatives of ``Rz Ry Rx`` w.r.t. (alpha, beta, gamma)."""
    Rz, Ry, Rx = rot_z(alpha), rot_y(beta), rot_x(gamma)
    ca, sa = np.cos(alpha), np.sin(alpha)
    cb, sb = np.cos(beta), np.sin(beta)
    cg, sg = np.cos(gamma), np.sin(gamma)
    dRz = np.array([[-sa, -ca, 0.0], [ca, -sa, 0.0], [0.0, 0.0, 0.0]])
    dRy = np.array([[-sb, 0.0, cb], [0.0, 0.0, 0.0], [-cb, 0.0, -sb]])
    dRx = np.array([[0.0, 0.0, 0.0], [0.0, -sg, -cg], [0.0, cg, -sg]])
    return dRz @ Ry @ Rx, Rz @ dRy @ Rx, Rz @ Ry @ dRx


def matrix_to_euler(R: np.ndarray) -> tuple[float, float, float]:
    """Inverse of :func:`euler_to_matrix` (beta in [-pi/2, pi/2])."""
    beta = float(np.arcsin(np.clip(-R[2, 0], -1.0, 1.0)))
    if abs(np.cos(beta)) > 1e-9:
        alpha = float(np.arctan2(R[1, 0], R[0, 0]))
        gamma = float(np.arctan2(R[2, 1], R[2, 2]))
    else:
        # gimbal lock: only alpha - gamma (or alpha + gamma) is defined
        alpha = float(np.arctan2(-R[0, 1], R[1, 1]))
        gamma = 0.0
    return alpha, beta, gamma


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """4x4 homogeneous roto-translation, translation in mm."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.shape != (4, 4):
            raise InvalidParameterError(f"expected 4x4 matrix, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise InvalidParameterError("non-finite transform entries")
        m[3] = (0.0, 0.0, 0.0, 1.0)
        R = m[:3, :3]
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-6 or np.linalg.det(R) < 0:
            raise InvalidParameterError("rotation block is not a proper rotation")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def rotation(self) -> np.ndarray:
        return self.matrix[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.matrix[:3, 3]

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(4))

    @classmethod
    def from_rt(cls, R, t) -> "RigidTransform":
        m = np.eye(4)
        m[:3, :3] = R
        m[:3, 3] = t
        return cls(m)

    def to_pose(self) -> Pose6:
        a, b, g = matrix_to_euler(self.rotation)
        return Pose6(*self.translation, a, b, g)

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return compose(self, other)

    def __repr__(self):
        return f"RigidTransform({self.to_pose()})"


def make_transform(p: Pose6) -> RigidTransform:
    return RigidTransform.from_rt(euler_to_matrix(p.alpha, p.beta, p.gamma), (p.x, p.y, p.z))


def translate(x, y, z) -> RigidTransform:
    return RigidTransform.from_rt(np.eye(3), (x, y, z))


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    return RigidTransform(a.matrix @ b.matrix)


def invert(t: RigidTransform) -> RigidTransform:
    Rt = t.rotation.T
    return RigidTransform.from_rt(Rt, -Rt @ t.translation)


def apply(t: RigidTransform, pts) -> np.ndarray:
    """Map a point (3,) or a batch of points (n, 3)."""
    p = np.asarray(pts, dtype=float)
    return p @ t.rotation.T + t.translation


def interpolate_poses(times, transforms, query_times, mode: str = "slerp"):
    """Resample a pose stream at ``query_times``.

    ``mode="slerp"`` interpolates rotations spherically and translations
    linearly; ``mode="nearest"`` picks the closest sample. Queries outside
    the sampled span are clamped to the end poses.
    """
    times = np.asarray(times, dtype=float)
    q = np.clip(np.asarray(query_times, dtype=float), times[0], times[-1])
    mats = np.stack([t.matrix for t in transforms])
    if mode == "nearest":
        idx = np.searchsorted(times, q)
        idx = np.clip(idx, 1, len(times) - 1)
        left_closer = (q - times[idx - 1]) <= (times[idx] - q)
        idx = np.where(left_closer, idx - 1, idx)
        return [transforms[i] for i in idx]
    if mode != "slerp":
        raise InvalidParameterError(f"unknown interpolation mode {mode!r}")
    slerp = Slerp(times, Rotation.from_matrix(mats[:, :3, :3]))
    R = slerp(q).as_matrix()
    t = np.stack([np.interp(q, times, mats[:, i, 3]) for i in range(3)], axis=1)
    return [RigidTransform.from_rt(R[i], t[i]) for i in range(len(q))]
