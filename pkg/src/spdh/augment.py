"""3D augmentation: depth -> point cloud -> random rigid motion -> depth.

The same rigid transform moves the cloud and the joint labels, so targets
re-encoded from the moved joints stay consistent with the re-rendered depth.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import DEFAULT_MAX_RANGE, DepthImage, PinholeIntrinsics, backproject
from .joints import JointSet3D
from .robot import make_transform

_AXES = {"x": 0, "y": 1, "z": 2}


@dataclass(frozen=True)
class AugmentSpec:
    rot_range_deg: tuple[float, float] = (-5.0, 5.0)
    trans_range_mm: tuple[float, float] = (-80.0, 80.0)
    rot_axes: tuple[str, ...] = ("x", "y")
    trans_axes: tuple[str, ...] = ("x", "z")
    pivot: str = "origin"  # or "centroid"
    seed: int = 0

    def __post_init__(self):
        for name, (lo, hi) in (("rotation", self.rot_range_deg), ("translation", self.trans_range_mm)):
            if lo > hi:
                raise ValueError(f"{name} range [{lo}, {hi}] is reversed")
        for a in (*self.rot_axes, *self.trans_axes):
            if a not in _AXES:
                raise ValueError(f"unknown axis {a!r}")
        if not self.rot_axes or not self.trans_axes:
            raise ValueError("need at least one rotation and one translation axis")
        if self.pivot not in ("origin", "centroid"):
            raise ValueError(f"unknown pivot {self.pivot!r}")

    def to_dict(self) -> dict:
        return {"rot_range_deg": list(self.rot_range_deg), "trans_range_mm": list(self.trans_range_mm),
                "rot_axes": list(self.rot_axes), "trans_axes": list(self.trans_axes),
                "pivot": self.pivot, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentSpec":
        return cls(tuple(d.get("rot_range_deg", (-5.0, 5.0))), tuple(d.get("trans_range_mm", (-80.0, 80.0))),
                   tuple(d.get("rot_axes", ("x", "y"))), tuple(d.get("trans_axes", ("x", "z"))),
                   d.get("pivot", "origin"), int(d.get("seed", 0)))


@dataclass(frozen=True)
class RigidSample:
    rot_axis: str
    angle_deg: float
    trans_axis: str
    offset_mm: float

    def matrix(self, pivot=None) -> np.ndarray:
        axis = np.zeros(3)
        axis[_AXES[self.rot_axis]] = 1.0
        t = np.zeros(3)
        t[_AXES[self.trans_axis]] = self.offset_mm
        R = axis_angle_matrix(axis, np.deg2rad(self.angle_deg))
        T = make_transform(R, t)
        if pivot is not None:
            c = np.asarray(pivot, float)
            T = make_transform(None, c) @ make_transform(R) @ make_transform(None, -c)
            T[:3, 3] += t
        return T


def axis_angle_matrix(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation about a unit axis."""
    k = np.asarray(axis, float)
    Kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(angle) * Kx + (1 - np.cos(angle)) * Kx @ Kx


def frame_rng(spec: AugmentSpec, frame_id: int) -> np.random.Generator:
    """Per-frame generator (``seed + frame_id``) so parallel runs reproduce."""
    return np.random.default_rng(spec.seed + int(frame_id))


def sample_transform(spec: AugmentSpec, rng: np.random.Generator) -> RigidSample:
    """One rotation about a randomly chosen axis and one translation along a
    randomly chosen axis, magnitudes uniform in the configured ranges."""
    rot_axis = spec.rot_axes[int(rng.integers(len(spec.rot_axes)))]
    angle = float(rng.uniform(*spec.rot_range_deg))
    trans_axis = spec.trans_axes[int(rng.integers(len(spec.trans_axes)))]
    offset = float(rng.uniform(*spec.trans_range_mm))
    return RigidSample(rot_axis, angle, trans_axis, offset)


def depth_to_pointcloud(depth: DepthImage, K: PinholeIntrinsics) -> np.ndarray:
    """``(N, 3)`` points of the valid pixels, row-major order."""
    xyz = backproject(depth, K)
    return xyz.data[xyz.mask]


def check_rigid(T: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    T = np.asarray(T, dtype=np.float64)
    if T.shape != (4, 4):
        raise ValueError(f"expected a 4x4 transform, got {T.shape}")
    R = T[:3, :3]
    if not np.allclose(R.T @ R, np.eye(3), atol=tol) or abs(np.linalg.det(R) - 1.0) > tol:
        raise ValueError("transform is not rigid (rotation must be orthonormal with det +1)")
    if not np.allclose(T[3], [0, 0, 0, 1]):
        raise ValueError("transform has a non-affine last row")
    return T


def apply_rigid(cloud: np.ndarray, joints: JointSet3D, transform: np.ndarray):
    T = check_rigid(transform)
    R, t = T[:3, :3], T[:3, 3]
    pts = np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    return pts @ R.T + t, joints.with_positions(joints.positions @ R.T + t)


def pointcloud_to_depth(cloud: np.ndarray, K: PinholeIntrinsics, shape=None,
                        max_range: float = DEFAULT_MAX_RANGE) -> DepthImage:
    """Z-buffer the cloud into a depth image (nearest Z wins, holes stay 0)."""
    h, w = K.shape if shape is None else (int(shape[0]), int(shape[1]))
    depth = np.full(h * w, np.inf)
    pts = np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    pts = pts[(pts[:, 2] > 0) & (pts[:, 2] <= max_range)]
    if len(pts):
        u = np.rint(K.fx * pts[:, 0] / pts[:, 2] + K.cx).astype(np.int64)
        v = np.rint(K.fy * pts[:, 1] / pts[:, 2] + K.cy).astype(np.int64)
        inside = (u >= 0) & (u < w) & (v >= 0) & (v < h)
        np.minimum.at(depth, v[inside] * w + u[inside], pts[inside, 2])
    depth[np.isinf(depth)] = 0.0
    return DepthImage(depth.reshape(h, w), max_range)


def augment_frame(depth: DepthImage, joints: JointSet3D, K: PinholeIntrinsics, spec: AugmentSpec,
                  frame_id: int = 0):
    """Returns ``(depth', joints', 4x4 transform)`` for one training frame."""
    sample = sample_transform(spec, frame_rng(spec, frame_id))
    cloud = depth_to_pointcloud(depth, K)
    pivot = cloud.mean(axis=0) if spec.pivot == "centroid" and len(cloud) else None
    T = sample.matrix(pivot)
    moved, moved_joints = apply_rigid(cloud, joints, T)
    return pointcloud_to_depth(moved, K, depth.data.shape, depth.max_range), moved_joints, T
