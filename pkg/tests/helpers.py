"""Shared generators for tests."""
import numpy as np

from spdh.geometry import PinholeIntrinsics, pixel_to_point
from spdh.joints import JointSet3D


def frustum_joints(rng: np.random.Generator, K: PinholeIntrinsics, n: int, z_lo: float = 515.0,
                   z_hi: float = 3365.0) -> JointSet3D:
    """Joints uniform over image coordinates and depth, all projecting onto the pixel grid."""
    u = rng.uniform(-0.5, K.width - 0.5, n)
    v = rng.uniform(-0.5, K.height - 0.5, n)
    z = rng.uniform(z_lo, z_hi, n)
    return JointSet3D(pixel_to_point(u, v, z, K))


def perturb(joints: JointSet3D, rng: np.random.Generator, scale_mm: float) -> JointSet3D:
    return joints.with_positions(joints.positions + rng.normal(0.0, scale_mm, joints.positions.shape))


# (number, title, passed, detail) rows filled in by the acceptance tests
ACCEPTANCE_LOG: list[tuple[int, str, bool, str]] = []
