"""Revolute serial/tree chains and forward kinematics.

Chain files are JSON::

    {"joints": [{"name", "parent", "xyz_mm": [x, y, z], "axis": [x, y, z],
                 "radius_mm", "limits_rad": [lo, hi]}, ...],
     "base": {"rotation_rpy_rad": [r, p, y], "translation_mm": [x, y, z]}}

``parent`` is ``-1`` (or null) for the root. ``xyz_mm`` is the joint origin in
its parent's frame, the joint then rotates about ``axis`` (its own frame).
``base`` is the camera <- base transform; ``rpy`` is extrinsic x-y-z.
An optional ``"type": "fixed"`` marks a joint without a degree of freedom.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .joints import JointSet3D

BUNDLED_CHAIN = "baxter_like_16.json"


class ChainError(ValueError):
    pass


@dataclass(frozen=True)
class ChainJoint:
    name: str
    parent: int
    xyz_mm: tuple[float, float, float]
    axis: tuple[float, float, float]
    radius_mm: float
    limits_rad: tuple[float, float] = (-np.pi, np.pi)
    kind: str = "revolute"


@dataclass(frozen=True)
class RobotChain:
    joints: tuple[ChainJoint, ...]
    base: np.ndarray  # 4x4 camera <- base
    # literal rpy from the chain file, so that saving reproduces it exactly
    base_rpy: tuple[float, float, float] | None = field(default=None, compare=False)

    def __post_init__(self):
        base = np.array(self.base, dtype=np.float64)
        base.flags.writeable = False
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "joints", tuple(self.joints))
        validate_chain(self)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(j.name for j in self.joints)

    @property
    def parents(self) -> np.ndarray:
        return np.array([j.parent for j in self.joints], dtype=np.intp)

    @property
    def revolute(self) -> np.ndarray:
        return np.array([j.kind == "revolute" for j in self.joints])

    @property
    def num_dof(self) -> int:
        return int(self.revolute.sum())

    @property
    def limits(self) -> np.ndarray:
        """``(num_dof, 2)`` angle limits of the revolute joints."""
        return np.array([j.limits_rad for j in self.joints if j.kind == "revolute"], dtype=np.float64).reshape(-1, 2)

    def with_base(self, base: np.ndarray) -> "RobotChain":
        return replace(self, base=base, base_rpy=None)

    def __eq__(self, other):
        if not isinstance(other, RobotChain):
            return NotImplemented
        return self.joints == other.joints and np.array_equal(self.base, other.base)

    __hash__ = None


def validate_chain(chain: RobotChain) -> None:
    if len(chain.joints) == 0:
        raise ChainError("chain has no joints")
    if chain.base.shape != (4, 4):
        raise ChainError(f"base must be a 4x4 transform, got {chain.base.shape}")
    R = chain.base[:3, :3]
    if not np.allclose(R @ R.T, np.eye(3), atol=1e-9) or np.linalg.det(R) < 0:
        raise ChainError("base rotation is not a proper rotation")
    names = set()
    for i, j in enumerate(chain.joints):
        if j.name in names:
            raise ChainError(f"duplicate joint name {j.name!r}")
        names.add(j.name)
        if i == 0 and j.parent != -1:
            raise ChainError("joint 0 must be the base (parent -1)")
        if i > 0 and not (0 <= j.parent < i):
            raise ChainError(f"joint {i} ({j.name}): parent {j.parent} breaks topological order")
        if j.kind == "prismatic":
            raise ChainError(f"joint {j.name}: prismatic joints are not supported, only revolute")
        if j.kind not in ("revolute", "fixed"):
            raise ChainError(f"joint {j.name}: unknown type {j.kind!r}")
        if j.kind == "revolute" and abs(np.linalg.norm(j.axis) - 1.0) > 1e-9:
            raise ChainError(f"joint {j.name}: axis {j.axis} is not unit length")
        if j.radius_mm < 0:
            raise ChainError(f"joint {j.name}: negative radius")
        lo, hi = j.limits_rad
        if not lo <= hi:
            raise ChainError(f"joint {j.name}: limits {j.limits_rad} are reversed")


def rpy_to_matrix(rpy: Sequence[float]) -> np.ndarray:
    return Rotation.from_euler("xyz", rpy).as_matrix()


def make_transform(rotation: np.ndarray | None = None, translation=(0.0, 0.0, 0.0)) -> np.ndarray:
    T = np.eye(4)
    if rotation is not None:
        T[:3, :3] = rotation
    T[:3, 3] = translation
    return T


def chain_from_dict(d: dict) -> RobotChain:
    try:
        joints = []
        for i, jd in enumerate(d["joints"]):
            parent = jd.get("parent")
            joints.append(ChainJoint(
                name=str(jd["name"]),
                parent=-1 if parent is None else int(parent),
                xyz_mm=tuple(float(x) for x in jd["xyz_mm"]),
                axis=tuple(float(x) for x in jd.get("axis", (0.0, 0.0, 0.0))),
                radius_mm=float(jd.get("radius_mm", 0.0)),
                limits_rad=tuple(float(x) for x in jd.get("limits_rad", (-np.pi, np.pi))),
                kind=str(jd.get("type", "revolute")),
            ))
        base = d.get("base", {})
        T = make_transform(rpy_to_matrix(base.get("rotation_rpy_rad", (0.0, 0.0, 0.0))),
                           base.get("translation_mm", (0.0, 0.0, 0.0)))
        rpy = tuple(float(x) for x in base.get("rotation_rpy_rad", (0.0, 0.0, 0.0)))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ChainError):
            raise
        raise ChainError(f"malformed chain description: {exc!r}") from exc
    return RobotChain(tuple(joints), T, rpy)


def chain_to_dict(chain: RobotChain) -> dict:
    rpy = chain.base_rpy
    if rpy is None or not np.allclose(rpy_to_matrix(rpy), chain.base[:3, :3], atol=1e-12):
        rpy = tuple(float(x) for x in Rotation.from_matrix(chain.base[:3, :3]).as_euler("xyz"))
    joints = []
    for j in chain.joints:
        jd = {
            "name": j.name,
            "parent": j.parent,
            "xyz_mm": list(j.xyz_mm),
            "axis": list(j.axis),
            "radius_mm": j.radius_mm,
            "limits_rad": list(j.limits_rad),
        }
        if j.kind != "revolute":
            jd["type"] = j.kind
        joints.append(jd)
    return {"joints": joints,
            "base": {"rotation_rpy_rad": list(rpy), "translation_mm": [float(x) for x in chain.base[:3, 3]]}}


def load_chain(path=None) -> RobotChain:
    """Load a chain file; ``None`` loads the bundled 16-joint dual-arm chain."""
    if path is None:
        text = resources.files("spdh.data").joinpath(BUNDLED_CHAIN).read_text()
        origin = BUNDLED_CHAIN
    else:
        text = Path(path).read_text()
        origin = str(path)
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ChainError(f"{origin}: not valid JSON ({exc})") from exc
    return chain_from_dict(d)


def save_chain(chain: RobotChain, path) -> None:
    Path(path).write_text(json.dumps(chain_to_dict(chain), indent=2) + "\n")


def joint_frames(chain: RobotChain, q: Sequence[float], check_limits: bool = True) -> np.ndarray:
    """World (camera) transforms ``(n, 4, 4)`` of every joint frame."""
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    if q.size != chain.num_dof:
        raise ValueError(f"expected {chain.num_dof} joint angles, got {q.size}")
    if not np.all(np.isfinite(q)):
        raise ValueError("joint angles must be finite")
    if check_limits and q.size:
        lim = chain.limits
        bad = (q < lim[:, 0] - 1e-12) | (q > lim[:, 1] + 1e-12)
        if np.any(bad):
            dof_names = [j.name for j in chain.joints if j.kind == "revolute"]
            i = int(np.argmax(bad))
            raise ValueError(f"angle {q[i]:.4f} rad for joint {dof_names[i]} outside limits {tuple(lim[i])}")
    angles = np.zeros(len(chain.joints))
    angles[chain.revolute] = q
    axes = np.array([j.axis for j in chain.joints], dtype=np.float64)
    rots = Rotation.from_rotvec(axes * angles[:, None]).as_matrix()
    frames = np.empty((len(chain.joints), 4, 4))
    for i, j in enumerate(chain.joints):
        local = make_transform(rots[i], j.xyz_mm)
        frames[i] = (chain.base if j.parent < 0 else frames[j.parent]) @ local
    return frames


def forward_kinematics(chain: RobotChain, q: Sequence[float], check_limits: bool = True) -> JointSet3D:
    frames = joint_frames(chain, q, check_limits)
    return JointSet3D(frames[:, :3, 3], None, chain.names)


def link_segments(chain: RobotChain, positions: np.ndarray) -> list[tuple[np.ndarray, np.ndarray, float]]:
    """Capsules ``(start, end, radius)`` for rendering: one per parent->child
    link with the child's radius, plus a sphere (degenerate capsule) at each root."""
    segs = []
    for i, j in enumerate(chain.joints):
        if j.radius_mm <= 0:
            continue
        start = positions[i] if j.parent < 0 else positions[j.parent]
        segs.append((np.asarray(start, float), np.asarray(positions[i], float), j.radius_mm))
    return segs


def joint_radii(chain: RobotChain) -> np.ndarray:
    """Largest radius among the capsules touching each joint."""
    r = np.array([j.radius_mm for j in chain.joints], dtype=np.float64)
    out = r.copy()
    for i, j in enumerate(chain.joints):
        if j.parent >= 0:
            out[j.parent] = max(out[j.parent], r[i])
    return out
