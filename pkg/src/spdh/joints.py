"""Named 3D joint sets in the camera frame."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class JointSet3D:
    """``n`` joint positions (mm, camera frame) with per-joint visibility.

    ``positions`` is an ``(n, 3)`` float array. ``visibility`` defaults to all
    true. ``joint_names`` defaults to ``joint_0 .. joint_{n-1}``.
    """

    positions: np.ndarray
    visibility: np.ndarray = None
    joint_names: tuple[str, ...] = field(default=None)

    def __post_init__(self):
        pos = np.array(self.positions, dtype=np.float64).reshape(-1, 3)
        n = pos.shape[0]
        if n == 0:
            raise ValueError("a joint set needs at least one joint")
        vis = np.ones(n, dtype=bool) if self.visibility is None else np.array(self.visibility, dtype=bool).reshape(-1)
        names = tuple(f"joint_{i}" for i in range(n)) if self.joint_names is None else tuple(self.joint_names)
        if vis.shape != (n,) or len(names) != n:
            raise ValueError(f"inconsistent joint set: {n} positions, {vis.size} flags, {len(names)} names")
        pos.flags.writeable = False
        vis.flags.writeable = False
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "visibility", vis)
        object.__setattr__(self, "joint_names", names)

    def __len__(self) -> int:
        return self.positions.shape[0]

    def with_visibility(self, visibility: Sequence[bool]) -> "JointSet3D":
        return JointSet3D(self.positions, visibility, self.joint_names)

    def with_positions(self, positions: np.ndarray) -> "JointSet3D":
        return JointSet3D(positions, self.visibility, self.joint_names)

    def to_records(self) -> list[dict]:
        return [
            {"name": name, "xyz_mm": [float(c) for c in p], "visible": bool(v)}
            for name, p, v in zip(self.joint_names, self.positions, self.visibility)
        ]

    @classmethod
    def from_records(cls, records: Sequence[dict]) -> "JointSet3D":
        return cls(
            np.array([r["xyz_mm"] for r in records], dtype=np.float64),
            [bool(r.get("visible", True)) for r in records],
            [r["name"] for r in records],
        )

    def __eq__(self, other):
        if not isinstance(other, JointSet3D):
            return NotImplemented
        return (
            self.joint_names == other.joint_names
            and np.array_equal(self.positions, other.positions)
            and np.array_equal(self.visibility, other.visibility)
        )

    __hash__ = None
