"""Pose accuracy metrics (ADD, mAP) and the depth-sampling baseline.

ADD is the mean joint distance of a frame in centimeters (L1 or L2 norm).
mAP here is the fraction of 3D keypoints whose L2 error is strictly below a
threshold, pooled over every (frame, joint) pair by default. Joints whose
ground truth is not visible are left out of both and counted as excluded.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .geometry import DepthImage, PinholeIntrinsics, pixel_to_point
from .joints import JointSet3D

DEFAULT_THRESHOLDS_MM = (40.0, 60.0, 80.0, 100.0)
_NORMS = {"l1": 1, "l2": 2}


def _check_pair(pred: JointSet3D, gt: JointSet3D) -> None:
    if pred.joint_names != gt.joint_names:
        raise ValueError(f"joint names differ: {pred.joint_names} vs {gt.joint_names}")


def joint_errors(pred: JointSet3D, gt: JointSet3D, norm: str = "l2") -> np.ndarray:
    """Per-joint error (mm) over the joints visible in ``gt``."""
    _check_pair(pred, gt)
    if norm not in _NORMS:
        raise ValueError(f"unknown norm {norm!r}, expected l1 or l2")
    d = pred.positions[gt.visibility] - gt.positions[gt.visibility]
    return np.linalg.norm(d, ord=_NORMS[norm], axis=1)


def add_metric(pred: JointSet3D, gt: JointSet3D, norm: str = "l2") -> float:
    """Average joint distance of one frame, in cm."""
    err = joint_errors(pred, gt, norm)
    if err.size == 0:
        raise ValueError("no visible ground-truth joints to evaluate")
    return float(err.mean() / 10.0)


def map_metric(frames: Sequence[tuple[JointSet3D, JointSet3D]], thresholds: Sequence[float] = DEFAULT_THRESHOLDS_MM,
               mode: str = "pooled") -> list[float]:
    """Fraction of joints with L2 error ``< t`` for each threshold ``t``.

    ``pooled`` counts every (frame, joint) pair once; ``per_frame`` averages
    the per-frame fractions instead.
    """
    if len(frames) == 0:
        raise ValueError("no frames to evaluate")
    t = np.asarray(thresholds, dtype=np.float64)
    if np.any(np.diff(t) < 0):
        raise ValueError("thresholds must be sorted ascending")
    errs = [joint_errors(p, g, "l2") for p, g in frames]
    if mode == "pooled":
        e = np.concatenate(errs)
        if e.size == 0:
            raise ValueError("no visible ground-truth joints to evaluate")
        return [float(x) for x in (e[:, None] < t[None, :]).mean(axis=0)]
    if mode == "per_frame":
        per = [(e[:, None] < t[None, :]).mean(axis=0) for e in errs if e.size]
        if not per:
            raise ValueError("no visible ground-truth joints to evaluate")
        return [float(x) for x in np.mean(per, axis=0)]
    raise ValueError(f"unknown mAP mode {mode!r}")


def baseline_2d_to_3d(pred_2d, depth: DepthImage, K: PinholeIntrinsics, joint_names=None,
                      window: int = 1) -> JointSet3D:
    """Lift 2D joints to 3D by reading Z from the depth map.

    Z is the depth at the nearest pixel (``window=1``) or the median of the
    nonzero values in a ``window x window`` patch. A zero reading marks the
    joint invisible. X and Y come from backprojecting the subpixel ``(u, v)``.
    """
    uv = np.asarray(pred_2d, dtype=np.float64).reshape(-1, 2)
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be a positive odd size, got {window}")
    h, w = depth.data.shape
    ui = np.rint(uv[:, 0]).astype(np.int64)
    vi = np.rint(uv[:, 1]).astype(np.int64)
    if np.any((ui < 0) | (ui >= w) | (vi < 0) | (vi >= h)):
        raise ValueError("2D joint coordinates fall outside the depth image")
    if window == 1:
        z = depth.data[vi, ui].copy()
    else:
        r = window // 2
        z = np.zeros(len(uv))
        for k, (u, v) in enumerate(zip(ui, vi)):
            patch = depth.data[max(v - r, 0):v + r + 1, max(u - r, 0):u + r + 1]
            nz = patch[patch > 0]
            z[k] = np.median(nz) if nz.size else 0.0
    pos = pixel_to_point(uv[:, 0], uv[:, 1], z, K)
    return JointSet3D(pos, z > 0, joint_names)


@dataclass(frozen=True)
class PoseMetricsReport:
    add_l1_mean: float
    add_l1_std: float
    add_l2_mean: float
    add_l2_std: float
    map_at: tuple[tuple[float, float], ...]
    num_frames: int
    num_joints_evaluated: int
    num_excluded: int = 0
    map_mode: str = "pooled"
    label: str = field(default="", compare=False)

    def __post_init__(self):
        fr = [f for _, f in self.map_at]
        if any(not 0.0 <= f <= 1.0 for f in fr):
            raise ValueError("mAP fractions must lie in [0, 1]")
        if any(b < a for a, b in zip(fr, fr[1:])):
            raise ValueError("mAP must be non-decreasing in threshold")
        if self.add_l1_std < 0 or self.add_l2_std < 0:
            raise ValueError("standard deviations must be non-negative")

    def to_dict(self) -> dict:
        return {
            "add": {"l1": {"mean": self.add_l1_mean, "std": self.add_l1_std},
                    "l2": {"mean": self.add_l2_mean, "std": self.add_l2_std}},
            "map": [{"threshold_mm": t, "fraction": f} for t, f in self.map_at],
            "map_mode": self.map_mode,
            "frames": self.num_frames,
            "joints": self.num_joints_evaluated,
            "excluded": self.num_excluded,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict, label: str = "") -> "PoseMetricsReport":
        return cls(float(d["add"]["l1"]["mean"]), float(d["add"]["l1"]["std"]),
                   float(d["add"]["l2"]["mean"]), float(d["add"]["l2"]["std"]),
                   tuple((float(m["threshold_mm"]), float(m["fraction"])) for m in d["map"]),
                   int(d["frames"]), int(d["joints"]), int(d.get("excluded", 0)),
                   d.get("map_mode", "pooled"), label)

    @classmethod
    def from_json(cls, text: str, label: str = "") -> "PoseMetricsReport":
        return cls.from_dict(json.loads(text), label)


def evaluate_frames(frames: Sequence[tuple[JointSet3D, JointSet3D]],
                    thresholds: Sequence[float] = DEFAULT_THRESHOLDS_MM, map_mode: str = "pooled",
                    label: str = "") -> PoseMetricsReport:
    """Aggregate per-frame ADD (mean and population std over frames) and mAP.

    Frames without any visible ground-truth joint are skipped for ADD; their
    joints still count as excluded.
    """
    if len(frames) == 0:
        raise ValueError("no frames to evaluate")
    l1, l2 = [], []
    excluded = 0
    for pred, gt in frames:
        excluded += int((~gt.visibility).sum())
        if gt.visibility.any():
            a1, a2 = add_metric(pred, gt, "l1"), add_metric(pred, gt, "l2")
            if a1 < a2 - 1e-12:
                raise AssertionError(f"ADD L1 {a1} below L2 {a2}")
            l1.append(a1)
            l2.append(a2)
    if not l2:
        raise ValueError("no visible ground-truth joints to evaluate")
    fr = map_metric(frames, thresholds, map_mode)
    evaluated = sum(int(g.visibility.sum()) for _, g in frames)
    return PoseMetricsReport(float(np.mean(l1)), float(np.std(l1)), float(np.mean(l2)), float(np.std(l2)),
                             tuple(zip((float(t) for t in thresholds), fr)), len(frames), evaluated, excluded,
                             map_mode, label)


def evaluate_run(pred: dict[str, JointSet3D], gt: dict[str, JointSet3D],
                 thresholds: Sequence[float] = DEFAULT_THRESHOLDS_MM, map_mode: str = "pooled",
                 label: str = "") -> PoseMetricsReport:
    """Match predictions to ground truth by frame id and aggregate.

    Every predicted frame must exist in the ground truth. Ground-truth frames
    without a prediction are an error too, so a partial run never looks good.
    """
    missing = sorted(set(gt) - set(pred))
    unknown = sorted(set(pred) - set(gt))
    if unknown:
        raise ValueError(f"predictions for unknown frames: {unknown[:5]}{' ...' if len(unknown) > 5 else ''}")
    if missing:
        raise ValueError(f"no prediction for frames: {missing[:5]}{' ...' if len(missing) > 5 else ''}")
    if not gt:
        raise ValueError("no frames in common between predictions and ground truth")
    ids = sorted(gt)
    return evaluate_frames([(pred[i], gt[i]) for i in ids], thresholds, map_mode, label)


def format_table(reports: Iterable[PoseMetricsReport]) -> str:
    """Plain-text comparison table: one row per method, mAP (%) then ADD (cm)."""
    reports = list(reports)
    if not reports:
        return ""
    thr = [t for t, _ in reports[0].map_at]
    head = ["Method"] + [f"mAP@{t:g}mm" for t in thr] + ["ADD L1 (cm)", "ADD L2 (cm)"]
    rows = []
    for r in reports:
        if [t for t, _ in r.map_at] != thr:
            raise ValueError("reports use different thresholds")
        rows.append([r.label or "-"] + [f"{100 * f:.1f}" for _, f in r.map_at]
                    + [f"{r.add_l1_mean:.2f} ± {r.add_l1_std:.2f}", f"{r.add_l2_mean:.2f} ± {r.add_l2_std:.2f}"])
    widths = [max(len(str(row[i])) for row in [head] + rows) for i in range(len(head))]

    def fmt(row):
        return "  ".join(str(c).ljust(w) if i == 0 else str(c).rjust(w) for i, (c, w) in enumerate(zip(row, widths)))

    rule = "-" * len(fmt(head))
    return "\n".join([fmt(head), rule] + [fmt(r) for r in rows]) + "\n"
