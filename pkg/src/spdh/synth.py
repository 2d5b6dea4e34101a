"""Synthetic depth frames of a capsule-link robot with exact joint labels.

Geometry is analytic (capsules, an optional ground plane and table box), so
every rendered pixel can be checked against closed-form surfaces. Rays are
parametrized by Z, which makes the ray parameter the Z-depth directly.
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import DEFAULT_MAX_RANGE, DepthImage, PinholeIntrinsics, project, save_intrinsics, write_depth_png
from .joints import JointSet3D
from .robot import RobotChain, forward_kinematics, joint_radii, link_segments, make_transform

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NoiseModel:
    sigma_mm: float = 3.0
    dropout: float = 0.01

    def __post_init__(self):
        if self.sigma_mm < 0:
            raise ValueError("noise stddev must be >= 0")
        if not 0.0 <= self.dropout <= 1.0:
            raise ValueError("dropout probability must be in [0, 1]")

    @property
    def active(self) -> bool:
        return self.sigma_mm > 0 or self.dropout > 0


NO_NOISE = NoiseModel(0.0, 0.0)


@dataclass(frozen=True)
class BoxSpec:
    """Axis-aligned box in the robot base frame."""

    center_mm: tuple[float, float, float]
    size_mm: tuple[float, float, float]


@dataclass(frozen=True)
class SceneSpec:
    """Robot, camera and static props.

    ``camera_pose`` is world <- camera, with the world frame being the anchor
    camera frame in which ``chain.base`` is expressed. The ground plane is
    ``z = ground_height_mm`` in the robot base frame.
    """

    chain: RobotChain
    intrinsics: PinholeIntrinsics
    camera_pose: np.ndarray = field(default_factory=lambda: np.eye(4))
    ground_height_mm: float | None = None
    table: BoxSpec | None = None
    noise: NoiseModel = NoiseModel()
    max_range: float = DEFAULT_MAX_RANGE

    def base_in_camera(self) -> np.ndarray:
        return np.linalg.inv(self.camera_pose) @ self.chain.base

    def camera_chain(self) -> RobotChain:
        """The chain with its base re-expressed in this camera's frame."""
        return self.chain.with_base(self.base_in_camera())


def default_scene(chain: RobotChain, intrinsics: PinholeIntrinsics, noise: NoiseModel = NoiseModel()) -> SceneSpec:
    """Desk-scale scene: the base rests on the floor, a table stands in front of the robot."""
    return SceneSpec(chain, intrinsics, ground_height_mm=-110.0,
                     table=BoxSpec((800.0, 0.0, 265.0), (450.0, 1200.0, 750.0)), noise=noise)


@dataclass(frozen=True)
class SequenceSpec:
    num_frames: int
    keyframes: tuple = ()
    jitter_diameter_mm: float = 1000.0
    seed: int = 0

    def __post_init__(self):
        if self.num_frames < 1:
            raise ValueError("a sequence needs at least one frame")
        if self.jitter_diameter_mm < 0:
            raise ValueError("jitter diameter must be >= 0")


# -- ray casting --------------------------------------------------------------

def pixel_rays(K: PinholeIntrinsics) -> np.ndarray:
    """Per-pixel ray directions with unit Z component, ``(h * w, 3)`` row-major."""
    v, u = np.mgrid[0:K.height, 0:K.width]
    return np.stack([(u.ravel() - K.cx) / K.fx, (v.ravel() - K.cy) / K.fy, np.ones(u.size)], axis=1)


def _first_root(a, b, c):
    """Smaller root of ``a t^2 + b t + c``; NaN when there is none."""
    disc = b * b - 4 * a * c
    with np.errstate(invalid="ignore", divide="ignore"):
        t = (-b - np.sqrt(disc)) / (2 * a)
    return np.where(disc >= 0, t, np.nan)


def intersect_sphere(rays: np.ndarray, center, radius: float) -> np.ndarray:
    c = np.asarray(center, float)
    a = np.einsum("ij,ij->i", rays, rays)
    b = -2 * rays @ c
    return _first_root(a, b, c @ c - radius * radius)


def intersect_capsule(rays: np.ndarray, start, end, radius: float) -> np.ndarray:
    """Entry depth of each ray into the capsule (NaN on miss)."""
    a, b = np.asarray(start, float), np.asarray(end, float)
    hits = [intersect_sphere(rays, a, radius), intersect_sphere(rays, b, radius)]
    length = np.linalg.norm(b - a)
    if length > 1e-9:
        e = (b - a) / length
        d_perp = rays - np.outer(rays @ e, e)
        o_perp = -a - (-a @ e) * e
        A = np.einsum("ij,ij->i", d_perp, d_perp)
        B = 2 * d_perp @ o_perp
        C = o_perp @ o_perp - radius * radius
        with np.errstate(invalid="ignore", divide="ignore"):
            t = _first_root(np.where(A > 1e-15, A, np.nan), B, C)
        s = t * (rays @ e) - a @ e
        hits.append(np.where((s >= 0) & (s <= length), t, np.nan))
    t = np.stack(hits)
    t[~(t > 0)] = np.nan
    return np.fmin.reduce(t, axis=0)


def intersect_plane(rays: np.ndarray, normal, point) -> np.ndarray:
    n = np.asarray(normal, float)
    denom = rays @ n
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(np.abs(denom) > 1e-12, (n @ np.asarray(point, float)) / denom, np.nan)
    return np.where(t > 0, t, np.nan)


def intersect_box(rays: np.ndarray, box_to_camera: np.ndarray, half_extents) -> np.ndarray:
    R, c = box_to_camera[:3, :3], box_to_camera[:3, 3]
    o = R.T @ -c
    d = rays @ R
    h = np.asarray(half_extents, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-h - o) / d
        t2 = (h - o) / d
    tmin = np.nanmax(np.minimum(t1, t2), axis=1)
    tmax = np.nanmin(np.maximum(t1, t2), axis=1)
    return np.where((tmax >= tmin) & (tmin > 0), tmin, np.nan)


def render_clean(scene: SceneSpec, q: Sequence[float]) -> tuple[np.ndarray, JointSet3D]:
    """Noise-free Z-depth ``(h, w)`` (0 = no hit) and the joints in camera frame."""
    K = scene.intrinsics
    chain = scene.camera_chain()
    joints = forward_kinematics(chain, q)
    rays = pixel_rays(K)
    depth = np.full(len(rays), np.nan)
    for start, end, r in link_segments(chain, joints.positions):
        depth = np.fmin(depth, intersect_capsule(rays, start, end, r))
    base = chain.base
    if scene.ground_height_mm is not None:
        depth = np.fmin(depth, intersect_plane(rays, base[:3, 2], base[:3, :3] @ [0, 0, scene.ground_height_mm] + base[:3, 3]))
    if scene.table is not None:
        box = base @ make_transform(None, scene.table.center_mm)
        depth = np.fmin(depth, intersect_box(rays, box, np.asarray(scene.table.size_mm) / 2))
    depth[~(depth <= scene.max_range)] = 0.0
    return depth.reshape(K.height, K.width), joints


def apply_noise(depth: np.ndarray, noise: NoiseModel, rng: np.random.Generator, max_range: float) -> np.ndarray:
    """Gaussian noise on Z for valid pixels, then random dropout to 0."""
    out = depth.copy()
    valid = out > 0
    if noise.sigma_mm > 0:
        out[valid] += rng.normal(0.0, noise.sigma_mm, size=int(valid.sum()))
        out[valid] = np.clip(out[valid], 1.0, max_range)
    if noise.dropout > 0:
        out[rng.random(out.shape) < noise.dropout] = 0.0
    return out


def render_depth(scene: SceneSpec, q: Sequence[float], rng: np.random.Generator | None = None) -> DepthImage:
    depth, _ = render_clean(scene, q)
    if scene.noise.active:
        depth = apply_noise(depth, scene.noise, rng if rng is not None else np.random.default_rng(0), scene.max_range)
    return DepthImage(depth, scene.max_range)


def joint_visibility(clean_depth: np.ndarray, joints: JointSet3D, K: PinholeIntrinsics,
                     radii: np.ndarray, noise_sigma: float = 0.0) -> np.ndarray:
    """A joint is visible when it projects inside the image and the surface at
    its pixel is no more than ``radius + 3 sigma`` in front of it."""
    pos = joints.positions
    vis = pos[:, 2] > 0
    uv = np.full((len(pos), 2), -1.0)
    if vis.any():
        uv[vis] = project(pos[vis], K)
    px = np.rint(uv).astype(int)
    vis &= (px[:, 0] >= 0) & (px[:, 0] < K.width) & (px[:, 1] >= 0) & (px[:, 1] < K.height)
    d = np.where(vis, clean_depth[np.clip(px[:, 1], 0, K.height - 1), np.clip(px[:, 0], 0, K.width - 1)], 0.0)
    vis &= (d > 0) & (d >= pos[:, 2] - (radii + 3 * noise_sigma))
    return vis


# -- motion scripts -------------------------------------------------------------

ARM_JOINTS = ("s0", "s1", "e0", "e1", "w0", "w1", "w2")
HOME_ARM = {"s1": -0.2, "e1": 1.0, "w1": 0.8}
PICK_BOUNDS = {"s0": (-0.6, 0.6), "s1": (-0.1, 0.6), "e0": (-0.3, 0.3), "e1": (0.4, 1.6),
               "w0": (-0.3, 0.3), "w1": (0.3, 1.4), "w2": (-1.0, 1.0)}


def _dof_index(chain: RobotChain) -> dict[str, int]:
    names = [j.name for j in chain.joints if j.kind == "revolute"]
    return {n: i for i, n in enumerate(names)}


def home_pose(chain: RobotChain) -> np.ndarray:
    idx = _dof_index(chain)
    q = np.zeros(chain.num_dof)
    for side in ("left", "right"):
        for j, val in HOME_ARM.items():
            if f"{side}_{j}" in idx:
                q[idx[f"{side}_{j}"]] = val
    return np.clip(q, chain.limits[:, 0], chain.limits[:, 1])


def pick_and_place_keyframes(chain: RobotChain, rng: np.random.Generator, motions: int = 10,
                             bounds: dict | None = None, lift_rad: float = 0.35) -> np.ndarray:
    """Joint-space keyframes for ``motions`` pick-n-place motions alternating
    between the left and right arm: home, pick, lift, place, home, ...

    Targets are drawn uniformly from per-joint ``bounds`` (radians).
    """
    bounds = PICK_BOUNDS if bounds is None else bounds
    idx = _dof_index(chain)
    lim = chain.limits
    home = home_pose(chain)
    frames = [home]
    for m in range(motions):
        side = "left" if m % 2 == 0 else "right"
        if not any(f"{side}_{j}" in idx for j in ARM_JOINTS):
            raise ValueError(f"chain has no joints named {side}_<{'|'.join(ARM_JOINTS)}>")

        def target():
            q = home.copy()
            for j in ARM_JOINTS:
                key = f"{side}_{j}"
                if key in idx and j in bounds:
                    lo, hi = bounds[j]
                    q[idx[key]] = rng.uniform(lo, hi)
            return q

        pick, place = target(), target()
        lift = pick.copy()
        if f"{side}_s1" in idx:
            lift[idx[f"{side}_s1"]] -= lift_rad
        frames += [pick, lift, place, home]
    return np.clip(np.array(frames), lim[:, 0], lim[:, 1])


def interpolate_keyframes(keyframes: np.ndarray, num_frames: int) -> np.ndarray:
    """Linear joint-space path through the keyframes, sampled at ``num_frames``
    evenly spaced instants (equal time per segment)."""
    kf = np.atleast_2d(np.asarray(keyframes, dtype=np.float64))
    if len(kf) == 1 or num_frames == 1:
        return np.repeat(kf[:1], num_frames, axis=0)
    s = np.linspace(0.0, len(kf) - 1, num_frames)
    i = np.minimum(np.floor(s).astype(int), len(kf) - 2)
    f = (s - i)[:, None]
    return kf[i] * (1 - f) + kf[i + 1] * f


def sample_in_ball(rng: np.random.Generator, radius: float) -> np.ndarray:
    """Uniform sample inside a ball."""
    if radius <= 0:
        return np.zeros(3)
    d = rng.normal(size=3)
    d /= np.linalg.norm(d)
    return d * radius * rng.random() ** (1.0 / 3.0)


def jittered_pose(anchor_pose: np.ndarray, rng: np.random.Generator, diameter_mm: float) -> np.ndarray:
    """Camera moved to a uniform point within a sphere of ``diameter_mm`` around its anchor."""
    return make_transform(None, sample_in_ball(rng, diameter_mm / 2.0)) @ anchor_pose


# -- dataset writing --------------------------------------------------------------

def _camera_record(K: PinholeIntrinsics, pose: np.ndarray) -> dict:
    return {"intrinsics": K.to_dict(),
            "pose": {"rotation": pose[:3, :3].tolist(), "translation_mm": pose[:3, 3].tolist()}}


def _render_frame(scene: SceneSpec, q: np.ndarray, seed_seq: np.random.SeedSequence):
    clean, joints = render_clean(scene, q)
    vis = joint_visibility(clean, joints, scene.intrinsics, joint_radii(scene.chain), scene.noise.sigma_mm)
    depth = apply_noise(clean, scene.noise, np.random.default_rng(seed_seq), scene.max_range) if scene.noise.active else clean
    return DepthImage(depth, scene.max_range), joints.with_visibility(vis)


def generate_sequence(scene: SceneSpec, seq: SequenceSpec, out_dir, sequence_id: str = "seq000",
                      jobs: int = 1) -> list[dict]:
    """Render one sequence into ``out_dir/<sequence_id>/`` and return its annotation records.

    Layout: ``depth/NNNNNN.png`` (16-bit, mm), ``annotations.jsonl`` (one record
    per frame) and ``camera.json`` (intrinsics). Output is a pure function of the
    scene and sequence spec, seed included.
    """
    seq_dir = Path(out_dir) / sequence_id
    (seq_dir / "depth").mkdir(parents=True, exist_ok=True)
    children = np.random.SeedSequence(seq.seed).spawn(seq.num_frames + 1)
    pose = jittered_pose(scene.camera_pose, np.random.default_rng(children[0]), seq.jitter_diameter_mm)
    frame_scene = SceneSpec(scene.chain, scene.intrinsics, pose, scene.ground_height_mm, scene.table,
                            scene.noise, scene.max_range)
    keyframes = seq.keyframes if len(seq.keyframes) else [np.zeros(scene.chain.num_dof)]
    qs = interpolate_keyframes(np.asarray(keyframes), seq.num_frames)

    def work(i):
        return _render_frame(frame_scene, qs[i], children[i + 1])

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            results = list(pool.map(work, range(seq.num_frames)))
    else:
        results = [work(i) for i in range(seq.num_frames)]

    records = []
    for i, (depth, joints) in enumerate(results):
        rel = f"depth/{i:06d}.png"
        write_depth_png(seq_dir / rel, depth)
        records.append({
            "frame_id": f"{sequence_id}/{i:06d}",
            "sequence": sequence_id,
            "index": i,
            "depth": rel,
            "joints": joints.to_records(),
            "camera": _camera_record(scene.intrinsics, pose),
            "q_rad": [float(x) for x in qs[i]],
            "seed": seq.seed,
        })
    with open(seq_dir / "annotations.jsonl", "w") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")
    save_intrinsics(scene.intrinsics, seq_dir / "camera.json")
    log.info("wrote %d frames to %s", seq.num_frames, seq_dir)
    return records
