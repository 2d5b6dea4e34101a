"""Frame sets on disk: manifest, per-sequence annotations, sampling and splits.

Layout of a dataset root::

    manifest.toml
    chain.json                  (optional copy of the robot chain)
    <seq>/annotations.jsonl     one JSON record per frame
    <seq>/camera.json           intrinsics
    <seq>/depth/NNNNNN.png      16-bit depth, mm

The manifest lists the sequences; paths in it are relative to the root, depth
paths in annotation records are relative to the sequence directory.
"""
from __future__ import annotations

import csv
import json
import logging
import shutil
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .geometry import DEFAULT_INTRINSICS, DEFAULT_MAX_RANGE, DepthImage, PinholeIntrinsics, read_depth, save_intrinsics
from .joints import JointSet3D
from .robot import RobotChain, load_chain, save_chain
from .synth import NoiseModel, SequenceSpec, default_scene, generate_sequence, pick_and_place_keyframes

log = logging.getLogger(__name__)

MANIFEST = "manifest.toml"
FORMAT_NAME = "spdh-frames"
FORMAT_VERSION = 1
_RECORD_KEYS = ("frame_id", "sequence", "index", "depth", "joints", "camera")


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class FrameRecord:
    frame_id: str
    sequence: str
    index: int
    depth_path: Path
    joints: JointSet3D
    intrinsics: PinholeIntrinsics
    camera_pose: np.ndarray
    extra: dict = field(default_factory=dict, compare=False)

    def load_depth(self, max_range: float = DEFAULT_MAX_RANGE) -> DepthImage:
        if not self.depth_path.exists():
            raise DatasetError(f"frame {self.frame_id}: depth file {self.depth_path} does not exist")
        return read_depth(self.depth_path, max_range)

    def to_record(self, depth_rel: str) -> dict:
        rec = dict(self.extra)
        rec.update({
            "frame_id": self.frame_id,
            "sequence": self.sequence,
            "index": self.index,
            "depth": depth_rel,
            "joints": self.joints.to_records(),
            "camera": {"intrinsics": self.intrinsics.to_dict(),
                       "pose": {"rotation": self.camera_pose[:3, :3].tolist(),
                                "translation_mm": self.camera_pose[:3, 3].tolist()}},
        })
        return rec


@dataclass(frozen=True)
class Dataset:
    root: Path
    joint_names: tuple[str, ...]
    frames: tuple[FrameRecord, ...]
    chain_path: Path | None = None
    units: str = "mm"

    def __len__(self) -> int:
        return len(self.frames)

    def __iter__(self):
        return iter(self.frames)

    @property
    def sequence_ids(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(f.sequence for f in self.frames))

    def by_id(self) -> dict[str, FrameRecord]:
        return {f.frame_id: f for f in self.frames}

    def ground_truth(self) -> dict[str, JointSet3D]:
        return {f.frame_id: f.joints for f in self.frames}

    def chain(self) -> RobotChain | None:
        return None if self.chain_path is None else load_chain(self.chain_path)


def _pose_from_record(cam: dict) -> np.ndarray:
    T = np.eye(4)
    pose = cam.get("pose")
    if pose is not None:
        T[:3, :3] = np.asarray(pose["rotation"], dtype=np.float64)
        T[:3, 3] = np.asarray(pose["translation_mm"], dtype=np.float64)
    return T


def parse_record(rec: dict, seq_dir: Path, joint_names: Sequence[str] | None) -> FrameRecord:
    missing = [k for k in _RECORD_KEYS if k not in rec]
    if missing:
        raise DatasetError(f"missing keys {missing}")
    joints = JointSet3D.from_records(rec["joints"])
    if joint_names is not None and joints.joint_names != tuple(joint_names):
        raise DatasetError(f"expected {len(joint_names)} joints {tuple(joint_names)}, record has "
                           f"{len(joints)} {joints.joint_names}")
    extra = {k: v for k, v in rec.items() if k not in _RECORD_KEYS}
    return FrameRecord(str(rec["frame_id"]), str(rec["sequence"]), int(rec["index"]), seq_dir / rec["depth"],
                       joints, PinholeIntrinsics.from_dict(rec["camera"]["intrinsics"]),
                       _pose_from_record(rec["camera"]), extra)


def read_manifest(root) -> dict:
    path = Path(root) / MANIFEST
    if not path.is_file():
        raise DatasetError(f"{root}: missing manifest ({MANIFEST})")
    try:
        with open(path, "rb") as f:
            man = tomllib.load(f)
    except tomllib.TOMLDecodeError as exc:
        raise DatasetError(f"{path}: {exc}") from exc
    if man.get("format") != FORMAT_NAME:
        raise DatasetError(f"{path}: format is {man.get('format')!r}, expected {FORMAT_NAME!r}")
    if int(man.get("version", 0)) != FORMAT_VERSION:
        raise DatasetError(f"{path}: unsupported version {man.get('version')!r}")
    if man.get("units", "mm") != "mm":
        raise DatasetError(f"{path}: units must be mm")
    for s in man.get("sequences", []):
        for key in ("id", "annotations"):
            if key not in s:
                raise DatasetError(f"{path}: sequence entry without {key!r}")
    return man


def load_dataset(root, check_files: bool = True) -> Dataset:
    """Index every frame of the dataset at ``root``; depth stays on disk until asked for."""
    root = Path(root)
    man = read_manifest(root)
    names = tuple(man["joint_names"]) if "joint_names" in man else None
    frames: list[FrameRecord] = []
    for s in man.get("sequences", []):
        sid = s["id"]
        ann = root / s["annotations"]
        if not ann.is_file():
            raise DatasetError(f"sequence {sid}: annotation file {ann} not found")
        seq_dir = ann.parent
        count = 0
        with open(ann) as f:
            for lineno, line in enumerate(f, 1):
                if not line.strip():
                    continue
                try:
                    fr = parse_record(json.loads(line), seq_dir, names)
                except (json.JSONDecodeError, DatasetError, KeyError, TypeError, ValueError) as exc:
                    raise DatasetError(f"sequence {sid} line {lineno}: {exc}") from exc
                if fr.sequence != sid:
                    raise DatasetError(f"sequence {sid} line {lineno}: record belongs to sequence {fr.sequence!r}")
                if check_files and not fr.depth_path.exists():
                    raise DatasetError(f"sequence {sid} line {lineno}: depth file {fr.depth_path} not found")
                if names is None:
                    names = fr.joints.joint_names
                frames.append(fr)
                count += 1
        if "num_frames" in s and int(s["num_frames"]) != count:
            raise DatasetError(f"sequence {sid}: manifest declares {s['num_frames']} frames, found {count}")
    ids = [f.frame_id for f in frames]
    if len(set(ids)) != len(ids):
        raise DatasetError("duplicate frame ids")
    chain = root / man["chain"] if man.get("chain") else None
    return Dataset(root, names or (), tuple(frames), chain, man.get("units", "mm"))


def write_manifest(root, sequences: Sequence[dict], joint_names: Sequence[str], chain: str | None = None) -> Path:
    man = {"format": FORMAT_NAME, "version": FORMAT_VERSION, "units": "mm", "joint_names": list(joint_names)}
    if chain:
        man["chain"] = chain
    man["sequences"] = [dict(s) for s in sequences]
    path = Path(root) / MANIFEST
    with open(path, "wb") as f:
        tomli_w.dump(man, f)
    return path


def _sequence_entry(sid: str, num_frames: int) -> dict:
    return {"id": sid, "annotations": f"{sid}/annotations.jsonl", "camera": f"{sid}/camera.json",
            "depth_dir": f"{sid}/depth", "num_frames": num_frames}


def save_dataset(frames: Iterable[FrameRecord], root, joint_names: Sequence[str] | None = None,
                 chain: RobotChain | None = None) -> Path:
    """Write ``frames`` as a dataset under ``root``, copying the depth files."""
    root = Path(root)
    frames = list(frames)
    if not frames:
        raise DatasetError("nothing to save")
    names = tuple(joint_names) if joint_names is not None else frames[0].joints.joint_names
    by_seq: dict[str, list[FrameRecord]] = {}
    for fr in frames:
        by_seq.setdefault(fr.sequence, []).append(fr)
    entries = []
    for sid, seq_frames in by_seq.items():
        seq_dir = root / sid
        (seq_dir / "depth").mkdir(parents=True, exist_ok=True)
        with open(seq_dir / "annotations.jsonl", "w") as f:
            for fr in seq_frames:
                rel = f"depth/{fr.depth_path.name}"
                if fr.depth_path.resolve() != (seq_dir / rel).resolve():
                    shutil.copyfile(fr.depth_path, seq_dir / rel)
                f.write(json.dumps(fr.to_record(rel), sort_keys=True) + "\n")
        save_intrinsics(seq_frames[0].intrinsics, seq_dir / "camera.json")
        entries.append(_sequence_entry(sid, len(seq_frames)))
    chain_rel = None
    if chain is not None:
        save_chain(chain, root / "chain.json")
        chain_rel = "chain.json"
    return write_manifest(root, entries, names, chain_rel)


def sample_every(frames: Iterable[FrameRecord], stride: int) -> list[FrameRecord]:
    """Keep every ``stride``-th frame of each sequence, starting with its first."""
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    pos: dict[str, int] = {}
    out = []
    for fr in frames:
        k = pos.get(fr.sequence, 0)
        if k % stride == 0:
            out.append(fr)
        pos[fr.sequence] = k + 1
    return out


@dataclass(frozen=True)
class SplitSpec:
    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]

    def __post_init__(self):
        seen: dict[str, str] = {}
        for part in ("train", "val", "test"):
            for sid in getattr(self, part):
                if sid in seen:
                    raise ValueError(f"sequence {sid!r} is in both {seen[sid]} and {part}")
                seen[sid] = part

    @classmethod
    def by_counts(cls, sequence_ids: Sequence[str], counts=(28, 4, 8), seed: int | None = None) -> "SplitSpec":
        """Partition ids into consecutive blocks of the given sizes, optionally shuffled first."""
        ids = list(sequence_ids)
        if sum(counts) != len(ids):
            raise ValueError(f"split sizes {tuple(counts)} do not add up to {len(ids)} sequences")
        if seed is not None:
            ids = [ids[i] for i in np.random.default_rng(seed).permutation(len(ids))]
        a, b = counts[0], counts[0] + counts[1]
        return cls(tuple(ids[:a]), tuple(ids[a:b]), tuple(ids[b:]))


def split(frames: Iterable[FrameRecord], spec: SplitSpec):
    """Sequence-level split into ``(train, val, test)`` frame lists."""
    frames = list(frames)
    present = dict.fromkeys(f.sequence for f in frames)
    assigned = {sid: part for part in ("train", "val", "test") for sid in getattr(spec, part)}
    unknown = [sid for sid in assigned if sid not in present]
    if unknown:
        raise ValueError(f"split names unknown sequences {unknown}")
    unassigned = [sid for sid in present if sid not in assigned]
    if unassigned:
        raise ValueError(f"sequences not covered by the split: {unassigned}")
    out = {"train": [], "val": [], "test": []}
    for fr in frames:
        out[assigned[fr.sequence]].append(fr)
    assert sum(len(v) for v in out.values()) == len(frames)
    return out["train"], out["val"], out["test"]


def generate_dataset(root, num_sequences: int = 1, frames_per_sequence: int = 10, seed: int = 0,
                     intrinsics: PinholeIntrinsics = DEFAULT_INTRINSICS, chain: RobotChain | None = None,
                     noise: NoiseModel = NoiseModel(), motions: int = 2, jitter_diameter_mm: float = 1000.0,
                     jobs: int = 1) -> Path:
    """Render a synthetic pick-n-place dataset with a manifest and chain copy."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    chain = load_chain() if chain is None else chain
    scene = default_scene(chain, intrinsics, noise)
    seeds = np.random.SeedSequence(seed).generate_state(num_sequences)
    entries = []
    for s in range(num_sequences):
        sid = f"seq{s:03d}"
        kf = pick_and_place_keyframes(chain, np.random.default_rng(int(seeds[s])), motions)
        spec = SequenceSpec(frames_per_sequence, tuple(map(tuple, kf)), jitter_diameter_mm, int(seeds[s]))
        generate_sequence(scene, spec, root, sid, jobs)
        entries.append(_sequence_entry(sid, frames_per_sequence))
    save_chain(chain, root / "chain.json")
    return write_manifest(root, entries, chain.names, "chain.json")


# -- predictions ---------------------------------------------------------------

def write_predictions(path, preds: dict[str, JointSet3D], extra: dict[str, dict] | None = None) -> None:
    """JSONL with one ``{"frame_id", "joints", ...}`` record per frame, sorted by id."""
    with open(path, "w") as f:
        for fid in sorted(preds):
            rec = {"frame_id": fid, "joints": preds[fid].to_records()}
            if extra and fid in extra:
                rec.update(extra[fid])
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def read_predictions(path) -> dict[str, JointSet3D]:
    out = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                fid = str(rec["frame_id"])
                joints = JointSet3D.from_records(rec["joints"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DatasetError(f"{path} line {lineno}: {exc}") from exc
            if fid in out:
                raise DatasetError(f"{path} line {lineno}: duplicate frame id {fid}")
            out[fid] = joints
    return out


# -- conversion ----------------------------------------------------------------

def _csv_joint_names(header: Sequence[str]) -> list[str]:
    names = []
    for col in header:
        if col.endswith("_x"):
            stem = col[:-2]
            if f"{stem}_y" not in header or f"{stem}_z" not in header:
                raise DatasetError(f"joint {stem}: need {stem}_x, {stem}_y and {stem}_z columns")
            names.append(stem)
    if not names:
        raise DatasetError("no <joint>_x/_y/_z columns found")
    return names


def _camera_from_json(path) -> tuple[PinholeIntrinsics, np.ndarray]:
    with open(path) as f:
        d = json.load(f)
    if "intrinsics" in d:
        return PinholeIntrinsics.from_dict(d["intrinsics"]), _pose_from_record(d)
    return PinholeIntrinsics.from_dict(d), np.eye(4)


def convert(csv_path, camera_json, out_root, depth_root=None, default_sequence: str = "seq000") -> Path:
    """Build a dataset from depth PNGs plus a joints CSV.

    CSV columns: ``depth`` (path, relative to ``depth_root`` or the CSV's
    directory), optional ``sequence``, then ``<joint>_x``, ``<joint>_y``,
    ``<joint>_z`` (mm, camera frame) and optional ``<joint>_visible`` per joint.
    The camera JSON holds intrinsics, either bare or under ``"intrinsics"``
    together with an optional ``"pose"``.
    """
    csv_path = Path(csv_path)
    depth_root = csv_path.parent if depth_root is None else Path(depth_root)
    K, pose = _camera_from_json(camera_json)
    with open(csv_path, newline="") as f:
        reader = csv.DictReader(f)
        header = reader.fieldnames or []
        if "depth" not in header:
            raise DatasetError(f"{csv_path}: missing 'depth' column")
        names = _csv_joint_names(header)
        frames: list[FrameRecord] = []
        counters: dict[str, int] = {}
        for lineno, row in enumerate(reader, 2):
            try:
                sid = row.get("sequence") or default_sequence
                i = counters.get(sid, 0)
                counters[sid] = i + 1
                pos = [[float(row[f"{n}_{a}"]) for a in "xyz"] for n in names]
                vis = [row.get(f"{n}_visible", "1").strip().lower() not in ("0", "false", "no", "") for n in names]
                src = depth_root / row["depth"]
                if not src.is_file():
                    raise DatasetError(f"depth file {src} not found")
                frames.append(FrameRecord(f"{sid}/{i:06d}", sid, i, src, JointSet3D(pos, vis, names), K, pose))
            except (KeyError, TypeError, ValueError) as exc:
                raise DatasetError(f"{csv_path} line {lineno}: {exc}") from exc
    if not frames:
        raise DatasetError(f"{csv_path}: no rows")
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    # rename depth files to NNNNNN.png so different source folders cannot collide
    renamed = []
    for fr in frames:
        seq_depth = out_root / fr.sequence / "depth"
        seq_depth.mkdir(parents=True, exist_ok=True)
        dst = seq_depth / f"{fr.index:06d}{fr.depth_path.suffix.lower()}"
        shutil.copyfile(fr.depth_path, dst)
        renamed.append(FrameRecord(fr.frame_id, fr.sequence, fr.index, dst, fr.joints, fr.intrinsics, fr.camera_pose))
    return save_dataset(renamed, out_root, names)
