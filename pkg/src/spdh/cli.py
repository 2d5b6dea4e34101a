"""``spdh`` command line: synth, encode, decode, eval, viz and convert.

Parameters come from an optional TOML file (``--config``) with command-line
flags taking precedence. Every command writes the resulting parameters to
``effective_config.toml`` in its output directory; passing that file back with
``--config`` reproduces the run.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import __version__
from .augment import AugmentSpec, augment_frame
from .codec import decode, encode, load_stack, locate_peaks, make_quantization, save_stack
from .dataset_io import (DatasetError, generate_dataset, load_dataset, read_predictions, write_predictions,
                         convert as convert_dataset)
from .geometry import (NormalizationSpec, PinholeIntrinsics, backproject, load_intrinsics, normalize_xyz, project,
                       resize_depth, write_depth_png, DEFAULT_INTRINSICS)
from .joints import JointSet3D
from .metrics import DEFAULT_THRESHOLDS_MM, baseline_2d_to_3d, evaluate_run, format_table
from .robot import load_chain
from .synth import NoiseModel
from . import viz

log = logging.getLogger("spdh")

EFFECTIVE_CONFIG = "effective_config.toml"
INDEX = "index.jsonl"


class ConfigError(ValueError):
    pass


def parse_shape(text: str) -> tuple[int, int]:
    try:
        h, w = (int(x) for x in str(text).lower().split("x"))
    except ValueError:
        raise ConfigError(f"shape must look like HxW (e.g. 192x384), got {text!r}") from None
    if h < 1 or w < 1:
        raise ConfigError(f"shape must be positive, got {text!r}")
    return h, w


def parse_thresholds(text) -> tuple[float, ...]:
    vals = text if isinstance(text, (list, tuple)) else str(text).split(",")
    try:
        t = tuple(float(x) for x in vals)
    except ValueError:
        raise ConfigError(f"thresholds must be numbers, got {text!r}") from None
    if not t or any(b < a for a, b in zip(t, t[1:])) or min(t) <= 0:
        raise ConfigError(f"thresholds must be positive and ascending, got {t}")
    return t


@dataclass(frozen=True)
class RunConfig:
    camera: str | None = None
    seed: int = 0
    jobs: int = 1
    # heatmap encoding
    z_min: float = 500.0
    z_max: float = 3380.0
    delta_z: float = 15.0
    sigma_m: float = 50.0
    shape: tuple[int, int] = (192, 384)
    peak_threshold: float = 0.1
    refine: bool = False
    uz_mode: str = "row_peak"
    stack_format: str = "raw"
    # metrics
    thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS_MM
    map_mode: str = "pooled"
    baseline_window: int = 1
    # synthetic data
    sequences: int = 1
    frames: int = 10
    motions: int = 2
    noise_sigma_mm: float = 3.0
    dropout: float = 0.01
    jitter_mm: float = 1000.0
    chain: str | None = None
    # augmentation (encode --augment)
    augment: AugmentSpec = field(default_factory=AugmentSpec)

    def validate(self) -> "RunConfig":
        try:
            make_quantization(self.z_min, self.z_max, self.delta_z)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        checks = [
            (self.sigma_m > 0, "sigma_m must be positive"),
            (self.jobs >= 1, "jobs must be >= 1"),
            (self.uz_mode in ("row_peak", "argmax"), f"unknown uz_mode {self.uz_mode!r}"),
            (self.stack_format in ("raw", "png"), f"unknown stack format {self.stack_format!r}"),
            (self.map_mode in ("pooled", "per_frame"), f"unknown map_mode {self.map_mode!r}"),
            (self.baseline_window >= 1 and self.baseline_window % 2 == 1, "baseline_window must be odd"),
            (self.sequences >= 1 and self.frames >= 1 and self.motions >= 1, "synth counts must be >= 1"),
            (self.noise_sigma_mm >= 0 and 0 <= self.dropout <= 1, "invalid noise parameters"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        for path in (self.camera, self.chain):
            if path is not None and not Path(path).is_file():
                raise ConfigError(f"file not found: {path}")
        parse_thresholds(self.thresholds)
        return self

    @property
    def quant(self):
        return make_quantization(self.z_min, self.z_max, self.delta_z)

    def to_toml_dict(self) -> dict:
        # worker count is left out: it never changes outputs
        d = {"seed": self.seed}
        if self.camera is not None:
            d["camera"] = self.camera
        d["spdh"] = {"z_min": self.z_min, "z_max": self.z_max, "delta_z": self.delta_z, "sigma_m": self.sigma_m,
                     "shape": f"{self.shape[0]}x{self.shape[1]}", "peak_threshold": self.peak_threshold,
                     "refine": self.refine, "uz_mode": self.uz_mode, "format": self.stack_format}
        d["metrics"] = {"thresholds": list(self.thresholds), "map_mode": self.map_mode,
                        "baseline_window": self.baseline_window}
        d["synth"] = {"sequences": self.sequences, "frames": self.frames, "motions": self.motions,
                      "noise_sigma_mm": self.noise_sigma_mm, "dropout": self.dropout, "jitter_mm": self.jitter_mm}
        if self.chain is not None:
            d["synth"]["chain"] = self.chain
        d["augment"] = self.augment.to_dict()
        return d

    def dumps(self) -> str:
        return tomli_w.dumps(self.to_toml_dict())

    @classmethod
    def from_toml_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        kw = {}
        sections = {
            "spdh": {"z_min": float, "z_max": float, "delta_z": float, "sigma_m": float, "shape": parse_shape,
                     "peak_threshold": float, "refine": bool, "uz_mode": str, "format": str},
            "metrics": {"thresholds": parse_thresholds, "map_mode": str, "baseline_window": int},
            "synth": {"sequences": int, "frames": int, "motions": int, "noise_sigma_mm": float, "dropout": float,
                      "jitter_mm": float, "chain": str},
        }
        top = {"seed": int, "jobs": int, "camera": str}
        for key in list(d):
            if key in top:
                kw[key] = top[key](d.pop(key))
        for sec, conv in sections.items():
            sd = dict(d.pop(sec, {}))
            for key in list(sd):
                if key not in conv:
                    raise ConfigError(f"unknown config key [{sec}] {key}")
                kw["stack_format" if key == "format" else key] = conv[key](sd.pop(key))
        if "augment" in d:
            aug = d.pop("augment")
            unknown = set(aug) - {f.name for f in dataclasses.fields(AugmentSpec)}
            if unknown:
                raise ConfigError(f"unknown config keys in [augment]: {sorted(unknown)}")
            try:
                kw["augment"] = AugmentSpec.from_dict(aug)
            except ValueError as exc:
                raise ConfigError(f"[augment]: {exc}") from None
        if d:
            raise ConfigError(f"unknown config keys: {sorted(d)}")
        return cls(**kw)


def load_config(path) -> RunConfig:
    try:
        with open(path, "rb") as f:
            return RunConfig.from_toml_dict(tomllib.load(f))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


_FLAG_FIELDS = {
    "camera": "camera", "seed": "seed", "jobs": "jobs", "z_min": "z_min", "z_max": "z_max", "delta_z": "delta_z",
    "sigma_m": "sigma_m", "shape": "shape", "peak_threshold": "peak_threshold", "thresholds": "thresholds",
    "frames": "frames", "sequences": "sequences", "motions": "motions", "noise_sigma": "noise_sigma_mm",
    "dropout": "dropout", "jitter": "jitter_mm", "chain": "chain", "format": "stack_format",
    "map_mode": "map_mode", "window": "baseline_window", "refine": "refine", "uz_mode": "uz_mode",
}


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    updates = {}
    for flag, name in _FLAG_FIELDS.items():
        val = getattr(args, flag, None)
        if val is None:
            continue
        if name in ("camera", "chain"):
            val = str(Path(val).resolve())
        updates[name] = val
    cfg = dataclasses.replace(cfg, **updates)
    return cfg.validate()


def write_effective_config(cfg: RunConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / EFFECTIVE_CONFIG).write_text(cfg.dumps())


def _sensor_intrinsics(cfg: RunConfig, frame_K: PinholeIntrinsics) -> PinholeIntrinsics:
    return load_intrinsics(cfg.camera) if cfg.camera else frame_K


def _heatmap_intrinsics(cfg: RunConfig, K: PinholeIntrinsics) -> PinholeIntrinsics:
    h, w = cfg.shape
    return K.scaled(w, h)


def _run(jobs: int, fn, items):
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


# -- commands -------------------------------------------------------------------

def cmd_synth(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    K = load_intrinsics(cfg.camera) if cfg.camera else DEFAULT_INTRINSICS
    chain = load_chain(cfg.chain)
    generate_dataset(out, cfg.sequences, cfg.frames, cfg.seed, K, chain,
                     NoiseModel(cfg.noise_sigma_mm, cfg.dropout), cfg.motions, cfg.jitter_mm, cfg.jobs)
    write_effective_config(cfg, out)
    print(f"wrote {cfg.sequences * cfg.frames} frames to {out}")
    return 0


def cmd_encode(args, cfg: RunConfig) -> int:
    ds = load_dataset(args.dataset)
    out = Path(args.out)
    quant = cfg.quant
    if quant.num_slices != cfg.shape[0]:
        log.warning("uz height %d differs from uv height %d; stacks cannot form a single 2n x h x w tensor",
                    quant.num_slices, cfg.shape[0])
    frames = list(ds)

    def work(k):
        fr = frames[k]
        K = _sensor_intrinsics(cfg, fr.intrinsics)
        joints, extra = fr.joints, {}
        if args.augment:
            depth, joints, T = augment_frame(fr.load_depth(), joints, K, cfg.augment, k)
            rel = f"depth/{fr.sequence}/{fr.index:06d}.png"
            (out / rel).parent.mkdir(parents=True, exist_ok=True)
            write_depth_png(out / rel, depth)
            extra = {"depth": rel, "transform": T.tolist()}
        Kh = _heatmap_intrinsics(cfg, K)
        stack = encode(joints, Kh, cfg.sigma_m, quant, cfg.shape)
        rel_stem = f"stacks/{fr.sequence}/{fr.index:06d}"
        save_stack(stack, out / rel_stem, Kh, cfg.stack_format)
        return fr.frame_id, rel_stem, joints, extra

    results = _run(cfg.jobs, work, range(len(frames)))
    out.mkdir(parents=True, exist_ok=True)
    with open(out / INDEX, "w") as f:
        for fid, stem, _, _ in results:
            f.write(json.dumps({"frame_id": fid, "stack": stem}, sort_keys=True) + "\n")
    if args.augment:
        write_predictions(out / "targets.jsonl", {r[0]: r[2] for r in results}, {r[0]: r[3] for r in results})
    write_effective_config(cfg, out)
    print(f"encoded {len(results)} frames into {out} (uv {cfg.shape[0]}x{cfg.shape[1]}, "
          f"uz {quant.num_slices}x{cfg.shape[1]})")
    return 0


def read_index(stacks_dir) -> list[dict]:
    path = Path(stacks_dir) / INDEX
    if not path.is_file():
        raise DatasetError(f"{stacks_dir}: no {INDEX}; is this an encode output directory?")
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


def _baseline_joints(stack, Kh: PinholeIntrinsics, frame, cfg: RunConfig) -> JointSet3D:
    peaks = locate_peaks(stack, refine=cfg.refine, uz_mode=cfg.uz_mode)
    K = _sensor_intrinsics(cfg, frame.intrinsics)
    # heatmap pixel -> sensor pixel through the normalized image plane
    u = (peaks.u - Kh.cx) / Kh.fx * K.fx + K.cx
    v = (peaks.v - Kh.cy) / Kh.fy * K.fy + K.cy
    pred = baseline_2d_to_3d(np.stack([u, v], axis=1), frame.load_depth(), K, stack.joint_names,
                             cfg.baseline_window)
    confident = peaks.uv_score >= cfg.peak_threshold
    return pred.with_visibility(pred.visibility & confident)


def cmd_decode(args, cfg: RunConfig) -> int:
    stacks_dir = Path(args.stacks)
    entries = read_index(stacks_dir)
    frames = None
    if args.mode == "baseline":
        if not args.dataset:
            raise ConfigError("--mode baseline needs --dataset for the depth maps")
        frames = load_dataset(args.dataset).by_id()

    def work(entry):
        fid = entry["frame_id"]
        try:
            stack, Kh = load_stack(stacks_dir / entry["stack"])
            if Kh is None:
                raise ValueError("stack sidecar has no intrinsics")
            if args.mode == "baseline":
                if fid not in frames:
                    raise KeyError(f"frame not in dataset {args.dataset}")
                return fid, _baseline_joints(stack, Kh, frames[fid], cfg), None
            return fid, decode(stack, Kh, cfg.peak_threshold, cfg.refine, cfg.uz_mode), None
        except (OSError, ValueError, KeyError) as exc:
            return fid, None, f"{type(exc).__name__}: {exc}"

    results = _run(cfg.jobs, work, entries)
    preds = {fid: j for fid, j, err in results if j is not None}
    errors = [(fid, err) for fid, _, err in results if err is not None]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_predictions(out / "predictions.jsonl", preds)
    write_effective_config(cfg, out)
    for fid, err in errors:
        print(f"spdh decode: frame {fid}: {err}", file=sys.stderr)
    print(f"decoded {len(preds)} of {len(entries)} frames ({args.mode}) into {out / 'predictions.jsonl'}")
    return 1 if errors else 0


def _ground_truth(path) -> dict[str, JointSet3D]:
    p = Path(path)
    if p.is_dir():
        return load_dataset(p, check_files=False).ground_truth()
    return read_predictions(p)


def cmd_eval(args, cfg: RunConfig) -> int:
    gt = _ground_truth(args.gt)
    runs = [("SPDH", args.pred, "report.json")]
    if args.baseline:
        runs.append(("baseline", args.baseline, "report_baseline.json"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    reports = []
    for label, path, name in runs:
        rep = evaluate_run(read_predictions(path), gt, cfg.thresholds, cfg.map_mode, label)
        (out / name).write_text(rep.to_json())
        reports.append(rep)
    table = format_table(reports)
    (out / "table.txt").write_text(table)
    write_effective_config(cfg, out)
    print(table, end="")
    return 0


def _safe_name(frame_id: str) -> str:
    return frame_id.replace("/", "_")


def cmd_viz(args, cfg: RunConfig) -> int:
    stacks_dir = Path(args.stacks)
    entries = read_index(stacks_dir)
    if args.frame:
        wanted = set(args.frame)
        entries = [e for e in entries if e["frame_id"] in wanted]
        missing = wanted - {e["frame_id"] for e in entries}
        if missing:
            raise DatasetError(f"frames not in {stacks_dir}: {sorted(missing)}")
    else:
        entries = entries[:args.limit]
    frames = load_dataset(args.dataset).by_id() if args.dataset else {}
    chain = load_chain(cfg.chain)
    out = Path(args.out)
    for entry in entries:
        fid = entry["frame_id"]
        stack, Kh = load_stack(stacks_dir / entry["stack"])
        fdir = out / _safe_name(fid)
        (fdir / "heatmaps").mkdir(parents=True, exist_ok=True)
        for j, name in enumerate(stack.joint_names):
            cv2.imwrite(str(fdir / "heatmaps" / f"uv_{j:02d}_{name}.png"), viz.heatmap_image(stack.uv_maps[j]))
            cv2.imwrite(str(fdir / "heatmaps" / f"uz_{j:02d}_{name}.png"), viz.heatmap_image(stack.uz_maps[j]))
        pred = decode(stack, Kh, cfg.peak_threshold, cfg.refine, cfg.uz_mode)
        peaks = locate_peaks(stack, cfg.refine, cfg.uz_mode)
        gt_uv = gt_mask = None
        parents = chain.parents if len(chain.joints) == stack.num_joints else None
        if fid in frames:
            fr = frames[fid]
            depth = resize_depth(fr.load_depth(), Kh.width, Kh.height)
            background = viz.depth_image(depth)
            (fdir / "inputs").mkdir(exist_ok=True)
            cv2.imwrite(str(fdir / "inputs" / "depth.png"), background)
            xyz = normalize_xyz(backproject(depth, Kh), NormalizationSpec())
            for c, img in zip("xyz", viz.xyz_channels(xyz)):
                cv2.imwrite(str(fdir / "inputs" / f"{c}.png"), img)
            pos = fr.joints.positions
            gt_mask = pos[:, 2] > 0
            gt_uv = np.zeros((len(pos), 2))
            gt_uv[gt_mask] = project(pos[gt_mask], Kh)
        else:
            background = viz.heatmap_image(stack.uv_maps.max(axis=0) if stack.num_joints else np.zeros(Kh.shape),
                                           "gray")
        img = viz.overlay(background, gt_uv, np.stack([peaks.u, peaks.v], axis=1), parents, gt_mask,
                          pred.visibility)
        cv2.imwrite(str(fdir / "overlay.png"), img)
    write_effective_config(cfg, out)
    print(f"rendered {len(entries)} frames into {out}")
    return 0


def cmd_convert(args, cfg: RunConfig) -> int:
    if not cfg.camera:
        raise ConfigError("convert needs --camera")
    path = convert_dataset(args.csv, cfg.camera, args.out, args.depth_root)
    print(f"wrote {path}")
    return 0


# -- argument parsing ---------------------------------------------------------------

def _common(p: argparse.ArgumentParser, out_required: bool = True) -> None:
    p.add_argument("--config", help="TOML run configuration; flags override its values")
    p.add_argument("--camera", help="camera intrinsics JSON (fx, fy, cx, cy, width, height)")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, help="worker threads")
    p.add_argument("--out", required=out_required, help="output directory")


def _codec_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--z-min", dest="z_min", type=float, help="lower end of the depth range (mm)")
    p.add_argument("--z-max", dest="z_max", type=float, help="upper end of the depth range (mm)")
    p.add_argument("--delta-z", dest="delta_z", type=float, help="depth slice thickness (mm)")
    p.add_argument("--sigma-m", dest="sigma_m", type=float, help="metric Gaussian stddev (mm)")
    p.add_argument("--shape", type=parse_shape, help="heatmap size HxW, default 192x384")
    p.add_argument("--peak-threshold", dest="peak_threshold", type=float,
                   help="minimum peak value for a joint to count as visible")
    p.add_argument("--refine", action="store_const", const=True, help="sub-cell peak refinement")
    p.add_argument("--uz-mode", dest="uz_mode", choices=("row_peak", "argmax"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spdh", description="SPDH heatmap toolkit: synthetic data, encoding, decoding, evaluation")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic depth dataset")
    _common(p)
    p.add_argument("--frames", type=int, help="frames per sequence")
    p.add_argument("--sequences", type=int)
    p.add_argument("--motions", type=int, help="pick-n-place motions per sequence")
    p.add_argument("--noise-sigma", dest="noise_sigma", type=float, help="depth noise stddev (mm)")
    p.add_argument("--dropout", type=float, help="per-pixel dropout probability")
    p.add_argument("--jitter", type=float, help="camera jitter sphere diameter (mm)")
    p.add_argument("--chain", help="robot chain JSON (default: bundled 16-joint robot)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("encode", help="encode dataset annotations as heatmap stacks")
    p.add_argument("dataset")
    _common(p)
    _codec_flags(p)
    p.add_argument("--format", choices=("raw", "png"))
    p.add_argument("--augment", action="store_true", help="apply the random rigid augmentation first")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="decode stacks into 3D joint predictions")
    p.add_argument("stacks", help="output directory of encode")
    _common(p)
    _codec_flags(p)
    p.add_argument("--mode", choices=("spdh", "baseline"), default="spdh",
                   help="baseline: 2D peak plus depth sampled from the depth map")
    p.add_argument("--dataset", help="dataset directory (needed by --mode baseline)")
    p.add_argument("--window", type=int, help="baseline depth sampling window (odd)")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="ADD and mAP of predictions against ground truth")
    _common(p)
    p.add_argument("--pred", required=True, help="predictions JSONL")
    p.add_argument("--baseline", help="second predictions JSONL to compare against")
    p.add_argument("--gt", required=True, help="dataset directory or annotation JSONL")
    p.add_argument("--thresholds", type=parse_thresholds, help="comma separated mm, default 40,60,80,100")
    p.add_argument("--map-mode", dest="map_mode", choices=("pooled", "per_frame"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("viz", help="heatmap, input and overlay images")
    p.add_argument("stacks", help="output directory of encode")
    _common(p)
    _codec_flags(p)
    p.add_argument("--dataset", help="dataset directory for depth inputs and ground truth markers")
    p.add_argument("--frame", action="append", help="frame id to render (repeatable)")
    p.add_argument("--limit", type=int, default=1, help="frames to render when --frame is not given")
    p.add_argument("--chain", help="robot chain JSON for skeleton lines")
    p.set_defaults(func=cmd_viz)

    p = sub.add_parser("convert", help="build a dataset from depth images and a joints CSV")
    _common(p)
    p.add_argument("--csv", required=True)
    p.add_argument("--depth-root", dest="depth_root", help="directory the CSV depth paths are relative to")
    p.set_defaults(func=cmd_convert)
    return parser


def _setup_logging() -> None:
    level = os.environ.get("SPDH_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        return args.func(args, cfg)
    except (ConfigError, DatasetError, ValueError, OSError) as exc:
        print(f"spdh {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
