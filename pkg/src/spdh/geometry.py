"""Pinhole camera model, depth containers and depth -> XYZ conversion.

Conventions: pixel ``(u, v)`` has its center at integer coordinates, ``u``
indexes columns and ``v`` rows. Depth is Z-depth (distance to the plane through
the point parallel to the image plane), in millimeters. A depth of 0 means "no
return" and marks the pixel invalid everywhere in the package.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

DEFAULT_MAX_RANGE = 8000.0
RAW_DEPTH_MAGIC = b"SPDHDPTH"


class BehindCameraError(ValueError):
    """Raised when projecting a point with Z <= 0."""


@dataclass(frozen=True)
class PinholeIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if int(self.width) != self.width or int(self.height) != self.height or self.width < 1 or self.height < 1:
            raise ValueError(f"invalid sensor size {self.width}x{self.height}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height}")
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    @property
    def shape(self) -> tuple[int, int]:
        """``(height, width)``, numpy order."""
        return self.height, self.width

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def scaled(self, new_width: int, new_height: int) -> "PinholeIntrinsics":
        """Intrinsics for the same camera resampled to ``new_width x new_height``."""
        sx = new_width / self.width
        sy = new_height / self.height
        return PinholeIntrinsics(self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy, new_width, new_height)

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy, "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> "PinholeIntrinsics":
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]), int(d["width"]), int(d["height"]))


# Typical 512x424 time-of-flight values; a stand-in, always overridable from a camera JSON.
DEFAULT_INTRINSICS = PinholeIntrinsics(365.0, 365.0, 256.0, 212.0, 512, 424)


def load_intrinsics(path) -> PinholeIntrinsics:
    with open(path) as f:
        return PinholeIntrinsics.from_dict(json.load(f))


def save_intrinsics(K: PinholeIntrinsics, path) -> None:
    with open(path, "w") as f:
        json.dump(K.to_dict(), f, indent=2)
        f.write("\n")


def scale_intrinsics(K: PinholeIntrinsics, new_width: int, new_height: int) -> PinholeIntrinsics:
    return K.scaled(new_width, new_height)


@dataclass(frozen=True)
class DepthImage:
    """Row-major Z-depth grid in millimeters, values in ``[0, max_range]``."""

    data: np.ndarray
    max_range: float = DEFAULT_MAX_RANGE

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ValueError(f"depth must be 2D, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("depth contains non-finite values")
        if data.size and (data.min() < 0 or data.max() > self.max_range):
            raise ValueError(f"depth values must lie in [0, {self.max_range}]")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def valid(self) -> np.ndarray:
        return self.data > 0


@dataclass(frozen=True)
class XyzImage:
    """Per-pixel camera-frame coordinates, ``(h, w, 3)`` mm, plus validity mask."""

    data: np.ndarray
    mask: np.ndarray

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class NormalizationSpec:
    lower: tuple[float, float, float] = (-2000.0, -2000.0, 500.0)
    upper: tuple[float, float, float] = (2000.0, 2000.0, 3380.0)
    mode: str = "fixed"

    def __post_init__(self):
        lo, hi = np.asarray(self.lower, float), np.asarray(self.upper, float)
        if lo.shape != (3,) or hi.shape != (3,):
            raise ValueError("normalization bounds need one value per axis")
        if np.any(lo >= hi):
            raise ValueError(f"lower bounds {tuple(lo)} must be below upper bounds {tuple(hi)}")
        if self.mode not in ("fixed", "minmax"):
            raise ValueError(f"unknown normalization mode {self.mode!r}")


def _pixel_grid(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    v, u = np.mgrid[0:height, 0:width]
    return u.astype(np.float64), v.astype(np.float64)


def _check_dims(depth: DepthImage, K: PinholeIntrinsics) -> None:
    if (depth.height, depth.width) != K.shape:
        raise ValueError(f"depth is {depth.width}x{depth.height} but intrinsics are {K.width}x{K.height}")


def backproject(depth: DepthImage, K: PinholeIntrinsics) -> XyzImage:
    _check_dims(depth, K)
    u, v = _pixel_grid(depth.height, depth.width)
    d = depth.data
    mask = d > 0
    xyz = np.stack([(u - K.cx) * d / K.fx, (v - K.cy) * d / K.fy, d], axis=-1)
    xyz[~mask] = 0.0
    return XyzImage(xyz, mask)


def project(points, K: PinholeIntrinsics) -> np.ndarray:
    """Project ``(..., 3)`` camera-frame points to subpixel ``(..., 2)`` ``(u, v)``.

    Results may fall outside the image; callers check bounds.
    """
    p = np.asarray(points, dtype=np.float64)
    if p.shape[-1] != 3:
        raise ValueError(f"expected 3-vectors, got shape {p.shape}")
    z = p[..., 2]
    if np.any(z <= 0):
        raise BehindCameraError("cannot project points with Z <= 0")
    return np.stack([K.fx * p[..., 0] / z + K.cx, K.fy * p[..., 1] / z + K.cy], axis=-1)


def pixel_to_point(u, v, z, K: PinholeIntrinsics) -> np.ndarray:
    """Inverse of :func:`project` for given Z-depth; broadcasts."""
    u, v, z = np.broadcast_arrays(np.asarray(u, float), np.asarray(v, float), np.asarray(z, float))
    return np.stack([(u - K.cx) * z / K.fx, (v - K.cy) * z / K.fy, z], axis=-1)


def normalize_xyz(img: XyzImage, spec: NormalizationSpec = NormalizationSpec()) -> np.ndarray:
    """Map each channel affinely into ``[0, 1]``; invalid pixels become 0."""
    if spec.mode == "fixed":
        lo = np.asarray(spec.lower, float)
        hi = np.asarray(spec.upper, float)
    else:
        vals = img.data[img.mask]
        if vals.size == 0:
            return np.zeros_like(img.data)
        lo, hi = vals.min(axis=0), vals.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    out = np.clip((img.data - lo) / span, 0.0, 1.0)
    out[~img.mask] = 0.0
    return out


def nearest_indices(src: int, dst: int) -> np.ndarray:
    """Source index sampled by each of ``dst`` output cells (center alignment)."""
    idx = np.floor((np.arange(dst) + 0.5) * src / dst).astype(np.intp)
    return np.minimum(idx, src - 1)


def resize_depth(depth: DepthImage, new_w: int, new_h: int) -> DepthImage:
    """Nearest-neighbor resample; never interpolates depth across edges."""
    if new_w < 1 or new_h < 1:
        raise ValueError(f"invalid target size {new_w}x{new_h}")
    if (new_h, new_w) == depth.data.shape:
        return depth
    rows = nearest_indices(depth.height, new_h)
    cols = nearest_indices(depth.width, new_w)
    return DepthImage(depth.data[np.ix_(rows, cols)], depth.max_range)


def write_depth_png(path, depth: DepthImage) -> None:
    """16-bit grayscale PNG, 1 unit = 1 mm (values rounded)."""
    mm = np.clip(np.rint(depth.data), 0, 65535).astype(np.uint16)
    if not cv2.imwrite(str(path), mm):
        raise OSError(f"could not write {path}")


def read_depth_png(path, max_range: float = DEFAULT_MAX_RANGE) -> DepthImage:
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise OSError(f"could not read depth image {path}")
    if img.dtype != np.uint16 or img.ndim != 2:
        raise ValueError(f"{path}: expected a 16-bit single-channel PNG, got {img.dtype} {img.shape}")
    data = img.astype(np.float64)
    data[data > max_range] = 0.0
    return DepthImage(data, max_range)


def write_depth_raw(path, depth: DepthImage) -> None:
    h, w = depth.data.shape
    with open(path, "wb") as f:
        f.write(RAW_DEPTH_MAGIC + struct.pack("<II", w, h))
        f.write(depth.data.astype("<f4").tobytes())


def read_depth_raw(path, max_range: float = DEFAULT_MAX_RANGE) -> DepthImage:
    buf = Path(path).read_bytes()
    if buf[:8] != RAW_DEPTH_MAGIC:
        raise ValueError(f"{path}: bad magic {buf[:8]!r}")
    w, h = struct.unpack("<II", buf[8:16])
    if len(buf) != 16 + 4 * w * h:
        raise ValueError(f"{path}: expected {w}x{h} floats, file has {len(buf) - 16} payload bytes")
    data = np.frombuffer(buf, dtype="<f4", offset=16).reshape(h, w).astype(np.float64)
    data[~np.isfinite(data) | (data > max_range) | (data < 0)] = 0.0
    return DepthImage(data, max_range)


def read_depth(path, max_range: float = DEFAULT_MAX_RANGE) -> DepthImage:
    """Dispatch on extension: ``.png`` or raw float container."""
    if str(path).lower().endswith(".png"):
        return read_depth_png(path, max_range)
    return read_depth_raw(path, max_range)
