"""SPDH heatmaps: encode 3D joints, decode predictions.

Every joint gets two maps. The ``uv`` map lives on the image plane and holds
a Gaussian whose pixel spread shrinks with distance (``sigma_m * fx / Z``).
The ``uz`` map has image columns ``u`` on its horizontal axis and quantized
depth slices on its vertical axis; each cell is lifted back into the metric XZ
plane and scored by its distance to the joint, ignoring Y.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .geometry import PinholeIntrinsics
from .joints import JointSet3D

DEFAULT_SIGMA_M = 50.0
RAW_STACK_MAGIC = b"SPDHSTCK"
# Rows whose peak is below this fraction of the map maximum are never refined;
# their log-values are too close to underflow to fit reliably.
_ROW_FIT_FLOOR = 1e-6


@dataclass(frozen=True)
class ZQuantization:
    z_min: float
    z_max: float
    delta_z: float
    num_slices: int = field(init=False)

    def __post_init__(self):
        if not self.delta_z > 0:
            raise ValueError(f"delta_z must be positive, got {self.delta_z}")
        if not self.z_min < self.z_max:
            raise ValueError(f"z_min ({self.z_min}) must be below z_max ({self.z_max})")
        n = int(round((self.z_max - self.z_min) / self.delta_z))
        if n < 1:
            raise ValueError("depth range holds less than one slice")
        object.__setattr__(self, "num_slices", n)

    @property
    def centers(self) -> np.ndarray:
        return self.z_min + self.delta_z * np.arange(self.num_slices)

    def slice_center(self, i):
        return self.z_min + np.asarray(i) * self.delta_z

    def slice_of(self, z):
        """Nearest slice index for depth ``z``, clamped to the valid range."""
        i = np.rint((np.asarray(z, dtype=np.float64) - self.z_min) / self.delta_z)
        i = np.clip(i, 0, self.num_slices - 1).astype(np.int64)
        return int(i) if i.ndim == 0 else i

    def contains(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        return (z >= self.z_min) & (z <= self.z_max)

    def to_dict(self) -> dict:
        return {"z_min": self.z_min, "z_max": self.z_max, "delta_z": self.delta_z, "num_slices": self.num_slices}

    @classmethod
    def from_dict(cls, d: dict) -> "ZQuantization":
        q = cls(float(d["z_min"]), float(d["z_max"]), float(d["delta_z"]))
        if "num_slices" in d and int(d["num_slices"]) != q.num_slices:
            raise ValueError(f"num_slices {d['num_slices']} inconsistent with range (expected {q.num_slices})")
        return q


def make_quantization(z_min: float, z_max: float, delta_z: float) -> ZQuantization:
    return ZQuantization(float(z_min), float(z_max), float(delta_z))


DEFAULT_QUANTIZATION = make_quantization(500.0, 3380.0, 15.0)


@dataclass(frozen=True)
class SpdhStack:
    """``n`` uv maps ``(h, w)`` and ``n`` uz maps ``(num_slices, w)``."""

    uv_maps: np.ndarray
    uz_maps: np.ndarray
    quant: ZQuantization
    sigma_m: float
    joint_names: tuple[str, ...]
    normalization: str = "peak"

    def __post_init__(self):
        uv = np.asarray(self.uv_maps)
        uz = np.asarray(self.uz_maps)
        if uv.ndim != 3 or uz.ndim != 3 or uv.shape[0] != uz.shape[0]:
            raise ValueError(f"bad stack shapes uv={uv.shape} uz={uz.shape}")
        if uz.shape[1] != self.quant.num_slices:
            raise ValueError(f"uz height {uz.shape[1]} != number of slices {self.quant.num_slices}")
        if uv.shape[2] != uz.shape[2]:
            raise ValueError(f"uv width {uv.shape[2]} != uz width {uz.shape[2]}")
        if len(self.joint_names) != uv.shape[0]:
            raise ValueError(f"{len(self.joint_names)} names for {uv.shape[0]} joints")
        for name, maps in (("uv", uv), ("uz", uz)):
            if not np.all(np.isfinite(maps)) or (maps.size and maps.min() < 0):
                raise ValueError(f"{name} maps must be finite and non-negative")
        object.__setattr__(self, "uv_maps", uv)
        object.__setattr__(self, "uz_maps", uz)
        object.__setattr__(self, "joint_names", tuple(self.joint_names))

    @property
    def num_joints(self) -> int:
        return self.uv_maps.shape[0]

    @property
    def uv_shape(self) -> tuple[int, int]:
        return self.uv_maps.shape[1], self.uv_maps.shape[2]

    def as_tensor(self) -> np.ndarray:
        """The ``2n x h x w`` network target (uv maps first); needs ``num_slices == h``."""
        if self.uz_maps.shape[1] != self.uv_maps.shape[1]:
            raise ValueError("uv and uz heights differ; choose the depth range so that num_slices == h")
        return np.concatenate([self.uv_maps, self.uz_maps], axis=0)

    def scaled(self, uv_factors, uz_factors) -> "SpdhStack":
        uv_f = np.broadcast_to(np.asarray(uv_factors, float), (self.num_joints,))
        uz_f = np.broadcast_to(np.asarray(uz_factors, float), (self.num_joints,))
        return SpdhStack(self.uv_maps * uv_f[:, None, None], self.uz_maps * uz_f[:, None, None],
                         self.quant, self.sigma_m, self.joint_names, self.normalization)


def perspective_sigma(sigma_m: float, focal: float, z):
    """Pixel stddev of a metric Gaussian of stddev ``sigma_m`` at depth ``z``."""
    return sigma_m * focal / np.asarray(z, dtype=np.float64)


def _check_joints(joints: JointSet3D) -> np.ndarray:
    pos = joints.positions
    if not np.all(np.isfinite(pos)):
        raise ValueError("joint coordinates must be finite")
    return pos


def encodable_mask(joints: JointSet3D, K: PinholeIntrinsics, quant: ZQuantization) -> np.ndarray:
    """Joints inside the depth range whose projection falls on a pixel of ``K``'s grid."""
    pos = _check_joints(joints)
    ok = quant.contains(pos[:, 2]) & (pos[:, 2] > 0)
    z = np.where(ok, pos[:, 2], 1.0)
    u = K.fx * pos[:, 0] / z + K.cx
    v = K.fy * pos[:, 1] / z + K.cy
    ok &= (u >= -0.5) & (u < K.width - 0.5) & (v >= -0.5) & (v < K.height - 0.5)
    return ok


def _check_shape(K: PinholeIntrinsics, shape) -> tuple[int, int]:
    h, w = (K.height, K.width) if shape is None else (int(shape[0]), int(shape[1]))
    if (h, w) != K.shape:
        raise ValueError(f"heatmap shape {h}x{w} does not match intrinsics {K.height}x{K.width}")
    return h, w


def _normalize(maps: np.ndarray, ok: np.ndarray, sigma, normalization: str) -> np.ndarray:
    if normalization == "peak":
        peak = maps.reshape(maps.shape[0], -1).max(axis=1)
        maps = maps / np.where(peak > 0, peak, 1.0)[:, None, None]
    elif normalization == "pdf":
        maps = maps / (2 * np.pi * np.asarray(sigma, float).reshape(-1, 1, 1))
    else:
        raise ValueError(f"unknown normalization {normalization!r}")
    maps[~ok] = 0.0
    return maps


def encode_uv(joints: JointSet3D, K: PinholeIntrinsics, sigma_m: float = DEFAULT_SIGMA_M, shape=None,
              quant: ZQuantization = DEFAULT_QUANTIZATION, normalization: str = "peak"):
    """Perspective-aware uv heatmaps.

    Returns ``(maps, sigmas, visible)``: maps ``(n, h, w)``, the per-joint pixel
    stddev ``sigma_m * fx / Z`` (NaN for joints that cannot be encoded) and the
    encodability flags. Non-encodable joints get all-zero maps.
    """
    if not sigma_m > 0:
        raise ValueError(f"sigma_m must be positive, got {sigma_m}")
    h, w = _check_shape(K, shape)
    ok = encodable_mask(joints, K, quant)
    pos = joints.positions
    z = np.where(ok, pos[:, 2], np.nan)
    sigmas = perspective_sigma(sigma_m, K.fx, z)
    s = np.where(ok, sigmas, 1.0)
    zz = np.where(ok, pos[:, 2], 1.0)
    pu = K.fx * pos[:, 0] / zz + K.cx
    pv = K.fy * pos[:, 1] / zz + K.cy
    gx = np.exp(-((np.arange(w)[None, :] - pu[:, None]) ** 2) / (2 * s[:, None] ** 2))
    gy = np.exp(-((np.arange(h)[None, :] - pv[:, None]) ** 2) / (2 * s[:, None] ** 2))
    maps = gy[:, :, None] * gx[:, None, :]
    return _normalize(maps, ok, s, normalization), sigmas, ok


def encode_uz(joints: JointSet3D, K: PinholeIntrinsics, sigma_m: float = DEFAULT_SIGMA_M,
              quant: ZQuantization = DEFAULT_QUANTIZATION, width: int | None = None,
              normalization: str = "peak"):
    """uz heatmaps ``(n, num_slices, w)`` and encodability flags.

    Cell ``(slice i, column u)`` is the metric point ``((u - cx) * Zi / fx, Zi)``
    and holds a Gaussian of its XZ distance to the joint.
    """
    if not sigma_m > 0:
        raise ValueError(f"sigma_m must be positive, got {sigma_m}")
    w = K.width if width is None else int(width)
    if w != K.width:
        raise ValueError(f"uz width {w} does not match intrinsics width {K.width}")
    ok = encodable_mask(joints, K, quant)
    pos = joints.positions
    zc = quant.centers
    cell_x = (np.arange(w)[None, :] - K.cx) * zc[:, None] / K.fx
    dx = cell_x[None, :, :] - pos[:, 0, None, None]
    dz = zc[None, :, None] - pos[:, 2, None, None]
    maps = np.exp(-(dx ** 2 + dz ** 2) / (2 * sigma_m ** 2))
    return _normalize(maps, ok, np.full(len(pos), sigma_m), normalization), ok


def encode(joints: JointSet3D, K: PinholeIntrinsics, sigma_m: float = DEFAULT_SIGMA_M,
           quant: ZQuantization = DEFAULT_QUANTIZATION, shape=None, normalization: str = "peak") -> SpdhStack:
    uv, _, _ = encode_uv(joints, K, sigma_m, shape, quant, normalization)
    uz, _ = encode_uz(joints, K, sigma_m, quant, K.width, normalization)
    return SpdhStack(uv, uz, quant, float(sigma_m), joints.joint_names, normalization)


@dataclass(frozen=True)
class PeakEstimate:
    """Per-joint peak locations found in a stack (heatmap pixel units)."""

    u: np.ndarray
    v: np.ndarray
    slice: np.ndarray
    uv_score: np.ndarray
    uz_score: np.ndarray
    clamped: np.ndarray


def _parabola(lm, l0, lp, cap: float):
    """Offset (capped to ``[-cap, cap]``) and value of the maximum of the
    parabola through (-1, lm), (0, l0), (1, lp); offset 0 where not concave."""
    curv = lm - 2 * l0 + lp
    concave = curv < 0
    off = np.where(concave, (lm - lp) / (2 * np.where(concave, curv, -1.0)), 0.0)
    off = np.clip(off, -cap, cap)
    val = l0 + 0.5 * (lp - lm) * off + 0.5 * curv * off ** 2
    return off, np.where(concave, val, l0), concave


def _log_triplet(a, b, c):
    """Log-values where all three samples are positive (a sampled Gaussian is an
    exact parabola in log space); raw values otherwise."""
    pos = (a > 0) & (b > 0) & (c > 0)
    with np.errstate(divide="ignore"):
        la = np.where(pos, np.log(np.where(pos, a, 1.0)), a)
        lb = np.where(pos, np.log(np.where(pos, b, 1.0)), b)
        lc = np.where(pos, np.log(np.where(pos, c, 1.0)), c)
    return la, lb, lc


def _refine_axis(line: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Sub-cell offset of the peak at index ``k`` along the last axis of ``line``.

    Peaks on the border are fitted through the nearest interior triple.
    """
    size = line.shape[-1]
    if size < 3:
        return np.zeros(len(k))
    kk = np.clip(k, 1, size - 2)
    idx = np.arange(len(k))
    la, lb, lc = _log_triplet(line[idx, kk - 1], line[idx, kk], line[idx, kk + 1])
    off, _, concave = _parabola(la, lb, lc, cap=1.5)
    return np.where(concave, kk + off - k, 0.0)


def _uz_row_scores(uz: np.ndarray) -> np.ndarray:
    """Per-row log peak along u, refined by a log-parabola through the row maximum.

    For a Gaussian in the XZ plane the refined row peak depends only on the
    slice's depth offset from the joint, so the best row is the nearest slice
    regardless of how the column grid happens to fall.
    """
    n, rows, w = uz.shape
    k = uz.argmax(axis=2)
    row_max = np.take_along_axis(uz, k[..., None], axis=2)[..., 0]
    peak = row_max.max(axis=1, keepdims=True)
    with np.errstate(divide="ignore"):
        scores = np.log(row_max)
    if w < 3:
        return scores
    kk = np.clip(k, 1, w - 2)
    a = np.take_along_axis(uz, (kk - 1)[..., None], axis=2)[..., 0]
    b = np.take_along_axis(uz, kk[..., None], axis=2)[..., 0]
    c = np.take_along_axis(uz, (kk + 1)[..., None], axis=2)[..., 0]
    fit = (a > 0) & (b > 0) & (c > 0) & (row_max >= _ROW_FIT_FLOOR * peak)
    la, lb, lc = _log_triplet(np.where(fit, a, 1.0), np.where(fit, b, 1.0), np.where(fit, c, 1.0))
    _, val, concave = _parabola(la, lb, lc, cap=8.0)
    scores = np.where(fit & concave, np.maximum(val, scores), scores)
    scores[row_max < _ROW_FIT_FLOOR * peak] = -np.inf
    return scores


def locate_peaks(stack: SpdhStack, refine: bool = False, uz_mode: str = "row_peak") -> PeakEstimate:
    """Find the uv peak and the depth slice of every joint.

    ``uz_mode="row_peak"`` (default) picks the slice whose row has the highest
    along-u peak; ``"argmax"`` takes the row of the plain 2D argmax. With
    ``refine`` the uv peak and the slice index get sub-cell parabolic offsets.
    Ties go to the lowest linear index.
    """
    uv = np.asarray(stack.uv_maps, dtype=np.float64)
    uz = np.asarray(stack.uz_maps, dtype=np.float64)
    n, h, w = uv.shape
    rows = uz.shape[1]
    flat = uv.reshape(n, -1).argmax(axis=1)
    vi, ui = np.divmod(flat, w)
    uv_score = uv.reshape(n, -1)[np.arange(n), flat]
    uz_score = uz.reshape(n, -1).max(axis=1)

    if uz_mode == "row_peak":
        scores = _uz_row_scores(uz)
        zi = scores.argmax(axis=1)
        zi[~np.isfinite(scores[np.arange(n), zi])] = 0
    elif uz_mode == "argmax":
        zi = uz.reshape(n, -1).argmax(axis=1) // w
        with np.errstate(divide="ignore"):
            scores = np.log(uz.max(axis=2))
    else:
        raise ValueError(f"unknown uz_mode {uz_mode!r}")

    u = ui.astype(np.float64)
    v = vi.astype(np.float64)
    z = zi.astype(np.float64)
    if refine:
        u += _refine_axis(uv[np.arange(n), vi, :], ui)
        v += _refine_axis(uv[np.arange(n), :, ui], vi)
        if rows >= 3:
            idx = np.arange(n)
            zk = np.clip(zi, 1, rows - 2)
            sm, s0, sp = scores[idx, zk - 1], scores[idx, zk], scores[idx, zk + 1]
            good = np.isfinite(sm) & np.isfinite(s0) & np.isfinite(sp)
            off, _, concave = _parabola(np.where(good, sm, 0.0), np.where(good, s0, 0.0),
                                        np.where(good, sp, 0.0), cap=1.5)
            z += np.where(good & concave, zk + off - zi, 0.0)
    cu, cv, cz = np.clip(u, 0, w - 1), np.clip(v, 0, h - 1), np.clip(z, 0, rows - 1)
    clamped = (cu != u) | (cv != v) | (cz != z)
    return PeakEstimate(cu, cv, cz, uv_score, uz_score, clamped)


def decode(stack: SpdhStack, K: PinholeIntrinsics, peak_threshold: float = 0.1, refine: bool = False,
           uz_mode: str = "row_peak") -> JointSet3D:
    """Metric 3D joints from a (predicted) stack.

    Depth is the slice center ``z_min + slice * delta_z``; u and v are lifted
    through ``K`` at that depth. Joints whose uv or uz peak is below
    ``peak_threshold`` come back with ``visible=False``.
    """
    if stack.uv_shape != K.shape:
        raise ValueError(f"stack uv maps are {stack.uv_shape} but intrinsics are {K.shape}")
    peaks = locate_peaks(stack, refine=refine, uz_mode=uz_mode)
    z = stack.quant.z_min + peaks.slice * stack.quant.delta_z
    pos = np.stack([(peaks.u - K.cx) * z / K.fx, (peaks.v - K.cy) * z / K.fy, z], axis=1)
    visible = (peaks.uv_score >= peak_threshold) & (peaks.uz_score >= peak_threshold)
    return JointSet3D(pos, visible, stack.joint_names)


# -- serialization -----------------------------------------------------------

def _sidecar(stack: SpdhStack, fmt: str, K: PinholeIntrinsics | None) -> dict:
    n, h, w = stack.uv_maps.shape
    return {
        "format": fmt,
        "n": n,
        "h": h,
        "w": w,
        "num_slices": stack.quant.num_slices,
        "quant": stack.quant.to_dict(),
        "sigma_m": stack.sigma_m,
        "normalization": stack.normalization,
        "joint_names": list(stack.joint_names),
        "intrinsics": None if K is None else K.to_dict(),
    }


def _tile(maps: np.ndarray) -> np.ndarray:
    """Pages stacked vertically: ``(n, r, w) -> (n * r, w)``."""
    return maps.reshape(-1, maps.shape[-1])


def save_stack(stack: SpdhStack, stem, K: PinholeIntrinsics | None = None, fmt: str = "raw") -> list[Path]:
    """Write ``stem.json`` plus ``stem.spdh`` (raw float32) or ``stem_uv.png``/``stem_uz.png``.

    PNG pages are the per-joint maps stacked vertically, values ``round(v * 65535)``.
    """
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    meta = _sidecar(stack, fmt, K)
    n, h, w = stack.uv_maps.shape
    if fmt == "raw":
        paths = [stem.with_suffix(".spdh")]
        with open(paths[0], "wb") as f:
            f.write(RAW_STACK_MAGIC + struct.pack("<IIII", n, h, w, stack.quant.num_slices))
            f.write(np.ascontiguousarray(stack.uv_maps, dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(stack.uz_maps, dtype="<f4").tobytes())
    elif fmt == "png":
        paths = [stem.parent / f"{stem.name}_uv.png", stem.parent / f"{stem.name}_uz.png"]
        for path, maps in zip(paths, (stack.uv_maps, stack.uz_maps)):
            if maps.size and maps.max() > 1.0:
                raise ValueError("PNG stacks hold values in [0, 1]; use the raw format")
            img = np.rint(_tile(maps) * 65535).astype(np.uint16)
            if not cv2.imwrite(str(path), img):
                raise OSError(f"could not write {path}")
    else:
        raise ValueError(f"unknown stack format {fmt!r}")
    side = stem.with_suffix(".json")
    side.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return [*paths, side]


def load_stack(stem) -> tuple[SpdhStack, PinholeIntrinsics | None]:
    stem = Path(stem)
    side = stem.with_suffix(".json")
    if not side.exists():
        raise FileNotFoundError(f"missing stack sidecar {side}")
    meta = json.loads(side.read_text())
    quant = ZQuantization.from_dict(meta["quant"])
    n, h, w, ns = meta["n"], meta["h"], meta["w"], meta["num_slices"]
    if meta["format"] == "raw":
        path = stem.with_suffix(".spdh")
        buf = path.read_bytes()
        if buf[:8] != RAW_STACK_MAGIC:
            raise ValueError(f"{path}: bad magic {buf[:8]!r}")
        hdr = struct.unpack("<IIII", buf[8:24])
        if hdr != (n, h, w, ns):
            raise ValueError(f"{path}: header {hdr} disagrees with sidecar {(n, h, w, ns)}")
        data = np.frombuffer(buf, dtype="<f4", offset=24)
        if data.size != n * h * w + n * ns * w:
            raise ValueError(f"{path}: truncated payload")
        uv = data[: n * h * w].reshape(n, h, w).astype(np.float64)
        uz = data[n * h * w:].reshape(n, ns, w).astype(np.float64)
    elif meta["format"] == "png":
        pages = []
        for suffix, rows in (("_uv.png", h), ("_uz.png", ns)):
            path = stem.parent / f"{stem.name}{suffix}"
            img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
            if img is None:
                raise FileNotFoundError(f"could not read {path}")
            if img.shape != (n * rows, w):
                raise ValueError(f"{path}: shape {img.shape}, expected {(n * rows, w)}")
            pages.append(img.astype(np.float64).reshape(n, rows, w) / 65535.0)
        uv, uz = pages
    else:
        raise ValueError(f"unknown stack format {meta['format']!r}")
    K = None if meta.get("intrinsics") is None else PinholeIntrinsics.from_dict(meta["intrinsics"])
    stack = SpdhStack(uv, uz, quant, float(meta["sigma_m"]), tuple(meta["joint_names"]),
                      meta.get("normalization", "peak"))
    return stack, K
