"""Images for inspection: depth and XYZ renderings, heatmaps, joint overlays.

All functions return 8-bit BGR (or gray) arrays ready for ``cv2.imwrite``.
"""
from __future__ import annotations

import numpy as np
import cv2
from matplotlib import colormaps

from .geometry import DepthImage

GT_COLOR = (0, 255, 0)      # BGR green
PRED_COLOR = (0, 0, 255)    # BGR red


def apply_colormap(values: np.ndarray, cmap: str = "viridis", mask: np.ndarray | None = None) -> np.ndarray:
    """Map values in ``[0, 1]`` through a matplotlib colormap; masked-out pixels are black."""
    rgba = colormaps[cmap](np.clip(values, 0.0, 1.0))
    bgr = np.rint(rgba[..., 2::-1] * 255).astype(np.uint8)
    if mask is not None:
        bgr[~mask] = 0
    return bgr


def depth_image(depth: DepthImage, near: float | None = None, far: float | None = None) -> np.ndarray:
    """Colored depth, invalid pixels black. The range defaults to the valid min/max."""
    d = depth.data
    valid = depth.valid
    if not valid.any():
        return np.zeros((*d.shape, 3), np.uint8)
    near = d[valid].min() if near is None else near
    far = d[valid].max() if far is None else far
    span = far - near if far > near else 1.0
    return apply_colormap((d - near) / span, "turbo", valid)


def xyz_channels(xyz_norm: np.ndarray) -> list[np.ndarray]:
    """Three gray images from a normalized ``(h, w, 3)`` XYZ image."""
    return [np.rint(np.clip(xyz_norm[..., c], 0, 1) * 255).astype(np.uint8) for c in range(3)]


def heatmap_image(hm: np.ndarray, cmap: str = "inferno") -> np.ndarray:
    """Colored heatmap scaled by its own maximum; an all-zero map stays uniform."""
    hm = np.asarray(hm, dtype=np.float64)
    peak = hm.max() if hm.size else 0.0
    return apply_colormap(hm / peak if peak > 0 else np.zeros_like(hm), cmap)


def draw_joints(img: np.ndarray, uv: np.ndarray, color, parents=None, marker: str = "circle",
                mask=None) -> np.ndarray:
    """Draw joint markers (and parent links) at rounded pixel positions."""
    out = img.copy()
    uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
    mask = np.ones(len(uv), bool) if mask is None else np.asarray(mask, bool)
    pts = [tuple(int(c) for c in np.rint(p)) for p in uv]
    if parents is not None:
        for i, p in enumerate(parents):
            if p >= 0 and mask[i] and mask[p]:
                cv2.line(out, pts[p], pts[i], color, 1, cv2.LINE_8)
    for i, p in enumerate(pts):
        if not mask[i]:
            continue
        if marker == "circle":
            cv2.circle(out, p, 3, color, -1, cv2.LINE_8)
        else:
            cv2.drawMarker(out, p, color, cv2.MARKER_TILTED_CROSS, 7, 1, cv2.LINE_8)
    return out


def overlay(background: np.ndarray, gt_uv=None, pred_uv=None, parents=None, gt_mask=None,
            pred_mask=None) -> np.ndarray:
    """Ground truth as filled green dots, predictions as red crosses."""
    img = background if background.ndim == 3 else cv2.cvtColor(background, cv2.COLOR_GRAY2BGR)
    if gt_uv is not None:
        img = draw_joints(img, gt_uv, GT_COLOR, parents, "circle", gt_mask)
    if pred_uv is not None:
        img = draw_joints(img, pred_uv, PRED_COLOR, None, "cross", pred_mask)
    return img
