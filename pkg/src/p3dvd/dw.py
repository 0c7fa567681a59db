"""Double-window (DW) image synthesis and the coordinate maps between frames.

Frames: original (full-resolution sensor image), CW (native-resolution crop
around the window center), GW (row-cropped, downscaled full frame) and DW
(CW stacked on top of GW).  Point maps use integer pixel-index coordinates;
a GW pixel ``(i, j)`` covers original block ``[s*i, s*i+s) x [s*j+top, ...)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

CW = "CW"
GW = "GW"


class LayoutError(ValueError):
    pass


@dataclass(frozen=True)
class WindowSpec:
    center: Tuple[float, float] = (1840.0, 1248.0)
    cw_size: Tuple[int, int] = (960, 384)  # (width, height)
    crop_top: int = 52
    crop_bottom: int = 60
    gw_scale: int = 4
    orig_size: Tuple[int, int] = (3840, 2160)  # (width, height)

    def with_center(self, center) -> "WindowSpec":
        return WindowSpec((float(center[0]), float(center[1])), self.cw_size, self.crop_top,
                          self.crop_bottom, self.gw_scale, self.orig_size)

    def cw_origin(self) -> Tuple[int, int]:
        cx, cy = self.center
        w, h = self.cw_size
        return (int(np.floor(cx + 0.5)) - w // 2, int(np.floor(cy + 0.5)) - h // 2)

    def check(self):
        """Raise LayoutError naming the first violated constraint."""
        W, H = self.orig_size
        w, h = self.cw_size
        s = self.gw_scale
        if w <= 0 or h <= 0 or w % 2 or h % 2:
            raise LayoutError(f"cw_size {self.cw_size} must be positive and even")
        if s <= 0:
            raise LayoutError("gw_scale must be positive")
        if self.crop_top < 0 or self.crop_bottom < 0:
            raise LayoutError("crop rows must be non-negative")
        gh = H - self.crop_top - self.crop_bottom
        if gh <= 0 or gh % s:
            raise LayoutError(f"cropped height {gh} not divisible by gw_scale {s}")
        if W % s:
            raise LayoutError(f"original width {W} not divisible by gw_scale {s}")
        if W // s != w:
            raise LayoutError(f"GW width {W // s} differs from CW width {w}")
        x0, y0 = self.cw_origin()
        if x0 < 0 or y0 < 0 or x0 + w > W or y0 + h > H:
            raise LayoutError(f"CW rectangle at {(x0, y0)} size {self.cw_size} leaves the image")


@dataclass(frozen=True)
class DwLayout:
    spec: WindowSpec
    cw_origin: Tuple[int, int] = field(init=False)
    gw_size: Tuple[int, int] = field(init=False)
    dw_size: Tuple[int, int] = field(init=False)

    def __post_init__(self):
        self.spec.check()
        W, H = self.spec.orig_size
        s = self.spec.gw_scale
        gw = (W // s, (H - self.spec.crop_top - self.spec.crop_bottom) // s)
        object.__setattr__(self, "cw_origin", self.spec.cw_origin())
        object.__setattr__(self, "gw_size", gw)
        object.__setattr__(self, "dw_size", (self.spec.cw_size[0], self.spec.cw_size[1] + gw[1]))

    @property
    def gw_offset(self) -> int:
        return self.spec.cw_size[1]

    @property
    def cw_rect(self) -> Tuple[int, int, int, int]:
        """(x0, y0, x1, y1) of the CW in original pixels, half-open."""
        x0, y0 = self.cw_origin
        return (x0, y0, x0 + self.spec.cw_size[0], y0 + self.spec.cw_size[1])


def area_downsample(img: np.ndarray, s: int) -> np.ndarray:
    h, w = img.shape[:2]
    blocks = img.reshape(h // s, s, w // s, s, *img.shape[2:]).astype(np.float64)
    out = blocks.mean(axis=(1, 3))
    if np.issubdtype(img.dtype, np.integer):
        out = np.clip(np.rint(out), np.iinfo(img.dtype).min, np.iinfo(img.dtype).max)
    return out.astype(img.dtype)


def synthesize_dw(original: np.ndarray, spec: WindowSpec) -> Tuple[np.ndarray, DwLayout]:
    H, W = original.shape[:2]
    if (W, H) != tuple(spec.orig_size):
        spec = WindowSpec(spec.center, spec.cw_size, spec.crop_top, spec.crop_bottom,
                          spec.gw_scale, (W, H))
    layout = DwLayout(spec)
    x0, y0, x1, y1 = layout.cw_rect
    cw = original[y0:y1, x0:x1]
    gw = area_downsample(original[spec.crop_top:H - spec.crop_bottom], spec.gw_scale)
    return np.concatenate([cw, gw], axis=0), layout


def dw_to_original(pt, layout: DwLayout):
    """DW pixel -> (original pixel, branch).  Vectorized over (..., 2) arrays."""
    p = np.asarray(pt, dtype=np.float64)
    w, h = layout.dw_size
    x, y = p[..., 0], p[..., 1]
    if np.any((x < 0) | (x > w - 1) | (y < 0) | (y > h - 1)):
        raise ValueError(f"point outside DW image of size {layout.dw_size}")
    s = layout.spec.gw_scale
    in_cw = y < layout.gw_offset
    ox = np.where(in_cw, x + layout.cw_origin[0], x * s)
    oy = np.where(in_cw, y + layout.cw_origin[1], (y - layout.gw_offset) * s + layout.spec.crop_top)
    out = np.stack([ox, oy], axis=-1)
    if p.ndim == 1:
        return (float(out[0]), float(out[1])), (CW if bool(in_cw) else GW)
    return out, np.where(in_cw, CW, GW)


def original_to_dw(pt, layout: DwLayout, branch: str):
    """Forward map of original pixels into the CW or GW part of the DW image."""
    p = np.asarray(pt, dtype=np.float64)
    x, y = p[..., 0], p[..., 1]
    if branch == CW:
        out = np.stack([x - layout.cw_origin[0], y - layout.cw_origin[1]], axis=-1)
    elif branch == GW:
        s = layout.spec.gw_scale
        out = np.stack([x / s, (y - layout.spec.crop_top) / s + layout.gw_offset], axis=-1)
    else:
        raise ValueError(f"unknown branch {branch!r}")
    if p.ndim == 1:
        return (float(out[0]), float(out[1]))
    return out


def window_to_original(pt, layout: DwLayout, window: str):
    """Map window-local pixels (CW or GW image on its own) to original pixels."""
    p = np.asarray(pt, dtype=np.float64)
    x, y = p[..., 0], p[..., 1]
    if window == CW:
        out = np.stack([x + layout.cw_origin[0], y + layout.cw_origin[1]], axis=-1)
        scale = 1.0
    elif window == GW:
        s = layout.spec.gw_scale
        out = np.stack([x * s, y * s + layout.spec.crop_top], axis=-1)
        scale = float(s)
    else:
        raise ValueError(f"unknown window {window!r}")
    return out, scale
