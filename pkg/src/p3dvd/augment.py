"""Geometric augmentation that keeps labels and the CW center in sync.

Every pixel transform is an affine map ``p' = m @ p + t`` in pixel-index
coordinates (pixel centers on integers).  The same map is applied to the
image (via ``cv2.warpAffine``), to every label, and to the window center,
so the CW crop taken after augmentation still covers the region it covered
before.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import cv2
import numpy as np

from .dw import CW, GW, DwLayout, WindowSpec, synthesize_dw
from .geometry import (
    P3DVR,
    ExtendedBBox,
    SideProjectionLine,
    canonical_ratio,
    canonical_theta,
)

Rect = Tuple[float, float, float, float]

FILL_VALUE = 114


@dataclass(frozen=True)
class Affine2:
    m: np.ndarray = field(default_factory=lambda: np.eye(2))
    t: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        object.__setattr__(self, "m", np.asarray(self.m, dtype=np.float64).reshape(2, 2))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=np.float64).reshape(2))

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.m))

    def apply(self, pts) -> np.ndarray:
        p = np.asarray(pts, dtype=np.float64)
        return p @ self.m.T + self.t

    def __matmul__(self, other: "Affine2") -> "Affine2":
        """self @ other applies ``other`` first."""
        return Affine2(self.m @ other.m, self.m @ other.t + self.t)

    def inverse(self) -> "Affine2":
        mi = np.linalg.inv(self.m)
        return Affine2(mi, -mi @ self.t)

    def matrix(self) -> np.ndarray:
        return np.hstack([self.m, self.t[:, None]])

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def translation(cls, dx, dy):
        return cls(np.eye(2), (dx, dy))

    @classmethod
    def scaling(cls, sx, sy=None):
        return cls(np.diag([sx, sx if sy is None else sy]))

    @classmethod
    def shear(cls, shx_deg, shy_deg=0.0):
        return cls([[1.0, math.tan(math.radians(shx_deg))], [math.tan(math.radians(shy_deg)), 1.0]])

    @classmethod
    def hflip(cls, width: int):
        return cls(np.diag([-1.0, 1.0]), (width - 1, 0.0))


def _clip_region(image_size, clip_rect: Optional[Rect]) -> Rect:
    if clip_rect is not None:
        return clip_rect
    w, h = image_size
    return (0.0, 0.0, float(w - 1), float(h - 1))


def transform_label(p: P3DVR, a: Affine2, image_size, clip_rect: Optional[Rect] = None) -> Optional[P3DVR]:
    """Push one label through ``a``; None when it leaves the canvas."""
    corners = a.apply(p.eb.corners())
    x0, y0 = corners.min(axis=0)
    x1, y1 = corners.max(axis=0)
    cx0, cy0, cx1, cy1 = _clip_region(image_size, clip_rect)
    if x1 <= cx0 or y1 <= cy0 or x0 >= cx1 or y0 >= cy1:
        return None
    truncated = p.truncated
    if x0 < cx0 or y0 < cy0 or x1 > cx1 or y1 > cy1:
        x0, y0 = max(x0, cx0), max(y0, cy0)
        x1, y1 = min(x1, cx1), min(y1, cy1)
        truncated = True

    r, pose = p.eb.r, p.eb.pose
    if a.det < 0:
        # a reflection swaps the left/right partitions and mirrors the heading
        r, pose = 1.0 - r, (8 - pose) % 8
    r = canonical_ratio(pose, r)

    pwc = a.apply(p.spl.pwc)
    theta = p.spl.theta_deg
    if p.spl.present:
        d = a.m @ np.array(p.spl.direction)
        theta = canonical_theta(math.degrees(math.atan2(d[1], d[0])))
    eb = ExtendedBBox(float(x0 + x1) / 2, float(y0 + y1) / 2, float(x1 - x0), float(y1 - y0), float(r), int(pose))
    spl = SideProjectionLine(float(pwc[0]), float(pwc[1]), float(theta), p.spl.present)
    return P3DVR(eb, spl, truncated)


def transform_labels(labels: Sequence[P3DVR], a: Affine2, image_size,
                     clip_rect: Optional[Rect] = None) -> List[P3DVR]:
    if abs(a.det) < 1e-12:
        raise ValueError("singular affine map cannot transform labels")
    out = []
    for p in labels:
        q = transform_label(p, a, image_size, clip_rect)
        if q is not None:
            out.append(q)
    return out


@dataclass
class LabeledImage:
    image: np.ndarray
    labels: List[P3DVR]
    window_center: Tuple[float, float]
    image_id: str = ""

    @property
    def size(self) -> Tuple[int, int]:
        return (self.image.shape[1], self.image.shape[0])


@dataclass(frozen=True)
class AugmentConfig:
    translate: float = 0.1  # fraction of output size
    shear_deg: float = 2.0
    scale: Tuple[float, float] = (0.5, 1.5)
    hflip_prob: float = 0.5
    mosaic_prob: float = 1.0
    seed: int = 0
    cw_size: Tuple[int, int] = (960, 384)
    max_retries: int = 50

    def __post_init__(self):
        vals = (self.translate, self.shear_deg, *self.scale)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("augmentation ranges must be finite")
        if not (0 <= self.hflip_prob <= 1 and 0 <= self.mosaic_prob <= 1):
            raise ValueError("probabilities must lie in [0, 1]")
        if not 0 < self.scale[0] <= self.scale[1]:
            raise ValueError("scale range must be positive and ordered")

    @classmethod
    def identity(cls, **kw):
        base = dict(translate=0.0, shear_deg=0.0, scale=(1.0, 1.0), hflip_prob=0.0, mosaic_prob=0.0)
        base.update(kw)
        return cls(**base)


@dataclass
class AugmentResult:
    sample: LabeledImage
    affine: Affine2  # chosen source frame -> output frame
    source: int = 0
    clamped: bool = False
    attempts: int = 1


def sample_affine(rng: np.random.Generator, cfg: AugmentConfig, in_size, out_size) -> Affine2:
    """Center -> scale -> shear -> translate -> optional flip, about image centers."""
    iw, ih = in_size
    ow, oh = out_size
    s = rng.uniform(*cfg.scale)
    shx = rng.uniform(-cfg.shear_deg, cfg.shear_deg)
    shy = rng.uniform(-cfg.shear_deg, cfg.shear_deg)
    tx = rng.uniform(-cfg.translate, cfg.translate) * ow
    ty = rng.uniform(-cfg.translate, cfg.translate) * oh
    flip = rng.random() < cfg.hflip_prob
    a = (Affine2.translation((ow - 1) / 2 + tx, (oh - 1) / 2 + ty)
         @ Affine2.shear(shx, shy)
         @ Affine2.scaling(s)
         @ Affine2.translation(-(iw - 1) / 2, -(ih - 1) / 2))
    if flip:
        a = Affine2.hflip(ow) @ a
    return a


def warp(image: np.ndarray, a: Affine2, out_size) -> np.ndarray:
    border = (FILL_VALUE,) * 4 if image.dtype == np.uint8 else (0,) * 4
    return cv2.warpAffine(image, a.matrix(), tuple(int(v) for v in out_size),
                          flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_CONSTANT,
                          borderValue=border)


def center_ok(c, out_size, cw_size) -> bool:
    """Window center leaves at least half a CW to every border."""
    x, y = (int(np.floor(v + 0.5)) for v in c)
    w, h = out_size
    hw, hh = cw_size[0] // 2, cw_size[1] // 2
    return hw <= x <= w - hw and hh <= y <= h - hh


def clamp_center(c, out_size, cw_size) -> Tuple[float, float]:
    w, h = out_size
    hw, hh = cw_size[0] // 2, cw_size[1] // 2
    if w < cw_size[0] or h < cw_size[1]:
        raise ValueError(f"canvas {out_size} smaller than the CW {cw_size}")
    return (float(min(max(c[0], hw), w - hw)), float(min(max(c[1], hh), h - hh)))


def _in_rect(p, rect: Rect) -> bool:
    return rect[0] <= p[0] <= rect[2] and rect[1] <= p[1] <= rect[3]


@dataclass
class _Mosaic:
    canvas: np.ndarray
    placements: List[Affine2]
    regions: List[Rect]


def build_mosaic(inputs: Sequence[LabeledImage], rng: np.random.Generator) -> _Mosaic:
    """2x2 mosaic on a (2W, 2H) canvas around a random joint point."""
    W, H = inputs[0].size
    xc = int(rng.uniform(W / 2, 3 * W / 2))
    yc = int(rng.uniform(H / 2, 3 * H / 2))
    canvas = np.full((2 * H, 2 * W) + inputs[0].image.shape[2:],
                     FILL_VALUE if inputs[0].image.dtype == np.uint8 else 0,
                     dtype=inputs[0].image.dtype)
    placements, regions = [], []
    quads = [(0, 0, xc, yc), (xc, 0, 2 * W, yc), (0, yc, xc, 2 * H), (xc, yc, 2 * W, 2 * H)]
    for k, li in enumerate(inputs):
        w, h = li.size
        ox = xc - w if k in (0, 2) else xc
        oy = yc - h if k in (0, 1) else yc
        qx0, qy0, qx1, qy1 = quads[k]
        x0, y0 = max(ox, qx0), max(oy, qy0)
        x1, y1 = min(ox + w, qx1), min(oy + h, qy1)
        if x1 > x0 and y1 > y0:
            canvas[y0:y1, x0:x1] = li.image[y0 - oy:y1 - oy, x0 - ox:x1 - ox]
        placements.append(Affine2.translation(ox, oy))
        regions.append((float(x0), float(y0), float(x1 - 1), float(y1 - 1)))
    return _Mosaic(canvas, placements, regions)


def window_following_apply(inputs: Sequence[LabeledImage], cfg: AugmentConfig,
                           rng: Optional[np.random.Generator] = None,
                           out_size: Optional[Tuple[int, int]] = None) -> AugmentResult:
    """Random affine (optionally after a mosaic) applied to pixels, labels and CW center.

    With four inputs the output window center is the transformed center of
    one source: among candidates that keep the CW inside the canvas, sources
    whose center is still visible in their own mosaic tile win, then the one
    nearest the canvas center.  Draws are re-sampled up to ``max_retries``
    times before the center is clamped.
    """
    if len(inputs) not in (1, 4):
        raise ValueError("window-following augmentation takes 1 or 4 images")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    out_size = out_size or inputs[0].size
    use_mosaic = len(inputs) == 4
    ow, oh = out_size
    out_mid = ((ow - 1) / 2, (oh - 1) / 2)

    best = None
    for attempt in range(1, cfg.max_retries + 1):
        if use_mosaic:
            mosaic = build_mosaic(inputs, rng)
            base, placements, regions = mosaic.canvas, mosaic.placements, mosaic.regions
        else:
            base, placements = inputs[0].image, [Affine2.identity()]
            regions = [(0.0, 0.0, float(inputs[0].size[0] - 1), float(inputs[0].size[1] - 1))]
        a = sample_affine(rng, cfg, (base.shape[1], base.shape[0]), out_size)

        cands = []
        for k, li in enumerate(inputs):
            placed = placements[k].apply(li.window_center)
            c = a.apply(placed)
            visible = _in_rect(placed, regions[k])
            dist = math.hypot(c[0] - out_mid[0], c[1] - out_mid[1])
            cands.append((not visible, dist, k, c, center_ok(c, out_size, cfg.cw_size)))
        valid = sorted(x for x in cands if x[4])
        if valid and not valid[0][0]:
            best = (valid[0], a, base, placements, regions, False, attempt)
            break
        if attempt == cfg.max_retries:
            pick = valid[0] if valid else sorted(cands)[0]
            best = (pick, a, base, placements, regions, True, attempt)

    (hidden, _, k, c, ok), a, base, placements, regions, exhausted, attempts = best
    center = (float(c[0]), float(c[1]))
    clamped = False
    if not ok:
        center = clamp_center(center, out_size, cfg.cw_size)
        clamped = True

    image = warp(base, a, out_size)
    labels: List[P3DVR] = []
    for j, li in enumerate(inputs):
        placed = transform_labels(li.labels, placements[j], base.shape[1::-1], regions[j]) if use_mosaic else li.labels
        labels.extend(transform_labels(placed, a, out_size))
    sample = LabeledImage(image, labels, center, inputs[k].image_id)
    return AugmentResult(sample, a @ placements[k], k, clamped, attempts)


def rng_for(seed: int, image_index: int) -> np.random.Generator:
    """Independent per-image stream so parallel workers reproduce serial output."""
    return np.random.default_rng([int(seed), int(image_index)])


@dataclass
class FramedLabel:
    label: P3DVR
    frame: str  # CW or GW


def extract_training_sample(li: LabeledImage, spec: WindowSpec) -> Tuple[np.ndarray, List[FramedLabel], DwLayout]:
    """DW image around the (followed) window center plus labels in DW pixels."""
    W, H = li.size
    spec = replace(spec.with_center(li.window_center), orig_size=(W, H))
    dw, layout = synthesize_dw(li.image, spec)
    x0, y0, x1, y1 = layout.cw_rect
    to_cw = Affine2.translation(-x0, -y0)
    cw_clip = (0.0, 0.0, float(x1 - x0 - 1), float(y1 - y0 - 1))
    s = spec.gw_scale
    to_gw = Affine2(np.diag([1.0 / s, 1.0 / s]), (0.0, layout.gw_offset - spec.crop_top / s))
    gw_clip = (0.0, float(layout.gw_offset),
               (W - 1) / s, layout.gw_offset + (H - spec.crop_top - spec.crop_bottom - 1) / s)

    out: List[FramedLabel] = []
    for p in li.labels:
        q = transform_label(p, to_cw, layout.dw_size, cw_clip)
        if q is not None:
            out.append(FramedLabel(q, CW))
        q = transform_label(p, to_gw, layout.dw_size, gw_clip)
        if q is not None:
            out.append(FramedLabel(q, GW))
    return dw, out, layout
