"""Decode raw per-stride head outputs into original-frame detections.

Channel layout of a cell (18 values, post-sigmoid where probabilistic):

    0      objectness C_o
    1-4    tx, ty, tw, th
    5      split ratio r
    6-13   pose scores p0..p7
    14     normalized SPL angle theta_n in [-1, 1]
    15-16  wheel-midpoint offset qx, qy (in strides, from the cell center)
    17     SPL confidence C_l
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .dw import CW, GW, DwLayout, window_to_original
from .geometry import P3DVR, ExtendedBBox, SideProjectionLine, box_iou

N_CHANNELS = 18
C_OBJ, C_BOX, C_R, C_POSE, C_THETA, C_PWC, C_SPL = 0, slice(1, 5), 5, slice(6, 14), 14, slice(15, 17), 17

CONF_THRESH = 0.5
IOU_THRESH = 0.65
SPL_THRESH = 0.5
# medium/large area boundary; smaller objects prefer the native-resolution CW copy
CW_PREFERENCE_AREA = 9216.0


@dataclass(frozen=True)
class ScaleSpec:
    window: str
    stride_in_window: int
    grid_size: Tuple[int, int]  # (rows, cols)
    gw_scale: int = 4

    def __post_init__(self):
        if self.window not in (CW, GW):
            raise ValueError(f"unknown window {self.window!r}")
        if self.stride_in_window not in (8, 16, 32):
            raise ValueError(f"stride {self.stride_in_window} not in (8, 16, 32)")
        if self.window == CW and self.stride_in_window == 32:
            raise ValueError("the CW branch has strides 8 and 16 only")

    @property
    def stride_in_original(self) -> int:
        return self.stride_in_window * (self.gw_scale if self.window == GW else 1)


def default_scales(layout: DwLayout) -> List[ScaleSpec]:
    """The five output scales: CW at 8/16, GW at 8/16/32 window pixels."""
    cw_w, cw_h = layout.spec.cw_size
    gw_w, gw_h = layout.gw_size
    out = [ScaleSpec(CW, s, (cw_h // s, cw_w // s), layout.spec.gw_scale) for s in (8, 16)]
    out += [ScaleSpec(GW, s, (gw_h // s, gw_w // s), layout.spec.gw_scale) for s in (8, 16, 32)]
    return out


@dataclass
class RawGrid:
    spec: ScaleSpec
    values: np.ndarray  # (rows, cols, 18)
    image_id: Optional[str] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3 or self.values.shape[2] != N_CHANNELS:
            raise ValueError(f"raw grid needs shape (rows, cols, {N_CHANNELS}), got {self.values.shape}")

    def to_json(self) -> dict:
        d = {"window": self.spec.window, "stride": self.spec.stride_in_window,
             "shape": list(self.values.shape), "data": self.values.ravel().tolist()}
        if self.image_id is not None:
            d["image_id"] = self.image_id
        return d

    @classmethod
    def from_json(cls, d: dict, gw_scale: int = 4) -> "RawGrid":
        shape = tuple(int(v) for v in d["shape"])
        if len(shape) != 3 or shape[2] != N_CHANNELS:
            raise ValueError(f"raw grid shape {shape} does not have {N_CHANNELS} channels")
        data = np.asarray(d["data"], dtype=np.float64)
        if data.size != shape[0] * shape[1] * shape[2]:
            raise ValueError(f"raw grid data has {data.size} values, shape says {shape}")
        spec = ScaleSpec(d["window"], int(d["stride"]), (shape[0], shape[1]), gw_scale)
        return cls(spec, data.reshape(shape), d.get("image_id"))

    @classmethod
    def load(cls, path, gw_scale: int = 4) -> "RawGrid":
        with open(path) as fh:
            return cls.from_json(json.load(fh), gw_scale)


@dataclass
class Detection:
    p3dvr: P3DVR
    score: float
    spl_conf: float
    source_window: str
    source_stride: int
    image_id: str = ""

    @property
    def theta_n(self) -> float:
        return self.p3dvr.spl.theta_deg / 90.0

    def sort_key(self):
        eb = self.p3dvr.eb
        return (-self.score, self.source_stride, eb.cx, eb.cy, eb.w, eb.h,
                self.source_window, eb.r, eb.pose, self.p3dvr.spl.pwc_x, self.p3dvr.spl.pwc_y,
                self.p3dvr.spl.theta_deg, self.spl_conf)


def decode_grid(g: RawGrid, layout: DwLayout, spl_thresh: float = SPL_THRESH,
                conf_thresh: float = 0.0) -> List[Detection]:
    """Anchor-free decode of every cell with objectness >= conf_thresh."""
    v = g.values
    s = g.spec.stride_in_window
    rows, cols = v.shape[:2]
    gy, gx = np.mgrid[0:rows, 0:cols].astype(np.float64)
    keep = v[..., C_OBJ] >= conf_thresh
    gy, gx, cells = gy[keep], gx[keep], v[keep]

    cx = (gx + cells[:, 1]) * s
    cy = (gy + cells[:, 2]) * s
    w = np.exp(cells[:, 3]) * s
    h = np.exp(cells[:, 4]) * s
    px = (gx + 0.5 + cells[:, 15]) * s
    py = (gy + 0.5 + cells[:, 16]) * s
    centers, scale = window_to_original(np.stack([cx, cy], -1), layout, g.spec.window)
    pwcs, _ = window_to_original(np.stack([px, py], -1), layout, g.spec.window)

    out = []
    for i in range(cells.shape[0]):
        c = cells[i]
        theta_n = float(c[C_THETA])
        eb = ExtendedBBox(float(centers[i, 0]), float(centers[i, 1]), float(w[i] * scale),
                          float(h[i] * scale), float(c[C_R]), int(np.argmax(c[C_POSE])))
        spl = SideProjectionLine(float(pwcs[i, 0]), float(pwcs[i, 1]), 90.0 * theta_n,
                                 bool(c[C_SPL] >= spl_thresh))
        out.append(Detection(P3DVR(eb, spl), float(c[C_OBJ]), float(c[C_SPL]), g.spec.window,
                             g.spec.stride_in_original, g.image_id or ""))
    return out


def encode_cell(det: Detection, spec: ScaleSpec, layout: DwLayout) -> Tuple[int, int, np.ndarray]:
    """Inverse of decode_grid for one detection: (row, col, 18 channel values).

    The pose channel becomes a one-hot vector, so only its argmax survives
    a round trip.
    """
    s = spec.stride_in_window
    eb, spl = det.p3dvr.eb, det.p3dvr.spl
    if spec.window == CW:
        ox, oy = layout.cw_origin
        k = 1.0
    else:
        ox, oy = 0.0, float(layout.spec.crop_top)
        k = float(layout.spec.gw_scale)
    wx, wy = (eb.cx - ox) / k, (eb.cy - oy) / k
    col, row = int(math.floor(wx / s)), int(math.floor(wy / s))
    vals = np.zeros(N_CHANNELS)
    vals[C_OBJ] = det.score
    vals[1] = wx / s - col
    vals[2] = wy / s - row
    vals[3] = math.log(eb.w / k / s)
    vals[4] = math.log(eb.h / k / s)
    vals[C_R] = eb.r
    vals[6 + eb.pose] = 1.0
    vals[C_THETA] = spl.theta_deg / 90.0
    vals[15] = ((spl.pwc_x - ox) / k) / s - (col + 0.5)
    vals[16] = ((spl.pwc_y - oy) / k) / s - (row + 0.5)
    vals[C_SPL] = det.spl_conf
    return row, col, vals


def nms(dets: Iterable[Detection], conf_thresh: float = CONF_THRESH,
        iou_thresh: float = IOU_THRESH) -> List[Detection]:
    """Greedy suppression over all scales jointly.

    Candidates are ordered by score, then smaller stride, then box center,
    so the result does not depend on input order.
    """
    cands = sorted((d for d in dets if d.score >= conf_thresh), key=Detection.sort_key)
    kept: List[Detection] = []
    for d in cands:
        if all(box_iou(d.p3dvr.eb, k.p3dvr.eb) <= iou_thresh for k in kept):
            kept.append(d)
    return kept


def _prefer(a: Detection, b: Detection) -> Detection:
    """Winner of two overlapping detections of the same vehicle."""
    if a.source_window != b.source_window:
        cw = a if a.source_window == CW else b
        if cw.p3dvr.eb.area < CW_PREFERENCE_AREA:
            return cw
    return a if a.sort_key() <= b.sort_key() else b


def merge_windows(dets: Iterable[Detection], iou_thresh: float = IOU_THRESH) -> List[Detection]:
    """Reconcile CW and GW detections of the same vehicle.

    Overlapping cross-window pairs keep the CW copy when it is small
    (below the medium/large boundary), otherwise the higher score.
    """
    kept: List[Detection] = []
    for d in sorted(dets, key=Detection.sort_key):
        clash = [i for i, k in enumerate(kept) if box_iou(d.p3dvr.eb, k.p3dvr.eb) > iou_thresh]
        if not clash:
            kept.append(d)
            continue
        winner = d
        for i in clash:
            winner = _prefer(kept[i], winner)
        if winner is d:
            kept = [k for i, k in enumerate(kept) if i not in clash]
            kept.append(d)
    kept.sort(key=Detection.sort_key)
    return kept


def postprocess(grids: Sequence[RawGrid], layout: DwLayout, conf_thresh: float = CONF_THRESH,
                iou_thresh: float = IOU_THRESH, spl_thresh: float = SPL_THRESH) -> List[Detection]:
    """decode -> per-window NMS across that window's scales -> cross-window merge."""
    per_window = {CW: [], GW: []}
    for g in grids:
        per_window[g.spec.window].extend(decode_grid(g, layout, spl_thresh, conf_thresh))
    merged = []
    for win in (CW, GW):
        merged.extend(nms(per_window[win], conf_thresh, iou_thresh))
    return merge_windows(merged, iou_thresh)
