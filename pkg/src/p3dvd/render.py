"""Overlay drawing of P3DVR labels on images (BGR, uint8)."""

from __future__ import annotations

import math

import cv2
import numpy as np

from .geometry import P3DVR, derive_faces

SIDE_COLOR = (0, 200, 255)
END_COLOR = (255, 160, 0)
SPL_COLOR = (0, 0, 255)
PWC_COLOR = (0, 255, 0)
BOX_COLOR = (200, 200, 200)


def _poly(img, pts, color, thickness):
    arr = np.round(np.asarray(pts, dtype=np.float64)).astype(np.int32)
    cv2.polylines(img, [arr], True, color, thickness, cv2.LINE_AA)


def draw_p3dvr(img: np.ndarray, label: P3DVR, thickness: int = 2, text: bool = True) -> np.ndarray:
    """Draw box, side face (filled tint), end face, SPL, p_wc and pose id in place."""
    eb = label.eb
    _poly(img, eb.corners(), BOX_COLOR, 1)
    try:
        faces = derive_faces(label)
    except ValueError:
        faces = None
    if faces is not None and faces.side_face:
        tint = img.copy()
        cv2.fillPoly(tint, [np.round(np.asarray(faces.side_face)).astype(np.int32)], SIDE_COLOR)
        cv2.addWeighted(tint, 0.3, img, 0.7, 0, dst=img)
        _poly(img, faces.side_face, SIDE_COLOR, thickness)
        _poly(img, faces.end_face, END_COLOR, thickness)
    elif faces is not None:
        _poly(img, faces.end_face, END_COLOR, thickness)

    spl = label.spl
    if spl.present:
        dx, dy = spl.direction
        half = eb.w / 2
        a = (spl.pwc_x - dx * half, spl.pwc_y - dy * half)
        b = (spl.pwc_x + dx * half, spl.pwc_y + dy * half)
        # dashed SPL so it stays distinguishable from face edges
        n = max(2, int(math.hypot(b[0] - a[0], b[1] - a[1]) // 8))
        for k in range(0, n, 2):
            p0 = (a[0] + (b[0] - a[0]) * k / n, a[1] + (b[1] - a[1]) * k / n)
            p1 = (a[0] + (b[0] - a[0]) * (k + 1) / n, a[1] + (b[1] - a[1]) * (k + 1) / n)
            cv2.line(img, tuple(int(round(v)) for v in p0), tuple(int(round(v)) for v in p1),
                     SPL_COLOR, thickness, cv2.LINE_AA)
        cv2.circle(img, (int(round(spl.pwc_x)), int(round(spl.pwc_y))), thickness + 3, PWC_COLOR, -1)
    if text:
        org = (int(round(eb.left)), max(12, int(round(eb.top)) - 4))
        cv2.putText(img, f"p{eb.pose} r{eb.r:.2f}", org, cv2.FONT_HERSHEY_SIMPLEX, 0.5,
                    BOX_COLOR, 1, cv2.LINE_AA)
    return img


def draw_labels(img: np.ndarray, labels, **kw) -> np.ndarray:
    for lab in labels:
        draw_p3dvr(img, lab, **kw)
    return img
