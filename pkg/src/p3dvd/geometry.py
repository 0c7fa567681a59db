"""Pseudo-3D vehicle representation: extended box + side projection line.

Image coordinates throughout: x to the right, y down, angles measured from
the +x axis toward +y (so a positive theta tilts a line downward to the right).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, Optional, Tuple

Point = Tuple[float, float]

# |theta| this close to 90 deg makes the trapezoid construction degenerate
VERTICAL_EPS_DEG = 1e-6


class Side(str, Enum):
    LEFT = "left"
    RIGHT = "right"


class Violation(str, Enum):
    NON_POSITIVE_SIZE = "NonPositiveSize"
    RATIO_OUT_OF_RANGE = "RatioOutOfRange"
    POSE_OUT_OF_RANGE = "PoseOutOfRange"
    CARDINAL_RATIO = "CardinalRatio"
    THETA_OUT_OF_RANGE = "ThetaOutOfRange"
    PWC_OUTSIDE_BOX = "PwcOutsideBox"
    NON_FINITE = "NonFinite"


CARDINAL_POSES = (0, 2, 4, 6)

# Which side of the split line carries the side face, per pose bin.  Worked
# out by projecting cuboids (see synth.py and tests/test_synth.py): for a
# heading rotated counterclockwise away from the camera ray the near side
# is the vehicle's left flank and it lands left of the rear face.
_SIDE_TABLE = {
    0: None,
    1: Side.LEFT,
    2: Side.LEFT,
    3: Side.RIGHT,
    4: None,
    5: Side.LEFT,
    6: Side.RIGHT,
    7: Side.RIGHT,
}


def side_face_side(pose: int) -> Optional[Side]:
    """Side of the split line holding the vehicle flank, or None for 0/4."""
    return _SIDE_TABLE[int(pose) % 8]


def is_cardinal(pose: int) -> bool:
    return int(pose) % 2 == 0


def canonical_theta(theta_deg: float) -> float:
    """Fold a line inclination into (-90, 90]."""
    t = math.fmod(theta_deg, 180.0)
    if t <= -90.0:
        t += 180.0
    elif t > 90.0:
        t -= 180.0
    return t


def canonical_ratio(pose: int, r: float) -> float:
    """Single-face views carry r in {0, 1}; diagonal poses keep r."""
    pose = int(pose) % 8
    if pose == 6:
        return 0.0
    if pose in (0, 2, 4):
        return 1.0
    return r


@dataclass(frozen=True)
class ExtendedBBox:
    cx: float
    cy: float
    w: float
    h: float
    r: float
    pose: int

    @property
    def left(self) -> float:
        return self.cx - self.w / 2

    @property
    def right(self) -> float:
        return self.cx + self.w / 2

    @property
    def top(self) -> float:
        return self.cy - self.h / 2

    @property
    def bottom(self) -> float:
        return self.cy + self.h / 2

    @property
    def area(self) -> float:
        return self.w * self.h

    def corners(self) -> List[Point]:
        """Clockwise from top-left."""
        return [
            (self.left, self.top),
            (self.right, self.top),
            (self.right, self.bottom),
            (self.left, self.bottom),
        ]

    def xyxy(self) -> Tuple[float, float, float, float]:
        return (self.left, self.top, self.right, self.bottom)

    @classmethod
    def from_xyxy(cls, x0, y0, x1, y1, r=1.0, pose=0) -> "ExtendedBBox":
        return cls((x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0, r, pose)


@dataclass(frozen=True)
class SideProjectionLine:
    pwc_x: float
    pwc_y: float
    theta_deg: float
    present: bool = True

    @property
    def pwc(self) -> Point:
        return (self.pwc_x, self.pwc_y)

    @property
    def direction(self) -> Point:
        t = math.radians(self.theta_deg)
        return (math.cos(t), math.sin(t))

    def y_at(self, x: float) -> float:
        t = math.radians(self.theta_deg)
        return self.pwc_y + math.tan(t) * (x - self.pwc_x)

    def distance(self, pt: Point) -> float:
        """Perpendicular distance from pt to the (infinite) line."""
        dx, dy = self.direction
        return abs(-dy * (pt[0] - self.pwc_x) + dx * (pt[1] - self.pwc_y))


# Pose-0 vehicles carry no visible flank; the convention is -90 deg.
ABSENT_THETA_DEG = -90.0


@dataclass(frozen=True)
class P3DVR:
    eb: ExtendedBBox
    spl: SideProjectionLine
    truncated: bool = False

    def as_tuple(self) -> tuple:
        return (self.eb.cx, self.eb.cy, self.eb.w, self.eb.h, self.eb.r,
                self.eb.pose, self.spl.pwc_x, self.spl.pwc_y, self.spl.theta_deg)

    def with_spl(self, **kw) -> "P3DVR":
        return replace(self, spl=replace(self.spl, **kw))

    def with_eb(self, **kw) -> "P3DVR":
        return replace(self, eb=replace(self.eb, **kw))


def make_p3dvr(cx, cy, w, h, r, pose, pwc_x=None, pwc_y=None, theta_deg=None,
               present=None, truncated=False) -> P3DVR:
    """Convenience constructor; a missing SPL becomes the absent sentinel."""
    if pwc_x is None or pwc_y is None:
        spl = SideProjectionLine(cx, cy + h / 2, ABSENT_THETA_DEG, False)
    else:
        spl = SideProjectionLine(
            float(pwc_x), float(pwc_y),
            ABSENT_THETA_DEG if theta_deg is None else float(theta_deg),
            True if present is None else bool(present),
        )
    return P3DVR(ExtendedBBox(float(cx), float(cy), float(w), float(h),
                              float(r), int(pose)), spl, truncated)


@dataclass(frozen=True)
class FacePair:
    side_face: List[Point] = field(default_factory=list)
    end_face: List[Point] = field(default_factory=list)
    side_on_left: bool = True
    # index pairs into side_face spanning the w' diagonal
    diagonal: Tuple[int, int] = (2, 0)


def split_line_x(eb: ExtendedBBox) -> float:
    return eb.cx - eb.w / 2 + eb.r * eb.w


def h_prime(p: P3DVR) -> float:
    """Distance from the box center to the side projection line."""
    if not p.spl.present:
        raise ValueError("h' needs a present side projection line")
    return p.spl.distance((p.eb.cx, p.eb.cy))


def _outer_edge_x(eb: ExtendedBBox, side: Side) -> float:
    return eb.left if side is Side.LEFT else eb.right


def _require_side(p: P3DVR) -> Side:
    if not p.spl.present:
        raise ValueError("side projection line absent")
    side = side_face_side(p.eb.pose)
    if side is None:
        raise ValueError(f"pose {p.eb.pose} has no visible side face")
    if abs(abs(canonical_theta(p.spl.theta_deg)) - 90.0) < VERTICAL_EPS_DEG:
        raise ValueError("side projection line is vertical; faces are degenerate")
    return side


def w_prime(p: P3DVR, side: Optional[Side] = None) -> float:
    """Diagonal of the side-face trapezoid.

    Runs from the bottom corner on the split line to the top corner on the
    outer box edge.  ``side`` overrides the pose lookup.
    """
    if side is None:
        side = _require_side(p)
    xs = split_line_x(p.eb)
    xo = _outer_edge_x(p.eb, side)
    dx = xs - xo
    dy = p.spl.y_at(xs) - p.eb.top
    return math.hypot(dx, dy)


def derive_faces(p: P3DVR) -> FacePair:
    """Side and end trapezoids of a P3DVR.

    Both faces have vertical edges; the side face sits on the side
    projection line with its roof parallel to it through the outer top
    box corner.  Without a side face the whole box is the end face.
    """
    eb = p.eb
    side = side_face_side(eb.pose)
    if not p.spl.present or side is None:
        return FacePair(side_face=[], end_face=eb.corners(), side_on_left=True)
    side = _require_side(p)
    t = math.tan(math.radians(p.spl.theta_deg))
    xs = split_line_x(eb)
    xo = _outer_edge_x(eb, side)
    xe = eb.right if side is Side.LEFT else eb.left
    top_s = eb.top + t * (xs - xo)
    side_face = [(xo, eb.top), (xs, top_s), (xs, p.spl.y_at(xs)), (xo, p.spl.y_at(xo))]
    end_face = [(xs, top_s), (xe, eb.top), (xe, eb.bottom), (xs, p.spl.y_at(xs))]
    return FacePair(side_face, end_face, side is Side.LEFT, (2, 0))


def validate(p: P3DVR) -> List[Violation]:
    out = []
    eb, spl = p.eb, p.spl
    vals = (eb.cx, eb.cy, eb.w, eb.h, eb.r, spl.pwc_x, spl.pwc_y, spl.theta_deg)
    if not all(math.isfinite(v) for v in vals):
        return [Violation.NON_FINITE]
    if eb.w <= 0 or eb.h <= 0:
        out.append(Violation.NON_POSITIVE_SIZE)
    if not 0.0 <= eb.r <= 1.0:
        out.append(Violation.RATIO_OUT_OF_RANGE)
    if not (isinstance(eb.pose, int) and 0 <= eb.pose <= 7):
        out.append(Violation.POSE_OUT_OF_RANGE)
    elif is_cardinal(eb.pose) and 0.0 < eb.r < 1.0:
        out.append(Violation.CARDINAL_RATIO)
    # -90 is accepted as the no-flank sentinel alongside (-90, 90]
    if not -90.0 <= spl.theta_deg <= 90.0:
        out.append(Violation.THETA_OUT_OF_RANGE)
    if spl.present and not p.truncated and not eb.left <= spl.pwc_x <= eb.right:
        out.append(Violation.PWC_OUTSIDE_BOX)
    return out


def box_iou(a: ExtendedBBox, b: ExtendedBBox) -> float:
    iw = min(a.right, b.right) - max(a.left, b.left)
    ih = min(a.bottom, b.bottom) - max(a.top, b.top)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)
