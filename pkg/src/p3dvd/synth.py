"""Pinhole projection of ground-plane cuboid vehicles into P3DVR labels.

Camera frame: x right, y down, z forward, zero pitch and roll.  The ground
is the plane y = +height.  Vehicle yaw is measured counterclockwise seen
from above, 0 meaning the nose points away from the camera (+z).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .geometry import (
    ABSENT_THETA_DEG,
    P3DVR,
    ExtendedBBox,
    SideProjectionLine,
    box_iou,
    canonical_ratio,
    canonical_theta,
    side_face_side,
)

# 3840x2160 sensor with a 120 deg horizontal field of view
DEFAULT_FOCAL = 1920.0 / math.tan(math.radians(60.0))


@dataclass(frozen=True)
class Camera:
    fx: float = DEFAULT_FOCAL
    fy: float = DEFAULT_FOCAL
    cx: float = 1919.5
    cy: float = 1079.5
    width: int = 3840
    height: int = 2160
    mount_height: float = 1.5

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside image")

    def contains(self, pt) -> bool:
        return 0 <= pt[0] <= self.width - 1 and 0 <= pt[1] <= self.height - 1


@dataclass(frozen=True)
class GroundVehicle:
    x: float  # lateral position of the footprint center (m)
    z: float  # depth of the footprint center (m)
    yaw: float  # radians, counterclockwise from heading away
    length: float = 4.5
    width: float = 1.8
    height: float = 1.5
    rear_axle: float = 0.2
    front_axle: float = 0.8

    def __post_init__(self):
        if min(self.length, self.width, self.height) <= 0:
            raise ValueError("vehicle dimensions must be positive")
        if self.z <= 0:
            raise ValueError("vehicle must be in front of the camera")
        if not 0 < self.rear_axle < self.front_axle < 1:
            raise ValueError("axle fractions must satisfy 0 < rear < front < 1")

    def mirrored(self) -> "GroundVehicle":
        """Reflection about the camera's optical axis (x -> -x)."""
        return GroundVehicle(-self.x, self.z, -self.yaw, self.length, self.width,
                             self.height, self.rear_axle, self.front_axle)

    @property
    def heading(self) -> np.ndarray:
        return np.array([-math.sin(self.yaw), math.cos(self.yaw)])

    @property
    def left_dir(self) -> np.ndarray:
        return np.array([-math.cos(self.yaw), -math.sin(self.yaw)])


@dataclass
class Visibility:
    relative_yaw_deg: float
    near_side: str  # "left" / "right" flank of the vehicle
    near_end: str  # "rear" / "front"
    wheels_in_image: bool
    faces: Dict[str, np.ndarray] = field(default_factory=dict)
    wheel_points: Optional[np.ndarray] = None


def project_point(cam: Camera, pt) -> Tuple[float, float]:
    x, y, z = (float(v) for v in pt)
    if z <= 0:
        raise ValueError(f"point behind camera (z={z})")
    return (cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy)


def project_points(cam: Camera, pts: np.ndarray) -> np.ndarray:
    pts = np.asarray(pts, dtype=float)
    if np.any(pts[..., 2] <= 0):
        raise ValueError("point behind camera")
    u = cam.fx * pts[..., 0] / pts[..., 2] + cam.cx
    v = cam.fy * pts[..., 1] / pts[..., 2] + cam.cy
    return np.stack([u, v], axis=-1)


def _ground_xz(v: GroundVehicle, along: float, lateral: float) -> np.ndarray:
    """Footprint point at fractional offsets along heading / left direction."""
    c = np.array([v.x, v.z])
    return c + v.heading * along * v.length + v.left_dir * lateral * v.width


def cuboid_faces(v: GroundVehicle, cam: Camera) -> Dict[str, np.ndarray]:
    """3D corners (4x3, bottom pair then top pair) of the four vertical faces."""
    g, top = cam.mount_height, cam.mount_height - v.height
    foot = {
        "rl": _ground_xz(v, -0.5, 0.5),
        "rr": _ground_xz(v, -0.5, -0.5),
        "fl": _ground_xz(v, 0.5, 0.5),
        "fr": _ground_xz(v, 0.5, -0.5),
    }

    def face(a, b):
        pa, pb = foot[a], foot[b]
        return np.array([[pa[0], g, pa[1]], [pb[0], g, pb[1]],
                         [pb[0], top, pb[1]], [pa[0], top, pa[1]]])

    return {
        "rear": face("rl", "rr"),
        "front": face("fr", "fl"),
        "left": face("fl", "rl"),
        "right": face("rr", "fr"),
    }


def relative_yaw_deg(v: GroundVehicle) -> float:
    """Heading relative to the ray through the footprint center, in [0, 360)."""
    ray = math.atan2(-v.x, v.z)
    return math.degrees(v.yaw - ray) % 360.0


def pose_bin(rel_yaw_deg: float) -> int:
    return int(math.floor((rel_yaw_deg % 360.0) / 45.0 + 0.5)) % 8


def wheel_points(v: GroundVehicle, cam: Camera, side: str) -> np.ndarray:
    """Ground contact points (rear, front) on one flank, camera frame."""
    lat = 0.5 if side == "left" else -0.5
    pts = []
    for frac in (v.rear_axle, v.front_axle):
        xz = _ground_xz(v, frac - 0.5, lat)
        pts.append([xz[0], cam.mount_height, xz[1]])
    return np.array(pts)


def vehicle_to_p3dvr(cam: Camera, v: GroundVehicle) -> Tuple[P3DVR, Visibility]:
    faces = cuboid_faces(v, cam)
    corners = np.concatenate(list(faces.values()))
    if np.any(corners[:, 2] <= 0):
        raise ValueError("vehicle corner behind camera")
    uv = project_points(cam, corners)
    x0, y0 = uv.min(axis=0)
    x1, y1 = uv.max(axis=0)

    rel = relative_yaw_deg(v)
    pose = pose_bin(rel)
    near_side = "left" if 0.0 < rel < 180.0 else "right"
    near_end = "rear" if (rel < 90.0 or rel > 270.0) else "front"

    if pose % 2 == 1:
        # split line: the vertical edge shared by the near flank and near end
        along = -0.5 if near_end == "rear" else 0.5
        lat = 0.5 if near_side == "left" else -0.5
        gx, gz = _ground_xz(v, along, lat)
        xs = project_point(cam, (gx, cam.mount_height, gz))[0]
        r = min(max(float((xs - x0) / (x1 - x0)), 0.0), 1.0)
    else:
        r = canonical_ratio(pose, 0.0)

    wp = wheel_points(v, cam, near_side)
    wuv = project_points(cam, wp)
    inside = all(cam.contains(p) for p in wuv)
    has_flank = side_face_side(pose) is not None
    if has_flank:
        d = wuv[1] - wuv[0]
        theta = canonical_theta(math.degrees(math.atan2(d[1], d[0])))
        mid = wuv.mean(axis=0)
        spl = SideProjectionLine(float(mid[0]), float(mid[1]), theta, inside)
    else:
        spl = SideProjectionLine(float(x0 + x1) / 2, float(y1), ABSENT_THETA_DEG, False)

    eb = ExtendedBBox(float(x0 + x1) / 2, float(y0 + y1) / 2, float(x1 - x0),
                      float(y1 - y0), float(r), pose)
    vis = Visibility(rel, near_side, near_end, inside,
                     {k: project_points(cam, f) for k, f in faces.items()}, wuv)
    return P3DVR(eb, spl), vis


@dataclass(frozen=True)
class SceneRanges:
    depth: Tuple[float, float] = (10.0, 150.0)
    bearing_deg: Tuple[float, float] = (-50.0, 50.0)
    length: Tuple[float, float] = (3.8, 5.2)
    width: Tuple[float, float] = (1.6, 2.0)
    height: Tuple[float, float] = (1.3, 1.9)
    allow_overlap: bool = False
    max_attempts: int = 2000


@dataclass
class Scene:
    vehicles: List[GroundVehicle]
    labels: List[P3DVR]
    image: Optional[np.ndarray] = None


def _draw_vehicle(img, vis: Visibility, label: P3DVR):
    import cv2

    for name, quad in vis.faces.items():
        pts = np.round(quad).astype(np.int32)
        cv2.polylines(img, [pts], True, (90, 90, 90), 2)
    from .render import draw_p3dvr

    draw_p3dvr(img, label)


def gen_scene(seed: int, n: int, cam: Optional[Camera] = None,
              ranges: Optional[SceneRanges] = None, render: bool = False) -> Scene:
    """Random non-overlapping vehicles, fully inside the image."""
    cam = cam or Camera()
    ranges = ranges or SceneRanges()
    rng = np.random.default_rng(seed)
    vehicles, labels, vises = [], [], []
    attempts = 0
    while len(vehicles) < n:
        attempts += 1
        if attempts > ranges.max_attempts:
            raise RuntimeError(f"could not place {n} vehicles (placed {len(vehicles)})")
        z = rng.uniform(*ranges.depth)
        x = z * math.tan(math.radians(rng.uniform(*ranges.bearing_deg)))
        v = GroundVehicle(
            x=float(x), z=float(z), yaw=float(rng.uniform(0, 2 * math.pi)),
            length=float(rng.uniform(*ranges.length)),
            width=float(rng.uniform(*ranges.width)),
            height=float(rng.uniform(*ranges.height)),
        )
        try:
            label, vis = vehicle_to_p3dvr(cam, v)
        except ValueError:
            continue
        x0, y0, x1, y1 = label.eb.xyxy()
        if x0 < 0 or y0 < 0 or x1 > cam.width - 1 or y1 > cam.height - 1:
            continue
        if not ranges.allow_overlap and any(box_iou(label.eb, o.eb) > 0 for o in labels):
            continue
        vehicles.append(v)
        labels.append(label)
        vises.append(vis)

    image = None
    if render:
        image = np.zeros((cam.height, cam.width, 3), np.uint8)
        for vis, label in zip(vises, labels):
            _draw_vehicle(image, vis, label)
    return Scene(vehicles, labels, image)
