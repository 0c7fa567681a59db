"""Training losses for extended boxes, side projection lines and their joint shape.

All functions are framework-free: they take post-sigmoid probabilities and
pixel-space geometry and return the loss value together with its analytic
gradient with respect to the prediction, so they can be checked against
finite differences (``grad_check``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .geometry import P3DVR, Side, side_face_side

EPS = 1e-7
DEGENERATE_EPS = 1e-9
DEG = math.pi / 180.0


@dataclass(frozen=True)
class LossWeights:
    alpha1: float = 5.0  # IoU
    alpha2: float = 1.0  # split ratio
    alpha3: float = 1.0  # SPL angle
    alpha4: float = 1.0  # wheel midpoint
    alpha5: float = 1.0  # joint shape term

    def __post_init__(self):
        for k, v in self.__dict__.items():
            if not v >= 0:
                raise ValueError(f"{k} must be non-negative")


@dataclass
class LossValue:
    value: float
    grad: np.ndarray
    terms: dict = field(default_factory=dict)
    saturated: bool = False


# ---------------------------------------------------------------- primitives


def bce(p: float, y: float) -> Tuple[float, float]:
    """Binary cross-entropy on a clamped probability and its derivative in p."""
    pc = min(max(p, EPS), 1.0 - EPS)
    val = -(y * math.log(pc) + (1.0 - y) * math.log(1.0 - pc))
    if p <= EPS or p >= 1.0 - EPS:
        return val, 0.0
    return val, (pc - y) / (pc * (1.0 - pc))


def _l1(d: float) -> Tuple[float, float]:
    return abs(d), (1.0 if d > 0 else -1.0 if d < 0 else 0.0)


def _edges(box):
    cx, cy, w, h = box
    return cx - w / 2, cx + w / 2, cy - h / 2, cy + h / 2


def iou(a, b) -> float:
    """IoU of two (cx, cy, w, h) boxes; also accepts ExtendedBBox."""
    a = _as_box(a)
    b = _as_box(b)
    ax0, ax1, ay0, ay1 = _edges(a)
    bx0, bx1, by0, by1 = _edges(b)
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a[2] * a[3] + b[2] * b[3] - inter)


def _as_box(b):
    if hasattr(b, "cx"):
        return (b.cx, b.cy, b.w, b.h)
    return tuple(float(v) for v in b)


def iou_with_grad(a, b) -> Tuple[float, np.ndarray]:
    """IoU and its gradient with respect to the first box's (cx, cy, w, h)."""
    a, b = _as_box(a), _as_box(b)
    ax0, ax1, ay0, ay1 = _edges(a)
    bx0, bx1, by0, by1 = _edges(b)
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0, np.zeros(4)
    inter = iw * ih
    area_a = a[2] * a[3]
    union = area_a + b[2] * b[3] - inter
    # which of the pred edges bound the intersection
    dx1 = 1.0 if ax1 < bx1 else 0.0
    dx0 = -1.0 if ax0 > bx0 else 0.0
    dy1 = 1.0 if ay1 < by1 else 0.0
    dy0 = -1.0 if ay0 > by0 else 0.0
    d_iw = np.array([dx1 + dx0, 0.0, 0.5 * (dx1 - dx0), 0.0])
    d_ih = np.array([0.0, dy1 + dy0, 0.0, 0.5 * (dy1 - dy0)])
    d_inter = ih * d_iw + iw * d_ih
    d_area = np.array([0.0, 0.0, a[3], a[2]])
    d_union = d_area - d_inter
    val = inter / union
    return val, (d_inter * union - inter * d_union) / union ** 2


def _iou_kink_distance(a, b) -> float:
    ax0, ax1, ay0, ay1 = _edges(_as_box(a))
    bx0, bx1, by0, by1 = _edges(_as_box(b))
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    return min(abs(ax0 - bx0), abs(ax1 - bx1), abs(ay0 - by0), abs(ay1 - by1), abs(iw), abs(ih))


def _prob_kink_distance(p: float) -> float:
    return min(abs(p - EPS), abs(p - (1.0 - EPS)))


# ------------------------------------------------------------ extended box


@dataclass
class EodPred:
    objectness: float
    box: Tuple[float, float, float, float]
    r: float
    pose_scores: Sequence[float]

    def vector(self) -> np.ndarray:
        return np.array([self.objectness, *self.box, self.r, *self.pose_scores], dtype=float)

    @classmethod
    def from_vector(cls, x) -> "EodPred":
        x = np.asarray(x, dtype=float)
        return cls(float(x[0]), tuple(x[1:5]), float(x[5]), tuple(x[6:14]))


@dataclass
class EodTarget:
    box: Tuple[float, float, float, float]
    r: float
    pose: int
    objectness: float = 1.0


def eod_loss(pred: EodPred, gt: EodTarget, weights: LossWeights = LossWeights()) -> LossValue:
    """Objectness BCE + alpha1 * (-ln IoU) + alpha2 * |r - r_gt| + pose BCE.

    The pose term sums the per-class BCE over the 8 pose scores against a
    one-hot target.  Gradient layout follows ``EodPred.vector()``.
    """
    grad = np.zeros(14)
    l_o, grad[0] = bce(pred.objectness, gt.objectness)

    raw_iou, g_iou = iou_with_grad(pred.box, gt.box)
    saturated = raw_iou < EPS
    iou_c = min(max(raw_iou, EPS), 1.0)
    l_iou = -math.log(iou_c)
    if not saturated and raw_iou < 1.0:
        grad[1:5] = weights.alpha1 * (-g_iou / raw_iou)

    l_r, g_r = _l1(pred.r - gt.r)
    grad[5] = weights.alpha2 * g_r

    l_pose = 0.0
    for k in range(8):
        v, g = bce(pred.pose_scores[k], 1.0 if k == gt.pose else 0.0)
        l_pose += v
        grad[6 + k] = g

    total = l_o + weights.alpha1 * l_iou + weights.alpha2 * l_r + l_pose
    terms = dict(l_o=l_o, l_iou=l_iou, l_r=l_r, l_pose=l_pose)
    return LossValue(total, grad, terms, saturated)


def eod_kink_distance(pred: EodPred, gt: EodTarget) -> float:
    probs = [pred.objectness, *pred.pose_scores]
    return min(_iou_kink_distance(pred.box, gt.box), abs(pred.r - gt.r),
               min(_prob_kink_distance(p) for p in probs))


# ------------------------------------------------------- side projection line


@dataclass
class SplPred:
    theta_n: float
    pwc: Tuple[float, float]
    conf: float

    def vector(self) -> np.ndarray:
        return np.array([self.theta_n, *self.pwc, self.conf], dtype=float)

    @classmethod
    def from_vector(cls, x) -> "SplPred":
        return cls(float(x[0]), (float(x[1]), float(x[2])), float(x[3]))


@dataclass
class SplTarget:
    theta_n: float
    pwc: Tuple[float, float]
    present: bool


def spl_loss(pred: SplPred, gt: SplTarget, weights: LossWeights = LossWeights()) -> LossValue:
    """alpha3 * |theta_n error| + BCE(conf, present) + alpha4 * (|dx| + |dy|)."""
    if not -1.0 <= pred.theta_n <= 1.0:
        raise ValueError(f"normalized angle {pred.theta_n} outside [-1, 1]")
    grad = np.zeros(4)
    l_conf, grad[3] = bce(pred.conf, 1.0 if gt.present else 0.0)
    l_theta = l_pc = 0.0
    if gt.present:
        l_theta, g = _l1(pred.theta_n - gt.theta_n)
        grad[0] = weights.alpha3 * g
        lx, gx = _l1(pred.pwc[0] - gt.pwc[0])
        ly, gy = _l1(pred.pwc[1] - gt.pwc[1])
        l_pc = lx + ly
        grad[1] = weights.alpha4 * gx
        grad[2] = weights.alpha4 * gy
    total = weights.alpha3 * l_theta + l_conf + weights.alpha4 * l_pc
    return LossValue(total, grad, dict(l_theta=l_theta, l_conf=l_conf, l_pc=l_pc))


def spl_kink_distance(pred: SplPred, gt: SplTarget) -> float:
    d = min(_prob_kink_distance(pred.conf), 1.0 - abs(pred.theta_n))
    if gt.present:
        d = min(d, abs(pred.theta_n - gt.theta_n), abs(pred.pwc[0] - gt.pwc[0]),
                abs(pred.pwc[1] - gt.pwc[1]))
    return d


# ------------------------------------------------------------ joint shape


@dataclass(frozen=True)
class Gaussian2:
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=float).reshape(2))
        s = np.asarray(self.sigma, dtype=float).reshape(2, 2)
        object.__setattr__(self, "sigma", s)

    def check(self):
        s = self.sigma
        if abs(s[0, 1] - s[1, 0]) > 1e-9 * max(1.0, abs(s).max()):
            raise ValueError("covariance not symmetric")
        if s[0, 0] <= 0 or np.linalg.det(s) <= 0:
            raise ValueError("covariance not positive definite")


def gaussian_from_params(pwc, theta_deg: float, w_prime: float, h_prime: float) -> Gaussian2:
    """mean = wheel midpoint, covariance R diag(w'/2, h') R^T."""
    if w_prime <= DEGENERATE_EPS or h_prime <= DEGENERATE_EPS:
        raise ValueError(f"degenerate Gaussian: w'={w_prime}, h'={h_prime}")
    t = theta_deg * DEG
    c, s = math.cos(t), math.sin(t)
    rot = np.array([[c, -s], [s, c]])
    sigma = rot @ np.diag([w_prime / 2, h_prime]) @ rot.T
    sigma = (sigma + sigma.T) / 2
    return Gaussian2(np.asarray(pwc, dtype=float), sigma)


# (cx, cy, w, h, r, pwc_x, pwc_y, theta_deg)
N_SHAPE_PARAMS = 8


def shape_params(p: P3DVR) -> np.ndarray:
    return np.array([p.eb.cx, p.eb.cy, p.eb.w, p.eb.h, p.eb.r,
                     p.spl.pwc_x, p.spl.pwc_y, p.spl.theta_deg], dtype=float)


def _shape_scales(x: np.ndarray, side: Side):
    """w', h' and their gradients over the 8 shape parameters."""
    cx, cy, w, h, r, px, py, th = x
    t = th * DEG
    c, s = math.cos(t), math.sin(t)
    tn = math.tan(t)

    sh = -s * (cx - px) + c * (cy - py)
    sgn = 1.0 if sh >= 0 else -1.0
    hp = abs(sh)
    g_h = sgn * np.array([-s, c, 0.0, 0.0, 0.0, s, -c,
                          (-c * (cx - px) - s * (cy - py)) * DEG])

    xs = cx - w / 2 + r * w
    if side is Side.LEFT:
        dx = r * w
        g_dx = np.array([0.0, 0.0, r, 0.0, w, 0.0, 0.0, 0.0])
    else:
        dx = -(1.0 - r) * w
        g_dx = np.array([0.0, 0.0, -(1.0 - r), 0.0, w, 0.0, 0.0, 0.0])
    dy = py + tn * (xs - px) - (cy - h / 2)
    g_dy = np.array([tn, -1.0, tn * (r - 0.5), 0.5, tn * w, -tn, 1.0,
                     (1.0 + tn * tn) * (xs - px) * DEG])
    wp = math.hypot(dx, dy)
    g_w = (dx * g_dx + dy * g_dy) / wp if wp > 0 else np.zeros(8)
    return wp, g_w, hp, g_h


def shape_side(p: P3DVR, fallback: Optional[Side] = None) -> Side:
    side = side_face_side(p.eb.pose) or fallback
    if side is None:
        raise ValueError(f"pose {p.eb.pose} has no side face")
    return side


def to_gaussian(p: P3DVR, side: Optional[Side] = None) -> Gaussian2:
    if not p.spl.present:
        raise ValueError("P3DVR has no side projection line")
    side = side or shape_side(p)
    wp, _, hp, _ = _shape_scales(shape_params(p), side)
    return gaussian_from_params(p.spl.pwc, p.spl.theta_deg, wp, hp)


def _gaussian_with_grad(x: np.ndarray, side: Side):
    """Gaussian of the shape parameters plus d(sigma)/dx as (8, 2, 2)."""
    wp, g_w, hp, g_h = _shape_scales(x, side)
    g = gaussian_from_params((x[5], x[6]), x[7], wp, hp)
    a, b = wp / 2, hp
    t = x[7] * DEG
    c, s = math.cos(t), math.sin(t)
    uu = np.array([[c * c, c * s], [c * s, s * s]])
    vv = np.array([[s * s, -c * s], [-c * s, c * c]])
    d_t = (a - b) * np.array([[-2 * c * s, c * c - s * s], [c * c - s * s, 2 * c * s]])
    d_sigma = (0.5 * g_w)[:, None, None] * uu + g_h[:, None, None] * vv
    d_sigma[7] += d_t * DEG
    return g, d_sigma


def kl_divergence(p: Gaussian2, q: Gaussian2) -> float:
    """KL(p || q) for 2D Gaussians, closed form."""
    qi = np.linalg.inv(q.sigma)
    d = q.mu - p.mu
    _, ld_p = np.linalg.slogdet(p.sigma)
    _, ld_q = np.linalg.slogdet(q.sigma)
    return 0.5 * (np.trace(qi @ p.sigma) + d @ qi @ d - 2.0 + ld_q - ld_p)


def bidirectional_kld(gp: Gaussian2, gt: Gaussian2) -> float:
    """Mean of the two KL directions; symmetric by construction."""
    gp.check()
    gt.check()
    pi = np.linalg.inv(gp.sigma)
    ti = np.linalg.inv(gt.sigma)
    d = gt.mu - gp.mu
    # log-determinants cancel between the two directions
    val = 0.25 * (np.trace(ti @ gp.sigma) + np.trace(pi @ gt.sigma) + d @ (pi + ti) @ d - 4.0)
    return max(float(val), 0.0)


def _kld_grad(gp: Gaussian2, gt: Gaussian2):
    """d D / d sigma_p (2x2) and d D / d mu_p."""
    pi = np.linalg.inv(gp.sigma)
    ti = np.linalg.inv(gt.sigma)
    d = gt.mu - gp.mu
    g_sigma = 0.25 * (ti - pi @ gt.sigma @ pi - pi @ np.outer(d, d) @ pi)
    g_mu = -0.5 * (pi + ti) @ d
    return g_sigma, g_mu


def olc_transform(d_kl: float) -> Tuple[float, float]:
    """1 - 1/(1 + ln(1 + D)) and its derivative."""
    u = 1.0 + math.log1p(d_kl)
    return 1.0 - 1.0 / u, 1.0 / (u * u * (1.0 + d_kl))


def olc_pair(x_pred: np.ndarray, side_pred: Side, gt: Gaussian2) -> Tuple[float, np.ndarray]:
    """Per-pair shape term and gradient over the 8 predicted shape parameters."""
    gp, d_sigma = _gaussian_with_grad(np.asarray(x_pred, dtype=float), side_pred)
    d_kl = bidirectional_kld(gp, gt)
    f, df = olc_transform(d_kl)
    g_sigma, g_mu = _kld_grad(gp, gt)
    grad = np.einsum("kij,ij->k", d_sigma, g_sigma)
    grad[5] += g_mu[0]
    grad[6] += g_mu[1]
    return f, df * grad


def olc_loss(pairs: Sequence[Tuple[P3DVR, P3DVR]], weights: LossWeights = LossWeights()) -> LossValue:
    """alpha5 times the mean shape term over pairs whose target has an SPL.

    Gradient is (N', 8) over ``shape_params`` of each prediction.  A
    prediction whose pose shows no flank borrows the target's flank side.
    """
    if not pairs:
        return LossValue(0.0, np.zeros((0, N_SHAPE_PARAMS)))
    n = len(pairs)
    total = 0.0
    grads = np.zeros((n, N_SHAPE_PARAMS))
    for i, (pred, gt) in enumerate(pairs):
        if not gt.spl.present:
            raise ValueError("shape loss pairs need targets with a side projection line")
        side_t = shape_side(gt)
        gg = to_gaussian(gt, side_t)
        f, g = olc_pair(shape_params(pred), shape_side(pred, side_t), gg)
        total += f
        grads[i] = g
    scale = weights.alpha5 / n
    return LossValue(scale * total, scale * grads)


# ----------------------------------------------------------------- batches


@dataclass
class Prediction:
    objectness: float
    box: Tuple[float, float, float, float]
    r: float
    pose_scores: Sequence[float]
    theta_n: float
    pwc: Tuple[float, float]
    spl_conf: float

    def eod(self) -> EodPred:
        return EodPred(self.objectness, self.box, self.r, self.pose_scores)

    def spl(self) -> SplPred:
        return SplPred(self.theta_n, self.pwc, self.spl_conf)

    def p3dvr(self) -> P3DVR:
        from .geometry import make_p3dvr

        pose = int(np.argmax(self.pose_scores))
        return make_p3dvr(*self.box, self.r, pose, self.pwc[0], self.pwc[1],
                          90.0 * self.theta_n, True)


@dataclass
class Target:
    box: Tuple[float, float, float, float]
    r: float
    pose: int
    theta_n: float
    pwc: Tuple[float, float]
    present: bool
    objectness: float = 1.0

    def eod(self) -> EodTarget:
        return EodTarget(self.box, self.r, self.pose, self.objectness)

    def spl(self) -> SplTarget:
        return SplTarget(self.theta_n, self.pwc, self.present)

    def p3dvr(self) -> P3DVR:
        from .geometry import make_p3dvr

        return make_p3dvr(*self.box, self.r, self.pose, self.pwc[0], self.pwc[1],
                          90.0 * self.theta_n, self.present)

    @property
    def has_shape(self) -> bool:
        return self.present and side_face_side(self.pose) is not None


@dataclass
class LossBreakdown:
    l_o: float
    l_iou: float
    l_r: float
    l_pose: float
    l_theta: float
    l_conf: float
    l_pc: float
    l_olc: float
    total: float
    weights: LossWeights = field(default_factory=LossWeights)

    @property
    def l_eod(self) -> float:
        w = self.weights
        return self.l_o + w.alpha1 * self.l_iou + w.alpha2 * self.l_r + self.l_pose

    @property
    def l_spl(self) -> float:
        w = self.weights
        return w.alpha3 * self.l_theta + self.l_conf + w.alpha4 * self.l_pc


def total_loss(preds: Sequence[Prediction], gts: Sequence[Target],
               weights: LossWeights = LossWeights()) -> LossBreakdown:
    """Mean box and line terms over N positives plus the shape term over N'."""
    if len(preds) != len(gts):
        raise ValueError("predictions and targets must be matched one-to-one")
    n = len(preds)
    if n == 0:
        raise ValueError("no positive samples")
    acc = dict(l_o=0.0, l_iou=0.0, l_r=0.0, l_pose=0.0, l_theta=0.0, l_conf=0.0, l_pc=0.0)
    # fixed left-to-right reduction keeps results bit-stable
    for p, g in zip(preds, gts):
        for k, v in eod_loss(p.eod(), g.eod(), weights).terms.items():
            acc[k] += v
        for k, v in spl_loss(p.spl(), g.spl(), weights).terms.items():
            acc[k] += v
    acc = {k: v / n for k, v in acc.items()}
    pairs = [(p.p3dvr(), g.p3dvr()) for p, g in zip(preds, gts) if g.has_shape]
    l_olc = olc_loss(pairs, weights).value
    out = LossBreakdown(**acc, l_olc=l_olc, total=0.0, weights=weights)
    out.total = out.l_eod + out.l_spl + out.l_olc
    return out


# ------------------------------------------------------------ grad checking


@dataclass
class GradCheckReport:
    max_rel_error: float
    analytic: np.ndarray
    numeric: np.ndarray
    skipped: bool = False
    reason: str = ""
    tolerance: float = 1e-4

    @property
    def passed(self) -> bool:
        return self.skipped or self.max_rel_error < self.tolerance


def grad_check(f: Callable[[np.ndarray], Tuple[float, np.ndarray]], point, step: float = 1e-5,
               tolerance: float = 1e-4,
               kink_distance: Optional[Callable[[np.ndarray], float]] = None) -> GradCheckReport:
    """Central differences against the analytic gradient.

    The error is normwise: max |analytic - numeric| over the largest
    gradient magnitude.  Points within ``step`` of a non-smooth locus (as
    reported by ``kink_distance``) are skipped rather than failed.
    """
    x = np.asarray(point, dtype=float)
    if kink_distance is not None:
        d = kink_distance(x)
        if d <= 2 * step:
            return GradCheckReport(float("nan"), np.array([]), np.array([]), True,
                                   f"within {d:.3g} of a non-smooth point", tolerance)
    _, analytic = f(x)
    analytic = np.asarray(analytic, dtype=float).ravel()
    numeric = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        numeric[i] = (f(x + e)[0] - f(x - e)[0]) / (2 * step)
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-12)
    err = float(np.abs(analytic - numeric).max(initial=0.0) / scale)
    return GradCheckReport(err, analytic, numeric, False, "", tolerance)
