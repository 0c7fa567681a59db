"""Random smooth test points for the hand-written loss gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Tuple

import numpy as np

from .geometry import P3DVR, make_p3dvr, side_face_side
from .losses import (
    EodPred,
    EodTarget,
    GradCheckReport,
    SplPred,
    SplTarget,
    eod_kink_distance,
    eod_loss,
    grad_check,
    olc_pair,
    shape_params,
    shape_side,
    spl_kink_distance,
    spl_loss,
    to_gaussian,
)

FLANK_POSES = (1, 2, 3, 5, 6, 7)


def random_flank_p3dvr(rng: np.random.Generator, max_theta: float = 60.0) -> P3DVR:
    """A valid P3DVR with a visible side face and a present SPL."""
    pose = int(rng.choice(FLANK_POSES))
    w, h = rng.uniform(20, 300), rng.uniform(20, 300)
    cx, cy = rng.uniform(200, 1500), rng.uniform(200, 900)
    r = {2: 1.0, 6: 0.0}.get(pose, rng.uniform(0.1, 0.9))
    px = cx + rng.uniform(-0.4, 0.4) * w
    py = cy + h / 2 - rng.uniform(0.02, 0.3) * h
    return make_p3dvr(cx, cy, w, h, r, pose, px, py, rng.uniform(-max_theta, max_theta), True)


def _prob(rng, n=None):
    return rng.uniform(0.05, 0.95, n)


def eod_case(rng) -> Tuple[Callable, np.ndarray, Callable]:
    box = np.array([rng.uniform(100, 500), rng.uniform(100, 500), rng.uniform(20, 200), rng.uniform(20, 200)])
    gt = EodTarget(tuple(box), float(rng.uniform(0, 1)), int(rng.integers(8)), float(rng.integers(2)))
    pbox = box + rng.normal(0, 0.1, 4) * np.r_[box[2:], box[2:]]
    pbox[2:] = np.abs(pbox[2:]) + 1.0
    x0 = EodPred(float(_prob(rng)), tuple(pbox), float(rng.uniform(0, 1)), tuple(_prob(rng, 8))).vector()

    def f(x):
        v = eod_loss(EodPred.from_vector(x), gt)
        return v.value, v.grad

    return f, x0, lambda x: eod_kink_distance(EodPred.from_vector(x), gt)


def spl_case(rng):
    gt = SplTarget(float(rng.uniform(-1, 1)), (rng.uniform(0, 500), rng.uniform(0, 500)), bool(rng.integers(2)))
    x0 = np.array([rng.uniform(-0.95, 0.95), gt.pwc[0] + rng.normal(0, 10),
                   gt.pwc[1] + rng.normal(0, 10), _prob(rng)])

    def f(x):
        v = spl_loss(SplPred.from_vector(x), gt)
        return v.value, v.grad

    return f, x0, lambda x: spl_kink_distance(SplPred.from_vector(x), gt)


def olc_case(rng):
    gt = random_flank_p3dvr(rng)
    pred = random_flank_p3dvr(rng)
    # keep the prediction near its target so the Gaussians overlap
    pred = make_p3dvr(gt.eb.cx + rng.normal(0, 10), gt.eb.cy + rng.normal(0, 10),
                      gt.eb.w * rng.uniform(0.8, 1.2), gt.eb.h * rng.uniform(0.8, 1.2),
                      pred.eb.r if pred.eb.pose not in (2, 6) else rng.uniform(0.1, 0.9), pred.eb.pose,
                      gt.spl.pwc_x + rng.normal(0, 5), gt.spl.pwc_y + rng.normal(0, 5),
                      float(np.clip(gt.spl.theta_deg + rng.normal(0, 10), -70, 70)), True)
    side_t = shape_side(gt)
    gg = to_gaussian(gt, side_t)
    side_p = shape_side(pred, side_t)
    return (lambda x: olc_pair(x, side_p, gg)), shape_params(pred), None


CASES = {"eod": eod_case, "spl": spl_case, "olc": olc_case}


@dataclass
class GradSummary:
    name: str
    checked: int
    skipped: int
    worst: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.checked > 0 and self.worst < self.tolerance


def run_gradchecks(seed: int, n: int, tolerance: float = 1e-4,
                   names=("eod", "spl", "olc")) -> Dict[str, GradSummary]:
    """``n`` checked (non-skipped) points per loss family."""
    rng = np.random.default_rng(seed)
    out = {}
    for name in names:
        make = CASES[name]
        checked = skipped = 0
        worst = 0.0
        while checked < n:
            f, x0, kink = make(rng)
            rep: GradCheckReport = grad_check(f, x0, tolerance=tolerance, kink_distance=kink)
            if rep.skipped:
                skipped += 1
                continue
            checked += 1
            worst = max(worst, rep.max_rel_error)
        out[name] = GradSummary(name, checked, skipped, worst, tolerance)
    return out
