"""Turn ground truth into predictions with controlled noise, and the pass
rates that noise should produce under the attribute metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .evaluation import ThresholdSchedule
from .geometry import P3DVR, ExtendedBBox, SideProjectionLine


@dataclass(frozen=True)
class NoiseModel:
    """IoU with the target is U(iou_low, 1) (box scaled about its center);
    |dr| ~ U(0, r_max); |d theta_n| ~ U(0, theta_max); the wheel midpoint
    moves by a radius ~ U(0, pwc_max) in a random direction; the pose is
    kept with probability pose_keep, else replaced by another class."""

    iou_low: float = 0.5
    r_max: float = 0.12
    theta_max: float = 0.15
    pwc_max: float = 25.0
    pose_keep: float = 0.8

    def __post_init__(self):
        if not 0.0 < self.iou_low <= 1.0:
            raise ValueError("iou_low must be in (0, 1]")
        if not (0 <= self.r_max < 0.5 and 0 <= self.theta_max < 1.0):
            raise ValueError("r_max < 0.5 and theta_max < 1 keep a valid sign choice")


def _inward(v: float, d: float, lo: float, hi: float, sign: float) -> float:
    out = v + sign * d
    if out < lo or out > hi:
        out = v - sign * d
    return out


def perturb_label(p: P3DVR, rng: np.random.Generator, noise: NoiseModel = NoiseModel()) -> P3DVR:
    eb, spl = p.eb, p.spl
    u = rng.uniform(noise.iou_low, 1.0)
    k = 1.0 / math.sqrt(u)  # enlarged box contains the target, so IoU = 1/k^2 = u
    r = _inward(eb.r, rng.uniform(0, noise.r_max), 0.0, 1.0, rng.choice((-1.0, 1.0)))
    pose = eb.pose
    if rng.uniform() >= noise.pose_keep:
        pose = int((eb.pose + rng.integers(1, 8)) % 8)
    tn = _inward(spl.theta_deg / 90.0, rng.uniform(0, noise.theta_max), -1.0, 1.0,
                 rng.choice((-1.0, 1.0)))
    rad, phi = rng.uniform(0, noise.pwc_max), rng.uniform(0, 2 * math.pi)
    new_eb = ExtendedBBox(eb.cx, eb.cy, eb.w * k, eb.h * k, float(r), pose)
    new_spl = SideProjectionLine(spl.pwc_x + rad * math.cos(phi), spl.pwc_y + rad * math.sin(phi),
                                 90.0 * tn, spl.present)
    return P3DVR(new_eb, new_spl, p.truncated)


def perturb_labels(labels: Sequence[P3DVR], rng, noise: NoiseModel = NoiseModel()) -> List[P3DVR]:
    return [perturb_label(p, rng, noise) for p in labels]


def expected_rates(noise: NoiseModel = NoiseModel(), schedule: ThresholdSchedule = ThresholdSchedule()) -> dict:
    """Analytic ABP/ARP/PP/AAP/APP (percent) for one-to-one matched noise."""
    lo = noise.iou_low

    def p_u_at_least(a):
        return min(1.0, max(0.0, (1.0 - max(a, lo)) / (1.0 - lo)))

    abp = []
    for lam in schedule.lambdas:
        denom = p_u_at_least(lam)
        if denom == 0:
            continue
        abp.append(np.mean([p_u_at_least(max(lam, 1.0 - lb)) / denom for lb in schedule.lambda_b]))

    def uniform_cdf(thr, hi):
        return 1.0 if hi == 0 else min(1.0, thr / hi)

    return {
        "abp": 100 * float(np.mean(abp)),
        "arp": 100 * float(np.mean([uniform_cdf(t, noise.r_max) for t in schedule.lambda_r])),
        "pp": 100 * noise.pose_keep,
        "aap": 100 * float(np.mean([uniform_cdf(t, noise.theta_max) for t in schedule.lambda_a])),
        "app": 100 * float(np.mean([uniform_cdf(t, noise.pwc_max) for t in schedule.lambda_p])),
    }
