"""Attribute-precision metrics for pseudo-3D detections, plus COCO-style AP/AR.

Every attribute metric is the fraction of IoU-matched pairs whose attribute
error is within a threshold, averaged over a grid of IoU thresholds and a
grid of attribute thresholds:

    ABP  box tightness   1 - IoU        <= lb
    ARP  split ratio     |r - r_gt|     <= lr
    PP   pose            pose == pose_gt
    AAP  SPL angle       |tn - tn_gt|   <= la   (pairs whose target has an SPL)
    APP  wheel midpoint  ||p - p_gt||   <= lp   (pairs whose target has an SPL)
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .geometry import P3DVR

# attribute thresholds are inclusive; the slack absorbs decimal round-off
# such as 0.55 - 0.5 = 0.050000000000000044
BOUNDARY_SLACK = 1e-12

AREA_BUCKETS = {
    "small": (0.0, 1024.0),
    "medium": (1024.0, 9216.0),
    "large": (9216.0, math.inf),
    "all": (0.0, math.inf),
}
BUCKET_ORDER = ("small", "medium", "large", "all")
HEADLINE = ("abp", "arp", "pp", "aap", "app", "ap", "ar")


def arange_inclusive(start: float, step: float, stop: float) -> Tuple[float, ...]:
    n = int(round((stop - start) / step))
    return tuple(round(start + k * step, 10) for k in range(n + 1))


@dataclass(frozen=True)
class ThresholdSchedule:
    lambdas: Tuple[float, ...] = arange_inclusive(0.5, 0.05, 0.95)
    lambda_b: Tuple[float, ...] = arange_inclusive(0.02, 0.02, 0.2)
    lambda_r: Tuple[float, ...] = arange_inclusive(0.01, 0.01, 0.1)
    lambda_a: Tuple[float, ...] = arange_inclusive(0.01, 0.01, 0.1)
    lambda_p: Tuple[float, ...] = arange_inclusive(2.0, 2.0, 20.0)


def area_bucket(area: float) -> str:
    for name in ("small", "medium", "large"):
        lo, hi = AREA_BUCKETS[name]
        if lo < area <= hi:
            return name
    raise ValueError(f"area {area} outside every bucket")


def in_bucket(area: float, bucket: str) -> bool:
    lo, hi = AREA_BUCKETS[bucket]
    return lo < area <= hi


@dataclass
class GtRecord:
    image_id: str
    p3dvr: P3DVR

    @property
    def spl_present(self) -> bool:
        return self.p3dvr.spl.present

    @property
    def area(self) -> float:
        return self.p3dvr.eb.area

    @property
    def bucket(self) -> str:
        return area_bucket(self.area)


@dataclass
class PredRecord:
    image_id: str
    p3dvr: P3DVR
    score: float
    spl_conf: float = 1.0


def iou_matrix(a: Sequence[P3DVR], b: Sequence[P3DVR]) -> np.ndarray:
    """Pairwise IoU, rows follow ``a``."""
    if not a or not b:
        return np.zeros((len(a), len(b)))
    A = np.array([p.eb.xyxy() for p in a])
    B = np.array([p.eb.xyxy() for p in b])
    iw = np.minimum(A[:, None, 2], B[None, :, 2]) - np.maximum(A[:, None, 0], B[None, :, 0])
    ih = np.minimum(A[:, None, 3], B[None, :, 3]) - np.maximum(A[:, None, 1], B[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (A[:, 2] - A[:, 0]) * (A[:, 3] - A[:, 1])
    area_b = (B[:, 2] - B[:, 0]) * (B[:, 3] - B[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(inter > 0, inter / np.where(union > 0, union, 1.0), 0.0)


@dataclass
class MatchSet:
    pairs: List[Tuple[int, int, float]]  # (gt index, pred index, IoU)
    spl_pairs: List[Tuple[int, int, float]]

    @property
    def n_t(self) -> int:
        return len(self.pairs)

    @property
    def n_t_prime(self) -> int:
        return len(self.spl_pairs)


def score_order(preds: Sequence[PredRecord]) -> List[int]:
    return sorted(range(len(preds)), key=lambda j: (-preds[j].score, j))


def greedy_match(ious: np.ndarray, order: Sequence[int], lam: float,
                 gt_ignore: Optional[Sequence[bool]] = None) -> Dict[int, int]:
    """pred index -> gt index; each pred in ``order`` takes the best free gt.

    With ``gt_ignore`` a pred prefers non-ignored targets and only falls
    back to an ignored one when no regular target qualifies.
    """
    n_gt = ious.shape[0]
    taken = np.zeros(n_gt, dtype=bool)
    ignore = np.zeros(n_gt, dtype=bool) if gt_ignore is None else np.asarray(gt_ignore, dtype=bool)
    out = {}
    for j in order:
        col = ious[:, j]
        best = -1
        for want_ignored in (False, True):
            ok = (~taken) & (ignore == want_ignored) & (col >= lam)
            if ok.any():
                cand = np.flatnonzero(ok)
                best = int(cand[np.argmax(col[cand])])  # argmax keeps the lower index on ties
                break
        if best >= 0:
            taken[best] = True
            out[j] = best
    return out


def match_pairs(gts: Sequence[GtRecord], preds: Sequence[PredRecord], lam: float) -> MatchSet:
    """One-to-one greedy matching within a single image."""
    ious = iou_matrix([g.p3dvr for g in gts], [p.p3dvr for p in preds])
    m = greedy_match(ious, score_order(preds), lam)
    pairs = sorted((g, j, float(ious[g, j])) for j, g in m.items())
    spl = [t for t in pairs if gts[t[0]].spl_present]
    return MatchSet(pairs, spl)


def group_by_image(gts, preds):
    groups = defaultdict(lambda: ([], [], [], []))
    for i, g in enumerate(gts):
        groups[g.image_id][0].append(g)
        groups[g.image_id][2].append(i)
    for j, p in enumerate(preds):
        groups[p.image_id][1].append(p)
        groups[p.image_id][3].append(j)
    return [groups[k] for k in sorted(groups)]


def match_all(gts: Sequence[GtRecord], preds: Sequence[PredRecord], lam: float) -> MatchSet:
    """Per-image matching, reported with global indices."""
    pairs = []
    for g_list, p_list, g_idx, p_idx in group_by_image(gts, preds):
        ms = match_pairs(g_list, p_list, lam)
        pairs.extend((g_idx[g], p_idx[j], iou) for g, j, iou in ms.pairs)
    pairs.sort()
    return MatchSet(pairs, [t for t in pairs if gts[t[0]].spl_present])


def _passes(err: float, thr: float) -> bool:
    return err <= thr + BOUNDARY_SLACK


@dataclass
class AttributeCounts:
    """Integer pass counts for one IoU threshold; None fields mean undefined."""
    n_t: int
    n_t_prime: int
    abp: List[int]
    arp: List[int]
    pp: int
    aap: List[int]
    app: List[int]

    def precisions(self) -> Dict[str, Optional[List[float]]]:
        def frac(counts, n):
            return None if n == 0 else [c / n for c in counts]

        return {
            "abp": frac(self.abp, self.n_t),
            "arp": frac(self.arp, self.n_t),
            "pp": frac([self.pp], self.n_t),
            "aap": frac(self.aap, self.n_t_prime),
            "app": frac(self.app, self.n_t_prime),
        }


def attribute_counts(gts: Sequence[GtRecord], preds: Sequence[PredRecord], ms: MatchSet,
                     schedule: ThresholdSchedule = ThresholdSchedule()) -> AttributeCounts:
    abp = [0] * len(schedule.lambda_b)
    arp = [0] * len(schedule.lambda_r)
    aap = [0] * len(schedule.lambda_a)
    app = [0] * len(schedule.lambda_p)
    pp = 0
    for gi, pj, iou in ms.pairs:
        g, p = gts[gi].p3dvr, preds[pj].p3dvr
        box_err = 1.0 - iou
        r_err = abs(p.eb.r - g.eb.r)
        abp = [c + _passes(box_err, t) for c, t in zip(abp, schedule.lambda_b)]
        arp = [c + _passes(r_err, t) for c, t in zip(arp, schedule.lambda_r)]
        pp += int(p.eb.pose == g.eb.pose)
    for gi, pj, _ in ms.spl_pairs:
        g, p = gts[gi].p3dvr, preds[pj].p3dvr
        a_err = abs(p.spl.theta_deg / 90.0 - g.spl.theta_deg / 90.0)
        p_err = math.hypot(p.spl.pwc_x - g.spl.pwc_x, p.spl.pwc_y - g.spl.pwc_y)
        aap = [c + _passes(a_err, t) for c, t in zip(aap, schedule.lambda_a)]
        app = [c + _passes(p_err, t) for c, t in zip(app, schedule.lambda_p)]
    return AttributeCounts(ms.n_t, ms.n_t_prime, abp, arp, pp, aap, app)


def attribute_precisions(gts, preds, ms: MatchSet, schedule: ThresholdSchedule = ThresholdSchedule()):
    """Per-threshold precisions at one IoU threshold (None when undefined)."""
    return attribute_counts(gts, preds, ms, schedule).precisions()


def _restrict(ms: MatchSet, gts: Sequence[GtRecord], bucket: str) -> MatchSet:
    pairs = [t for t in ms.pairs if in_bucket(gts[t[0]].area, bucket)]
    return MatchSet(pairs, [t for t in pairs if gts[t[0]].spl_present])


def _mean(xs):
    xs = [x for x in xs if x is not None]
    return None if not xs else float(np.mean(xs))


# ------------------------------------------------------------- COCO AP/AR

RECALL_GRID = np.linspace(0.0, 1.0, 101)
MAX_DETS = 100


def coco_ap_ar_at(gts: Sequence[GtRecord], preds: Sequence[PredRecord], lam: float,
                  bucket: str = "all") -> Tuple[Optional[float], Optional[float]]:
    """101-point interpolated AP and max recall at one IoU threshold (fractions)."""
    scores, tps, n_pos = [], [], 0
    for g_list, p_list, _, _ in group_by_image(gts, preds):
        ignore = [not in_bucket(g.area, bucket) for g in g_list]
        n_pos += ignore.count(False)
        order = score_order(p_list)[:MAX_DETS]
        ious = iou_matrix([g.p3dvr for g in g_list], [p.p3dvr for p in p_list])
        m = greedy_match(ious, order, lam, ignore)
        for j in order:
            if j in m:
                if ignore[m[j]]:
                    continue
                tps.append(True)
            else:
                if not in_bucket(p_list[j].p3dvr.eb.area, bucket):
                    continue
                tps.append(False)
            scores.append(p_list[j].score)
    if n_pos == 0:
        return None, None
    if not scores:
        return 0.0, 0.0
    order = np.argsort(-np.asarray(scores), kind="mergesort")
    tp = np.asarray(tps, dtype=float)[order]
    tp_c = np.cumsum(tp)
    fp_c = np.cumsum(1.0 - tp)
    recall = tp_c / n_pos
    precision = tp_c / (tp_c + fp_c)
    # precision envelope, monotone non-increasing in recall
    precision = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_GRID, side="left")
    q = np.where(idx < len(precision), precision[np.minimum(idx, len(precision) - 1)], 0.0)
    return float(q.mean()), float(recall[-1])


def coco_ap_ar(gts, preds, lambdas: Sequence[float] = ThresholdSchedule().lambdas,
               bucket: str = "all") -> Tuple[Optional[float], Optional[float]]:
    """AP and AR in percent, averaged over ``lambdas``."""
    per = [coco_ap_ar_at(gts, preds, lam, bucket) for lam in lambdas]
    ap = _mean([a for a, _ in per])
    ar = _mean([r for _, r in per])
    return (None if ap is None else 100 * ap), (None if ar is None else 100 * ar)


# --------------------------------------------------------------- reports


def score(values: Sequence[Optional[float]]) -> Optional[float]:
    """Arithmetic mean of the seven headline metrics."""
    vals = list(values)
    if len(vals) != 7:
        raise ValueError("score needs exactly seven metrics")
    if any(v is None for v in vals):
        return None
    return sum(vals) / 7.0


@dataclass
class MetricReport:
    abp: Optional[float]
    arp: Optional[float]
    pp: Optional[float]
    aap: Optional[float]
    app: Optional[float]
    ap: Optional[float]
    ar: Optional[float]
    score: Optional[float]
    per_threshold: Dict[str, Dict[str, object]] = field(default_factory=dict)
    per_area: Dict[str, Dict[str, Optional[float]]] = field(default_factory=dict)
    undefined: List[str] = field(default_factory=list)

    def headline(self) -> Dict[str, Optional[float]]:
        return {k: getattr(self, k) for k in (*HEADLINE, "score")}

    def to_json(self) -> dict:
        return {**self.headline(), "per_threshold": self.per_threshold,
                "per_area": self.per_area, "undefined": self.undefined}

    def table(self) -> str:
        cols = ("ABP", "ARP", "PP", "AAP", "APP", "AP", "AR", "Score")
        lines = ["Area    " + "".join(f"{c:>8}" for c in cols)]
        rows = self.per_area or {"all": self.headline()}
        for name in BUCKET_ORDER:
            if name not in rows:
                continue
            vals = [rows[name].get(c.lower()) for c in cols]
            cells = "".join(f"{'-':>8}" if v is None else f"{v:8.2f}" for v in vals)
            lines.append(f"{name:<8}" + cells)
        return "\n".join(lines)


def _bucket_metrics(gts, preds, matches: Dict[float, MatchSet], schedule, bucket):
    per_lambda = {}
    agg = defaultdict(list)
    for lam in schedule.lambdas:
        ms = _restrict(matches[lam], gts, bucket)
        prec = attribute_precisions(gts, preds, ms, schedule)
        per_lambda[f"{lam:.2f}"] = prec
        for k, v in prec.items():
            agg[k].append(None if v is None else float(np.mean(v)))
    out = {k: (None if _mean(agg[k]) is None else 100 * _mean(agg[k]))
           for k in ("abp", "arp", "pp", "aap", "app")}
    out["ap"], out["ar"] = coco_ap_ar(gts, preds, schedule.lambdas, bucket)
    out["score"] = score([out[k] for k in HEADLINE])
    return out, per_lambda


def evaluate(gts: Sequence[GtRecord], preds: Sequence[PredRecord],
             schedule: ThresholdSchedule = ThresholdSchedule(),
             buckets: Sequence[str] = BUCKET_ORDER) -> MetricReport:
    matches = {lam: match_all(gts, preds, lam) for lam in schedule.lambdas}
    per_area, per_threshold = {}, {}
    for b in buckets:
        per_area[b], per_lambda = _bucket_metrics(gts, preds, matches, schedule, b)
        if b == "all":
            per_threshold = per_lambda
    head = per_area.get("all") or _bucket_metrics(gts, preds, matches, schedule, "all")[0]
    undefined = sorted(f"{b}:{k}" for b, row in per_area.items() for k, v in row.items() if v is None)
    return MetricReport(**{k: head[k] for k in HEADLINE}, score=head["score"],
                        per_threshold=per_threshold, per_area=per_area, undefined=undefined)
