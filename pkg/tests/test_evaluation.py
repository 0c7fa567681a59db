import json
import math
import random
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from eval_oracle import counts as oracle_counts
from eval_oracle import headline as oracle_headline
from eval_oracle import plain
from p3dvd.evaluation import (
    AttributeCounts,
    GtRecord,
    PredRecord,
    ThresholdSchedule,
    area_bucket,
    attribute_counts,
    attribute_precisions,
    coco_ap_ar,
    coco_ap_ar_at,
    evaluate,
    match_all,
    match_pairs,
    score,
)
from p3dvd.geometry import make_p3dvr
from p3dvd.records import AnnotationRecord

FIXTURE = Path(__file__).parent / "fixtures" / "eval_3gt4pred.json"
SCHED = ThresholdSchedule()


def gt(cx, cy, w, h, r=0.5, pose=0, spl=None, image="a"):
    spl = spl or (None, None, None, None)
    return GtRecord(image, make_p3dvr(cx, cy, w, h, r, pose, *spl))


def pred(cx, cy, w, h, s, r=0.5, pose=0, spl=None, image="a"):
    spl = spl or (None, None, None, None)
    return PredRecord(image, make_p3dvr(cx, cy, w, h, r, pose, *spl), s)


def load_fixture():
    data = json.loads(FIXTURE.read_text())
    gts = [AnnotationRecord.from_dict(d).gt() for d in data["gts"]]
    preds = [AnnotationRecord.from_dict(d).pred() for d in data["preds"]]
    return data, gts, preds


def test_default_schedules():
    assert SCHED.lambdas == (0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95)
    assert SCHED.lambda_b == (0.02, 0.04, 0.06, 0.08, 0.1, 0.12, 0.14, 0.16, 0.18, 0.2)
    assert SCHED.lambda_r == (0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08, 0.09, 0.1)
    assert SCHED.lambda_a == SCHED.lambda_r
    assert SCHED.lambda_p == (2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0, 16.0, 18.0, 20.0)


def test_match_examples():
    g = [gt(50, 50, 20, 20)]
    ms = match_pairs(g, [pred(50, 50, 20, 20, 0.9)], 0.5)
    assert ms.n_t == 1
    # 20x20 boxes: shift 1 px gives IoU 19/21 ~ 0.905, shift 0.5 px gives 39/41 ~ 0.951
    p = [pred(51, 50, 20, 20, 0.8), pred(50.5, 50, 20, 20, 0.7)]
    ms = match_pairs(g, p, 0.5)
    assert [(i, j) for i, j, _ in ms.pairs] == [(0, 0)]
    assert match_pairs(g, [pred(500, 500, 20, 20, 0.9)], 0.5).n_t == 0


def test_match_one_to_one_and_tie_break():
    g = [gt(50, 50, 20, 20), gt(50, 50, 20, 20)]
    p = [pred(50, 50, 20, 20, 0.9), pred(50, 50, 20, 20, 0.9), pred(50, 50, 20, 20, 0.9)]
    ms = match_pairs(g, p, 0.5)
    assert [(i, j) for i, j, _ in ms.pairs] == [(0, 0), (1, 1)]


def test_perfect_predictions():
    gts = [gt(100 + 60 * k, 100, 40, 30, 0.3, k % 8, (100 + 60 * k, 110, 5.0, True)) for k in range(5)]
    preds = [pred(g.p3dvr.eb.cx, 100, 40, 30, 0.9, 0.3, g.p3dvr.eb.pose, (g.p3dvr.eb.cx, 110, 5.0, True))
             for g in gts]
    rep = evaluate(gts, preds)
    for k, v in rep.headline().items():
        assert v == pytest.approx(100.0, abs=1e-12), k


def test_arp_boundary_is_inclusive():
    g = [gt(50, 50, 20, 20, r=0.5)]
    p = [pred(50, 50, 20, 20, 0.9, r=0.55)]
    prec = attribute_precisions(g, p, match_pairs(g, p, 0.5))
    assert prec["arp"][3] == 0.0  # threshold 0.04
    assert prec["arp"][4] == 1.0  # threshold 0.05


def test_undefined_metric_is_none():
    g = [gt(50, 50, 20, 20)]
    p = [pred(50, 50, 20, 20, 0.9)]
    prec = attribute_precisions(g, p, match_pairs(g, p, 0.5))
    assert prec["aap"] is None and prec["app"] is None and prec["abp"] is not None
    rep = evaluate(g, p)
    assert rep.aap is None and rep.score is None
    assert "all:aap" in rep.undefined
    empty = attribute_precisions(g, [], match_pairs(g, [], 0.5))
    assert all(v is None for v in empty.values())


def test_area_buckets():
    assert area_bucket(1024) == "small"
    assert area_bucket(1025) == "medium"
    assert area_bucket(9216) == "medium"
    assert area_bucket(9217) == "large"
    with pytest.raises(ValueError):
        area_bucket(0)


def test_fixture_counts_and_headline():
    data, gts, preds = load_fixture()
    for lam_key, pairs in data["expected_pairs"].items():
        ms = match_all(gts, preds, float(lam_key))
        assert [[i, j] for i, j, _ in ms.pairs] == pairs
    for lam in SCHED.lambdas:
        want = data["expected_counts"][f"{lam:.2f}"]
        got = attribute_counts(gts, preds, match_all(gts, preds, lam))
        assert got == AttributeCounts(**want), lam
    rep = evaluate(gts, preds)
    for k, frac in data["expected_headline_fraction"].items():
        assert getattr(rep, k) == pytest.approx(100 * float(Fraction(frac)), rel=1e-12, abs=1e-12)


def test_coco_exact_predictions():
    gts = [gt(100, 100, 40, 40), gt(300, 100, 40, 40)]
    preds = [pred(100, 100, 40, 40, 0.9), pred(300, 100, 40, 40, 0.8)]
    assert coco_ap_ar(gts, preds) == (100.0, 100.0)


def test_coco_hand_staircase():
    # TP (0.9), FP (0.8), TP (0.7): envelope 1 up to recall 0.5, then 2/3.
    # 51 grid points at precision 1 and 50 at 2/3 -> AP = 253/303
    gts = [gt(100, 100, 40, 40), gt(300, 100, 40, 40)]
    preds = [pred(100, 100, 40, 40, 0.9), pred(600, 600, 40, 40, 0.8), pred(300, 100, 40, 40, 0.7)]
    ap, ar = coco_ap_ar_at(gts, preds, 0.5)
    assert ap == pytest.approx(253 / 303, abs=1e-12)
    assert ar == 1.0
    ap, ar = coco_ap_ar(gts, preds)
    assert ap == pytest.approx(100 * 253 / 303, abs=1e-10)


def test_coco_bucket_ignores_other_sizes():
    gts = [gt(100, 100, 20, 20), gt(300, 300, 200, 200)]
    preds = [pred(100, 100, 20, 20, 0.9)]
    assert coco_ap_ar(gts, preds, bucket="small") == (100.0, 100.0)
    assert coco_ap_ar(gts, preds, bucket="large") == (0.0, 0.0)
    assert coco_ap_ar(gts, preds, bucket="medium") == (None, None)


def test_coco_max_dets_cap():
    gts = [gt(10, 10, 10, 10)]
    preds = [pred(500 + 20 * k, 500, 10, 10, 0.9) for k in range(100)] + [pred(10, 10, 10, 10, 0.1)]
    assert coco_ap_ar_at(gts, preds, 0.5) == (0.0, 0.0)


@pytest.mark.parametrize("vals,want", [
    ((53.49, 69.15, 77.09, 82.88, 69.35, 37.55, 40.67), 61.46),
    ((28.67, 61.16, 55.88, 68.18, 40.84, 1.87, 2.09), 36.96),
])
def test_score_examples(vals, want):
    assert score(vals) == pytest.approx(want, abs=0.02)


def test_score_identity_and_undefined():
    assert score([42.5] * 7) == pytest.approx(42.5, abs=1e-12)
    assert score([1, 2, 3, 4, 5, 6, None]) is None
    with pytest.raises(ValueError):
        score([1, 2, 3])


def random_instance(rng, n_img=2):
    gts, preds = [], []
    for _ in range(rng.integers(1, 11)):
        img = str(rng.integers(n_img))
        cx, cy = 2 * rng.integers(0, 40, 2)
        w, h = 2 * rng.integers(3, 15, 2)
        present = bool(rng.integers(2))
        gts.append(gt(cx, cy, w, h, float(rng.integers(0, 101)) / 100, int(rng.integers(8)),
                      (cx + float(rng.integers(-5, 6)), cy + h / 2, 90.0 * float(rng.integers(-50, 51)) / 100,
                       present) if present else None, img))
    for _ in range(rng.integers(0, 16)):
        if gts and rng.uniform() < 0.7:
            base = gts[rng.integers(len(gts))].p3dvr
            cx, cy = base.eb.cx + 2 * rng.integers(-3, 4), base.eb.cy + 2 * rng.integers(-3, 4)
            w, h = base.eb.w + 2 * rng.integers(-2, 3), base.eb.h + 2 * rng.integers(-2, 3)
            img = gts[rng.integers(len(gts))].image_id if rng.uniform() < 0.2 else None
            img = img or next(g.image_id for g in gts if g.p3dvr is base)
            r = float(np.clip(base.eb.r + rng.integers(-8, 9) / 100, 0, 1))
            pose = base.eb.pose if rng.uniform() < 0.6 else int(rng.integers(8))
            spl = (base.spl.pwc_x + float(rng.integers(-12, 13)), base.spl.pwc_y + float(rng.integers(-12, 13)),
                   90.0 * float(np.clip(base.spl.theta_deg / 90 + rng.integers(-10, 11) / 100, -1, 1)), True)
        else:
            img = str(rng.integers(n_img))
            cx, cy = 2 * rng.integers(0, 40, 2)
            w, h = 2 * rng.integers(3, 15, 2)
            r, pose = float(rng.integers(0, 101)) / 100, int(rng.integers(8))
            spl = None
        preds.append(pred(cx, cy, max(w, 2), max(h, 2), float(rng.integers(1, 6)) / 5, r, pose, spl, img))
    return gts, preds


def test_brute_force_oracle_100_instances():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        gts, preds = random_instance(rng)
        pg, pp = [plain(g) for g in gts], [plain(p) for p in preds]
        for p, rec in zip(pp, preds):
            p["score"] = rec.score
        for lam in SCHED.lambdas:
            want = oracle_counts(pg, pp, lam, SCHED)
            got = attribute_counts(gts, preds, match_all(gts, preds, lam))
            assert got.n_t == want["n_t"] and got.n_t_prime == want["n_t_prime"]
            for k in ("abp", "arp", "pp", "aap", "app"):
                assert getattr(got, k) == want[k], (lam, k)
        rep = evaluate(gts, preds)
        for k, v in oracle_headline(pg, pp, SCHED).items():
            got = getattr(rep, k)
            assert (got is None) == (v is None)
            if v is not None:
                assert got == pytest.approx(v, rel=1e-12, abs=1e-12)


def test_monotone_in_attribute_thresholds():
    rng = np.random.default_rng(5)
    for _ in range(30):
        gts, preds = random_instance(rng)
        for lam in SCHED.lambdas:
            c = attribute_counts(gts, preds, match_all(gts, preds, lam))
            for k in ("abp", "arp", "aap", "app"):
                assert list(getattr(c, k)) == sorted(getattr(c, k))
            if c.n_t:
                assert c.abp[-1] <= c.n_t


def test_abp_limit_is_full():
    rng = np.random.default_rng(6)
    sched = ThresholdSchedule(lambda_b=(1.0,))
    for _ in range(20):
        gts, preds = random_instance(rng)
        ms = match_all(gts, preds, 0.5)
        if ms.n_t:
            assert attribute_precisions(gts, preds, ms, sched)["abp"] == [1.0]


def test_permutation_invariance():
    rng = np.random.default_rng(7)
    for _ in range(20):
        gts, preds = random_instance(rng)
        # distinct scores so the greedy order does not depend on input position
        preds = [PredRecord(p.image_id, p.p3dvr, (k + 1) / (len(preds) + 1)) for k, p in enumerate(preds)]
        a = evaluate(gts, preds).to_json()
        g2, p2 = list(gts), list(preds)
        random.Random(3).shuffle(g2)
        random.Random(4).shuffle(p2)
        b = evaluate(g2, p2).to_json()
        for k in ("abp", "arp", "pp", "aap", "app", "ap", "ar", "score"):
            assert (a[k] is None and b[k] is None) or a[k] == pytest.approx(b[k], abs=1e-9)


def test_report_values_in_range_and_table():
    rng = np.random.default_rng(8)
    gts, preds = random_instance(rng)
    rep = evaluate(gts, preds)
    for row in rep.per_area.values():
        for v in row.values():
            assert v is None or 0.0 <= v <= 100.0
    lines = rep.table().splitlines()
    assert lines[0].split() == ["Area", "ABP", "ARP", "PP", "AAP", "APP", "AP", "AR", "Score"]
    assert [ln.split()[0] for ln in lines[1:]] == ["small", "medium", "large", "all"]
    json.dumps(rep.to_json())
    assert not math.isnan(rep.ap)
