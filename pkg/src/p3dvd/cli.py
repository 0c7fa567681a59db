"""``p3dvd`` command-line entry point.

Exit codes: 0 success, 1 validation failure (bad records, bad layout,
failed checks), 2 I/O failure.
"""

from __future__ import annotations

import argparse
import io
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Sequence

import numpy as np
from PIL import Image

from . import __version__
from .augment import AugmentConfig, LabeledImage, extract_training_sample, rng_for, window_following_apply
from .config import ConfigError, load_config, pick
from .decode import CONF_THRESH, IOU_THRESH, SPL_THRESH, RawGrid, postprocess
from .dw import DwLayout, LayoutError, WindowSpec
from .evaluation import ThresholdSchedule, evaluate
from .gradcases import run_gradchecks
from .perturb import NoiseModel, expected_rates, perturb_labels
from .records import (
    AnnotationRecord,
    RecordError,
    atomic_write_bytes,
    atomic_write_text,
    read_jsonl,
    write_jsonl,
)
from .render import draw_labels
from .synth import Camera, SceneRanges, gen_scene

log = logging.getLogger("p3dvd")

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


class ValidationFailure(Exception):
    pass


# ----------------------------------------------------------------- helpers


def read_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.array(im.convert("RGB"))


def write_png(path, arr: np.ndarray):
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(arr)).save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())


def fan_out(fn: Callable, items: Sequence, jobs: int) -> List[Any]:
    """Ordered map over a bounded process pool; results keep input order."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


def window_spec(cfg: Dict[str, Any]) -> WindowSpec:
    d = WindowSpec()
    return WindowSpec(pick(cfg, "center", d.center), pick(cfg, "cw_size", d.cw_size),
                      pick(cfg, "crop_top", d.crop_top), pick(cfg, "crop_bottom", d.crop_bottom),
                      pick(cfg, "gw_scale", d.gw_scale), pick(cfg, "orig_size", d.orig_size))


def augment_config(cfg: Dict[str, Any], seed: int) -> AugmentConfig:
    d = AugmentConfig()
    kw = {k: pick(cfg, k, getattr(d, k)) for k in
          ("translate", "shear_deg", "scale", "hflip_prob", "mosaic_prob", "cw_size", "max_retries")}
    return AugmentConfig(seed=seed, **kw)


def schedule(cfg: Dict[str, Any]) -> ThresholdSchedule:
    d = ThresholdSchedule()
    return ThresholdSchedule(*(tuple(float(v) for v in pick(cfg, k, getattr(d, k)))
                               for k in ("lambdas", "lambda_b", "lambda_r", "lambda_a", "lambda_p")))


def image_paths(inputs: Iterable[str]) -> List[Path]:
    out = []
    for s in inputs:
        p = Path(s)
        if p.is_dir():
            out.extend(sorted(q for q in p.iterdir() if q.suffix.lower() in (".png", ".jpg", ".jpeg")))
        else:
            out.append(p)
    if not out:
        raise ValidationFailure("no input images")
    return out


def labels_by_image(path) -> Dict[str, List[AnnotationRecord]]:
    out: Dict[str, List[AnnotationRecord]] = {}
    if path is None:
        return out
    for rec in read_jsonl(path):
        out.setdefault(rec.image_id, []).append(rec)
    return out


# -------------------------------------------------------------- subcommands


def _dwsynth_one(task):
    path, recs, spec, out_dir = task
    img = read_image(path)
    li = LabeledImage(img, [r.p3dvr for r in recs], spec.center, path.stem)
    dw, framed, _ = extract_training_sample(li, spec)
    write_png(out_dir / f"{path.stem}_dw.png", dw)
    return [AnnotationRecord(path.stem, f.label, extra={"frame": f.frame}) for f in framed]


def cmd_dwsynth(args, cfg) -> int:
    spec = window_spec(cfg)
    out_dir = Path(args.out)
    labels = labels_by_image(args.labels)
    tasks = [(p, labels.get(p.stem, []), spec, out_dir) for p in image_paths(args.images)]
    results = fan_out(_dwsynth_one, tasks, args.jobs)
    if args.labels:
        write_jsonl(out_dir / "labels_dw.jsonl", [r for rs in results for r in rs])
    log.info("wrote %d DW images to %s", len(tasks), out_dir)
    return EXIT_OK


def _augment_one(task):
    idx, paths, recs, spec, acfg, out_dir = task
    rng = rng_for(acfg.seed, idx)
    chosen = [idx]
    if len(paths) >= 4 and rng.uniform() < acfg.mosaic_prob:
        others = [j for j in range(len(paths)) if j != idx]
        chosen += [int(j) for j in rng.choice(others, 3, replace=False)]
    inputs = [LabeledImage(read_image(paths[j]), [r.p3dvr for r in recs.get(paths[j].stem, [])],
                           spec.center, paths[j].stem) for j in chosen]
    res = window_following_apply(inputs, acfg, rng)
    stem = f"{paths[idx].stem}_aug"
    write_png(out_dir / f"{stem}.png", res.sample.image)
    recs_out = [AnnotationRecord(stem, p) for p in res.sample.labels]
    meta = {"image_id": stem, "window_center": list(res.sample.window_center), "source": chosen[res.source],
            "mosaic": len(chosen) == 4, "clamped": res.clamped, "attempts": res.attempts}
    return recs_out, meta


def cmd_augment(args, cfg) -> int:
    spec = window_spec(cfg)
    acfg = augment_config(cfg, args.seed)
    out_dir = Path(args.out)
    paths = image_paths(args.images)
    recs = labels_by_image(args.labels)
    tasks = [(i, paths, recs, spec, acfg, out_dir) for i in range(len(paths))]
    results = fan_out(_augment_one, tasks, args.jobs)
    write_jsonl(out_dir / "labels_aug.jsonl", [r for rs, _ in results for r in rs])
    atomic_write_text(out_dir / "windows.json", json.dumps([m for _, m in results], indent=1) + "\n")
    return EXIT_OK


def load_grids(paths: Sequence[str], gw_scale: int) -> List[RawGrid]:
    grids = []
    for p in paths:
        with open(p) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as e:
                raise ValidationFailure(f"{p}:{e.lineno}: {e.msg}") from None
        docs = doc if isinstance(doc, list) else [doc]
        for d in docs:
            try:
                grids.append(RawGrid.from_json(d, gw_scale))
            except (KeyError, TypeError, ValueError) as e:
                raise ValidationFailure(f"{p}: bad raw grid: {e}") from None
    return grids


def cmd_decode(args, cfg) -> int:
    spec = window_spec(cfg)
    layout = DwLayout(spec)
    grids = load_grids(args.grids, spec.gw_scale)
    by_image: Dict[str, List[RawGrid]] = {}
    for g in grids:
        by_image.setdefault(g.image_id or "", []).append(g)
    conf = pick(cfg, "conf_thresh", CONF_THRESH)
    iou = pick(cfg, "iou_thresh", IOU_THRESH)
    spl = pick(cfg, "spl_thresh", SPL_THRESH)
    recs = []
    for image_id in sorted(by_image):
        for d in postprocess(by_image[image_id], layout, conf, iou, spl):
            recs.append(AnnotationRecord(image_id, d.p3dvr, d.score, d.spl_conf,
                                         extra={"window": d.source_window, "stride": d.source_stride}))
    write_jsonl(args.out, recs)
    log.info("decoded %d detections", len(recs))
    return EXIT_OK


def cmd_evaluate(args, cfg) -> int:
    gts = [r.gt() for r in read_jsonl(args.gt)]
    try:
        preds = [r.pred() for r in read_jsonl(args.pred)]
    except ValueError as e:
        raise ValidationFailure(f"{args.pred}: {e}") from None
    report = evaluate(gts, preds, schedule(cfg))
    text = report.table()
    if args.out:
        atomic_write_text(args.out, json.dumps(report.to_json(), indent=1, sort_keys=True) + "\n")
    if args.table:
        atomic_write_text(args.table, text + "\n")
    print(text)
    return EXIT_OK


def _render_one(task):
    path, recs, out_dir = task
    img = read_image(path)
    draw_labels(img, [r.p3dvr for r in recs])
    write_png(out_dir / f"{path.stem}_render.png", img)


def cmd_render(args, cfg) -> int:
    labels = labels_by_image(args.labels)
    out_dir = Path(args.out)
    tasks = [(p, labels.get(p.stem, []), out_dir) for p in image_paths(args.images)]
    fan_out(_render_one, tasks, args.jobs)
    return EXIT_OK


def _scene_one(task):
    idx, seed, n, cam, ranges, render, out_dir = task
    scene = gen_scene(int(np.random.SeedSequence([seed, idx]).generate_state(1)[0]), n, cam, ranges, render)
    image_id = f"scene_{idx:05d}"
    if render:
        write_png(out_dir / f"{image_id}.png", scene.image)
    return image_id, scene.labels


def cmd_gencases(args, cfg) -> int:
    cam = Camera()
    d = SceneRanges()
    ranges = SceneRanges(**{k: pick(cfg, k, getattr(d, k)) for k in
                            ("depth", "bearing_deg", "length", "width", "height", "max_attempts")})
    out_dir = Path(args.out)
    tasks = [(i, args.seed, args.vehicles, cam, ranges, args.render, out_dir) for i in range(args.scenes)]
    scenes = fan_out(_scene_one, tasks, args.jobs)
    gt = [AnnotationRecord(iid, p) for iid, labels in scenes for p in labels]
    write_jsonl(out_dir / "gt.jsonl", gt)
    if args.perturb:
        noise = NoiseModel()
        rng = np.random.default_rng([args.seed, 1])
        noisy = perturb_labels([r.p3dvr for r in gt], rng, noise)
        scores = rng.uniform(0.5, 1.0, len(noisy))
        preds = [AnnotationRecord(r.image_id, p, float(s), 1.0) for r, p, s in zip(gt, noisy, scores)]
        write_jsonl(out_dir / "pred.jsonl", preds)
        atomic_write_text(out_dir / "expected.json",
                          json.dumps(expected_rates(noise), indent=1, sort_keys=True) + "\n")
    log.info("generated %d objects in %d scenes", len(gt), args.scenes)
    return EXIT_OK


def cmd_losscheck(args, cfg) -> int:
    res = run_gradchecks(args.seed, args.points, args.tolerance)
    ok = True
    for name, s in res.items():
        print(f"{name:4s} checked={s.checked} skipped={s.skipped} "
              f"max_rel_err={s.worst:.3e} tol={s.tolerance:g} {'PASS' if s.passed else 'FAIL'}")
        ok &= s.passed
    if args.out:
        atomic_write_text(args.out, json.dumps({k: vars(v) for k, v in res.items()}, indent=1) + "\n")
    if not ok:
        raise ValidationFailure("gradient check failed")
    return EXIT_OK


# -------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--config", help="flat key = value file overriding defaults")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="p3dvd", description="Pseudo-3D vehicle detection tooling")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("dwsynth", parents=[common], help="original images -> double-window images")
    p.add_argument("images", nargs="+")
    p.add_argument("--labels")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dwsynth)

    p = sub.add_parser("augment", parents=[common], help="window-following augmentation")
    p.add_argument("images", nargs="+")
    p.add_argument("--labels")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("decode", parents=[common], help="raw head grids -> prediction JSONL")
    p.add_argument("grids", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("evaluate", parents=[common], help="GT + predictions -> metric report")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--out", help="report JSON")
    p.add_argument("--table", help="text table output")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("render", parents=[common], help="draw labels over images")
    p.add_argument("images", nargs="+")
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("gencases", parents=[common], help="synthetic scenes -> GT JSONL")
    p.add_argument("--scenes", type=int, default=10)
    p.add_argument("--vehicles", type=int, default=20)
    p.add_argument("--out", required=True)
    p.add_argument("--render", action="store_true")
    p.add_argument("--perturb", action="store_true", help="also write noisy predictions")
    p.set_defaults(func=cmd_gencases)

    p = sub.add_parser("losscheck", parents=[common], help="finite-difference gradient report")
    p.add_argument("--points", type=int, default=1000)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--out")
    p.set_defaults(func=cmd_losscheck)
    return ap


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config) if args.config else {}
        return args.func(args, cfg)
    except (RecordError, ConfigError, LayoutError, ValidationFailure) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


def main():
    sys.exit(run())
