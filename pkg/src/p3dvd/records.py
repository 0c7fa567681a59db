"""JSONL annotation records.

One object per line::

    {"image_id": "0001", "bbox": [cx, cy, w, h], "r": 0.4, "pose": 1,
     "spl": {"present": true, "theta_n": 0.05, "pwc": [x, y]},
     "score": 0.9, "spl_conf": 0.8}

``score``/``spl_conf`` only appear on predictions.  Fields we do not know
about are carried through untouched.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional

from .evaluation import GtRecord, PredRecord
from .geometry import P3DVR, ExtendedBBox, SideProjectionLine

KNOWN = ("image_id", "bbox", "r", "pose", "spl", "score", "spl_conf", "truncated")


class RecordError(ValueError):
    def __init__(self, path, line: int, msg: str):
        super().__init__(f"{path}:{line}: {msg}")
        self.path, self.line = path, line


@dataclass
class AnnotationRecord:
    image_id: str
    p3dvr: P3DVR
    score: Optional[float] = None
    spl_conf: Optional[float] = None
    extra: Dict[str, Any] = field(default_factory=dict)
    spl_extra: Dict[str, Any] = field(default_factory=dict)
    # the parsed theta_n, reused on output so parse -> serialize is lossless
    theta_n_raw: Optional[float] = None

    @property
    def is_prediction(self) -> bool:
        return self.score is not None

    @classmethod
    def from_dict(cls, d: dict) -> "AnnotationRecord":
        if not isinstance(d, dict):
            raise ValueError("record is not a JSON object")
        for k in ("image_id", "bbox", "r", "pose", "spl"):
            if k not in d:
                raise ValueError(f"missing field {k!r}")
        bbox = d["bbox"]
        if not (isinstance(bbox, list) and len(bbox) == 4):
            raise ValueError("bbox must be [cx, cy, w, h]")
        spl = d["spl"]
        if not isinstance(spl, dict) or "present" not in spl:
            raise ValueError("spl must be an object with 'present'")
        pose = d["pose"]
        if isinstance(pose, bool) or not isinstance(pose, int) or not 0 <= pose <= 7:
            raise ValueError(f"pose {pose!r} not an integer in 0..7")
        theta_n = _num(spl.get("theta_n", -1.0), "spl.theta_n")
        if not -1.0 <= theta_n <= 1.0:
            raise ValueError(f"spl.theta_n {theta_n} outside [-1, 1]")
        nums = [_num(v, "bbox") for v in bbox]
        pwc = spl.get("pwc")
        if pwc is None:
            pwc = [nums[0], nums[1] + nums[3] / 2]
        if not (isinstance(pwc, list) and len(pwc) == 2):
            raise ValueError("spl.pwc must be [x, y]")
        pwc = [_num(v, "spl.pwc") for v in pwc]
        eb = ExtendedBBox(*nums, _num(d["r"], "r"), int(pose))
        line = SideProjectionLine(pwc[0], pwc[1], 90.0 * theta_n, bool(spl["present"]))
        score = None if d.get("score") is None else _num(d["score"], "score")
        conf = None if d.get("spl_conf") is None else _num(d["spl_conf"], "spl_conf")
        for name, v in (("score", score), ("spl_conf", conf)):
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} {v} outside [0, 1]")
        return cls(str(d["image_id"]), P3DVR(eb, line, bool(d.get("truncated", False))), score, conf,
                   {k: v for k, v in d.items() if k not in KNOWN},
                   {k: v for k, v in spl.items() if k not in ("present", "theta_n", "pwc")},
                   theta_n)

    @property
    def theta_n(self) -> float:
        deg = self.p3dvr.spl.theta_deg
        if self.theta_n_raw is not None and 90.0 * self.theta_n_raw == deg:
            return self.theta_n_raw
        return deg / 90.0

    def to_dict(self) -> dict:
        eb, spl = self.p3dvr.eb, self.p3dvr.spl
        d: Dict[str, Any] = {
            "image_id": self.image_id,
            "bbox": [eb.cx, eb.cy, eb.w, eb.h],
            "r": eb.r,
            "pose": eb.pose,
            "spl": {"present": spl.present, "theta_n": self.theta_n,
                    "pwc": [spl.pwc_x, spl.pwc_y], **self.spl_extra},
        }
        if self.p3dvr.truncated:
            d["truncated"] = True
        if self.score is not None:
            d["score"] = self.score
        if self.spl_conf is not None:
            d["spl_conf"] = self.spl_conf
        d.update(self.extra)
        return d

    def to_line(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=False, allow_nan=False)

    def gt(self) -> GtRecord:
        return GtRecord(self.image_id, self.p3dvr)

    def pred(self) -> PredRecord:
        if self.score is None:
            raise ValueError(f"record for {self.image_id!r} has no score")
        return PredRecord(self.image_id, self.p3dvr, self.score,
                          1.0 if self.spl_conf is None else self.spl_conf)


def _num(v, name) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValueError(f"{name} must be numeric, got {v!r}")
    v = float(v)
    if not math.isfinite(v):
        raise ValueError(f"{name} is not finite")
    return v


def parse_lines(lines: Iterable[str], path="<input>") -> List[AnnotationRecord]:
    out = []
    for no, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            out.append(AnnotationRecord.from_dict(json.loads(line)))
        except (ValueError, TypeError) as e:
            raise RecordError(path, no, str(e)) from None
    return out


def read_jsonl(path) -> List[AnnotationRecord]:
    with open(path) as fh:
        return parse_lines(fh, path)


def atomic_write_text(path, text: str):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(str(path)))
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_bytes(path, data: bytes):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_jsonl(path, records: Iterable[AnnotationRecord]):
    atomic_write_text(path, "".join(r.to_line() + "\n" for r in records))


def record_from_label(image_id: str, p: P3DVR, score=None, spl_conf=None) -> AnnotationRecord:
    return AnnotationRecord(image_id, p, score, spl_conf)
