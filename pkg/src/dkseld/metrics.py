"""Location-aware detection and class-aware localization metrics.

Definitions used throughout:

* Labels are grouped into segments of ``segment_frames`` label frames (1 s).
* Inside a (segment, class) every ``source_id`` is one track; its direction
  is the normalized mean of its per-frame unit vectors.
* Reference and predicted tracks are paired one-to-one by minimum total
  angular distance.
* A pair within ``threshold`` degrees is a true positive; a farther pair
  counts once as a false positive and once as a false negative; unpaired
  predictions are false positives and unpaired references false negatives.
* ER sums, per segment over all classes, S = min(FP, FN), D = max(0, FN - FP),
  I = max(0, FP - FN), and divides by the number of reference tracks.
* F, LE and LR are per-class values macro-averaged: F over classes with any
  reference or prediction, LR over classes with references, LE over classes
  with at least one pair.  LE has no threshold and falls back to 180 degrees
  when nothing was paired.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .accdoa import doa_to_cartesian
from .audio_io import NUM_CLASSES, EventAnnotation
from .errors import UndefinedDirectionError, ValidationError

SEGMENT_FRAMES = 10
LE_SENTINEL = 180.0


def angular_distance(u, v) -> float:
    """Angle in degrees between two non-zero vectors."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise UndefinedDirectionError("angular distance to a zero vector is undefined")
    return float(np.degrees(np.arccos(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))))


def seld_score(er: float, f: float, le_deg: float, lr: float) -> float:
    """(ER + (1 - F) + LE/180 + (1 - LR)) / 4; lower is better."""
    if not 0.0 <= le_deg <= 180.0:
        raise ValidationError(f"localization error {le_deg} outside [0, 180] degrees")
    if er < 0.0:
        raise ValidationError(f"error rate {er} is negative")
    for name, val in (("F", f), ("LR", lr)):
        if not 0.0 <= val <= 1.0:
            raise ValidationError(f"{name} {val} outside [0, 1]")
    return 0.25 * (er + (1.0 - f) + le_deg / 180.0 + (1.0 - lr))


@dataclass
class SegmentClassMatch:
    segment: int
    class_id: int
    pairs: list  # (ref source id, pred source id, degrees)
    unmatched_refs: list
    unmatched_preds: list

    @property
    def n_refs(self) -> int:
        return len(self.pairs) + len(self.unmatched_refs)


@dataclass
class MatchResult:
    cells: list = field(default_factory=list)  # SegmentClassMatch, sorted by (segment, class)

    def __iter__(self):
        return iter(self.cells)

    def __add__(self, other: "MatchResult") -> "MatchResult":
        return MatchResult(self.cells + other.cells)


def _tracks(events: Iterable[EventAnnotation], segment_frames: int) -> dict:
    acc: dict = {}
    for e in events:
        key = (e.frame // segment_frames, e.class_id)
        acc.setdefault(key, {}).setdefault(e.source_id, []).append(
            doa_to_cartesian(e.azimuth_deg, e.elevation_deg))
    out = {}
    for key, per_src in acc.items():
        out[key] = {}
        for sid, vecs in sorted(per_src.items()):
            m = np.mean(vecs, axis=0)
            n = np.linalg.norm(m)
            out[key][sid] = m / n if n > 1e-12 else vecs[0]
    return out


def optimal_assignment(cost: np.ndarray) -> list[tuple[int, int]]:
    """Minimum-total-cost one-to-one pairing of rows and columns."""
    if cost.size == 0:
        return []
    rows, cols = linear_sum_assignment(cost)
    return list(zip(rows.tolist(), cols.tolist()))


def match_events(refs: Sequence[EventAnnotation], preds: Sequence[EventAnnotation],
                 segment_frames: int = SEGMENT_FRAMES, segment_offset: int = 0) -> MatchResult:
    """Pair reference and predicted tracks inside each (segment, class).

    ``segment_offset`` shifts segment indices so several clips can be
    concatenated into one result without collisions.
    """
    ref_t = _tracks(refs, segment_frames)
    pred_t = _tracks(preds, segment_frames)
    cells = []
    for seg, cls in sorted(set(ref_t) | set(pred_t)):
        r = ref_t.get((seg, cls), {})
        p = pred_t.get((seg, cls), {})
        rid, pid = list(r), list(p)
        cost = np.array([[angular_distance(r[a], p[b]) for b in pid] for a in rid]).reshape(len(rid), len(pid))
        pairs = [(rid[i], pid[j], float(cost[i, j])) for i, j in optimal_assignment(cost)]
        used_r = {a for a, _, _ in pairs}
        used_p = {b for _, b, _ in pairs}
        cells.append(SegmentClassMatch(seg + segment_offset, cls, pairs,
                                       [a for a in rid if a not in used_r],
                                       [b for b in pid if b not in used_p]))
    return MatchResult(cells)


@dataclass
class ClassMetrics:
    class_id: int
    f20: float | None
    le_cd: float | None
    lr_cd: float | None
    tp: int
    fp: int
    fn: int
    n_ref: int
    n_matched: int


@dataclass
class MetricsReport:
    er20: float
    f20: float
    le_cd: float
    lr_cd: float
    seld_score: float
    per_class: list = field(default_factory=list)
    undefined: tuple = ()

    def row(self) -> dict:
        return {"ER20": self.er20, "F20": self.f20, "LE_CD": self.le_cd,
                "LR_CD": self.lr_cd, "SELD": self.seld_score}

    def to_dict(self) -> dict:
        d = asdict(self)
        d["undefined"] = list(self.undefined)
        return d

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    def write_class_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["class", "F20", "LE_CD", "LR_CD", "TP", "FP", "FN", "n_ref"])
            for c in self.per_class:
                w.writerow([c.class_id, _cell(c.f20), _cell(c.le_cd), _cell(c.lr_cd),
                            c.tp, c.fp, c.fn, c.n_ref])

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        per = [ClassMetrics(**c) for c in d.get("per_class", [])]
        return cls(d["er20"], d["f20"], d["le_cd"], d["lr_cd"], d["seld_score"], per,
                   tuple(d.get("undefined", ())))

    @classmethod
    def read_json(cls, path) -> "MetricsReport":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _cell(v) -> str:
    return "" if v is None else repr(float(v))


def compute_metrics(matches: MatchResult | Iterable[MatchResult], n_classes: int = NUM_CLASSES,
                    threshold: float = 20.0) -> MetricsReport:
    if not isinstance(matches, MatchResult):
        merged = MatchResult()
        for m in matches:
            merged = merged + m
        matches = merged
    tp = np.zeros(n_classes, dtype=int)
    fp = np.zeros(n_classes, dtype=int)
    fn = np.zeros(n_classes, dtype=int)
    n_ref = np.zeros(n_classes, dtype=int)
    le_sum = np.zeros(n_classes)
    n_match = np.zeros(n_classes, dtype=int)
    seg_fp: dict[int, int] = {}
    seg_fn: dict[int, int] = {}
    for cell in matches:
        c = cell.class_id
        if not 0 <= c < n_classes:
            raise ValidationError(f"class {c} outside [0, {n_classes})")
        close = sum(1 for _, _, d in cell.pairs if d <= threshold)
        far = len(cell.pairs) - close
        cfp = far + len(cell.unmatched_preds)
        cfn = far + len(cell.unmatched_refs)
        tp[c] += close
        fp[c] += cfp
        fn[c] += cfn
        n_ref[c] += cell.n_refs
        n_match[c] += len(cell.pairs)
        le_sum[c] += sum(d for _, _, d in cell.pairs)
        seg_fp[cell.segment] = seg_fp.get(cell.segment, 0) + cfp
        seg_fn[cell.segment] = seg_fn.get(cell.segment, 0) + cfn

    s = d = i = 0
    for seg in seg_fp:
        a, b = seg_fp[seg], seg_fn[seg]
        s += min(a, b)
        d += max(0, b - a)
        i += max(0, a - b)

    per_class, f_vals, le_vals, lr_vals = [], [], [], []
    for c in range(n_classes):
        f_c = le_c = lr_c = None
        if tp[c] + fp[c] + fn[c] > 0:
            f_c = tp[c] / (tp[c] + 0.5 * (fp[c] + fn[c]))
            f_vals.append(f_c)
        if n_match[c] > 0:
            le_c = le_sum[c] / n_match[c]
            le_vals.append(le_c)
        if n_ref[c] > 0:
            lr_c = n_match[c] / n_ref[c]
            lr_vals.append(lr_c)
        per_class.append(ClassMetrics(c, None if f_c is None else float(f_c),
                                      None if le_c is None else float(le_c),
                                      None if lr_c is None else float(lr_c),
                                      int(tp[c]), int(fp[c]), int(fn[c]), int(n_ref[c]), int(n_match[c])))

    undefined = []
    total_ref = int(n_ref.sum())
    if total_ref == 0:
        undefined += ["er20", "lr_cd"]
        er, lr = 1.0, 0.0
    else:
        er = (s + d + i) / total_ref
        lr = float(np.mean(lr_vals))
    f = float(np.mean(f_vals)) if f_vals else 0.0
    if not f_vals:
        undefined.append("f20")
    if le_vals:
        le = float(np.mean(le_vals))
    else:
        le = LE_SENTINEL
        undefined.append("le_cd")
    le = min(max(le, 0.0), 180.0)
    return MetricsReport(float(er), f, le, lr, seld_score(er, f, le, lr), per_class, tuple(undefined))


def evaluate_events(refs_by_clip: Sequence[Sequence[EventAnnotation]],
                    preds_by_clip: Sequence[Sequence[EventAnnotation]],
                    n_classes: int = NUM_CLASSES, threshold: float = 20.0,
                    segment_frames: int = SEGMENT_FRAMES) -> MetricsReport:
    """Match clip by clip (segments never straddle clips) and aggregate."""
    if len(refs_by_clip) != len(preds_by_clip):
        raise ValidationError("reference and prediction clip counts differ")
    merged = MatchResult()
    offset = 0
    for refs, preds in zip(refs_by_clip, preds_by_clip):
        frames = [e.frame for e in list(refs) + list(preds)]
        merged = merged + match_events(refs, preds, segment_frames, offset)
        offset += (max(frames) // segment_frames + 1) if frames else 1
    return compute_metrics(merged, n_classes, threshold)


def write_comparison_csv(path, reports: dict) -> None:
    """One row per system with ER/F/LE/LR/SELD columns."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["system", "ER20", "F20", "LE_CD", "LR_CD", "SELD"])
        for name, rep in reports.items():
            r = rep.row()
            w.writerow([name] + [f"{r[k]:.4f}" for k in ("ER20", "F20", "LE_CD", "LR_CD", "SELD")])
