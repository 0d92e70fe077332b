"""Detection evaluation: greedy IoU matching, VOC-style AP and mAP."""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Hashable, Iterable, Mapping, Optional, Sequence

import numpy as np

from .core import BBox, DomainError, iou

AP_MODES = ("voc07_11point", "voc_all_points")
COCO_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


@dataclass(frozen=True)
class DetectionRecord:
    image_id: Hashable
    bbox: BBox
    class_id: int
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise DomainError(f"score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class GroundTruthRecord:
    image_id: Hashable
    bbox: BBox
    class_id: int
    difficult: bool = False
    weight: float = 1.0


@dataclass(frozen=True)
class EvalConfig:
    iou_threshold: float = 0.5
    ap_mode: str = "voc07_11point"

    def __post_init__(self):
        if not 0.0 < self.iou_threshold < 1.0:
            raise DomainError(f"iou_threshold {self.iou_threshold} outside (0, 1)")
        if self.ap_mode not in AP_MODES:
            raise DomainError(f"unknown ap_mode {self.ap_mode!r}")


@dataclass(frozen=True)
class Match:
    """Outcome for one detection; ``gt_index`` points into the GT list."""

    detection: DetectionRecord
    tp: bool
    gt_index: Optional[int] = None


def rank_order(scores: Sequence[float]) -> list[int]:
    """Indices by descending score; ties keep input order."""
    return sorted(range(len(scores)), key=lambda i: -scores[i])


def match_detections(dets: Sequence[DetectionRecord], gts: Sequence[GroundTruthRecord],
                     iou_threshold: float = 0.5) -> list[Match]:
    """Greedy one-to-one matching, highest score first.

    Each detection takes the unmatched, non-difficult ground truth of its
    own class and image with the highest IoU, provided the IoU reaches the
    threshold.  Results come back in ranked order.
    """
    by_key: dict[tuple, list[int]] = defaultdict(list)
    for j, g in enumerate(gts):
        if not g.difficult:
            by_key[(g.image_id, g.class_id)].append(j)
    taken: set[int] = set()
    out = []
    for i in rank_order([d.score for d in dets]):
        d = dets[i]
        best, best_iou = None, iou_threshold
        for j in by_key.get((d.image_id, d.class_id), ()):
            if j in taken:
                continue
            o = iou(d.bbox, gts[j].bbox)
            if o >= best_iou and (best is None or o > best_iou):
                best, best_iou = j, o
        if best is not None:
            taken.add(best)
        out.append(Match(d, best is not None, best))
    return out


def pr_curve(tp: Sequence[bool], scores: Sequence[float], num_gt: int) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative (recall, precision) along the ranked detection list."""
    order = rank_order(scores)
    flags = np.array([bool(tp[i]) for i in order], dtype=np.int64)
    ctp = np.cumsum(flags)
    ranks = np.arange(1, len(flags) + 1)
    precision = ctp / ranks
    recall = ctp / num_gt if num_gt > 0 else np.zeros(len(flags))
    return recall, precision


def average_precision(tp: Sequence[bool], scores: Sequence[float], num_gt: int,
                      mode: str = "voc07_11point") -> float:
    if mode not in AP_MODES:
        raise DomainError(f"unknown ap_mode {mode!r}")
    if len(tp) != len(scores):
        raise DomainError("tp flags and scores differ in length")
    if num_gt < 0:
        raise DomainError("num_gt must be >= 0")
    if num_gt == 0 or not tp:
        return 0.0
    rec, prec = pr_curve(tp, scores, num_gt)
    if mode == "voc07_11point":
        points = []
        for k in range(11):
            mask = rec >= k / 10
            points.append(float(prec[mask].max()) if mask.any() else 0.0)
        return math.fsum(points) / 11

    mrec = np.concatenate(([0.0], rec, [1.0]))
    mpre = np.concatenate(([0.0], prec, [0.0]))
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    idx = np.flatnonzero(mrec[1:] != mrec[:-1])
    return math.fsum(float((mrec[i + 1] - mrec[i]) * mpre[i + 1]) for i in idx)


def _vocabulary(num_classes) -> Optional[set]:
    if num_classes is None:
        return None
    if isinstance(num_classes, int):
        return set(range(num_classes))
    return set(num_classes)


def mean_ap(dets: Sequence[DetectionRecord], gts: Sequence[GroundTruthRecord],
            cfg: EvalConfig = EvalConfig(), num_classes=None) -> tuple[float, dict[int, float]]:
    """Unweighted mean of per-class AP over classes with at least one GT.

    ``num_classes`` (a count or an iterable of class ids) pins the
    vocabulary; any record outside it is an error.
    """
    vocab = _vocabulary(num_classes)
    if vocab is not None:
        stray = {r.class_id for r in (*dets, *gts)} - vocab
        if stray:
            raise DomainError(f"class ids {sorted(stray)} not in vocabulary")
    npos: dict[int, int] = defaultdict(int)
    for g in gts:
        if not g.difficult:
            npos[g.class_id] += 1
    matches = match_detections(dets, gts, cfg.iou_threshold)
    per_class: dict[int, tuple[list, list]] = defaultdict(lambda: ([], []))
    for m in matches:
        flags, scores = per_class[m.detection.class_id]
        flags.append(m.tp)
        scores.append(m.detection.score)
    table = {}
    for c in sorted(npos):
        flags, scores = per_class.get(c, ([], []))
        table[c] = average_precision(flags, scores, npos[c], cfg.ap_mode)
    if not table:
        return 0.0, {}
    return math.fsum(table.values()) / len(table), table


def coco_map(dets, gts, ap_mode: str = "voc_all_points", num_classes=None,
             thresholds: Iterable[float] = COCO_THRESHOLDS) -> tuple[float, dict[float, float]]:
    """Mean of mAP over IoU thresholds 0.50:0.05:0.95."""
    per_t = {}
    for t in thresholds:
        per_t[t], _ = mean_ap(dets, gts, EvalConfig(t, ap_mode), num_classes)
    return math.fsum(per_t.values()) / len(per_t), per_t


def per_class_delta(table_a: Mapping, table_b: Mapping) -> list[tuple[object, float]]:
    """``(class, AP_b - AP_a)`` sorted by descending gain, ties by class."""
    if set(table_a) != set(table_b):
        raise DomainError(
            f"class sets differ: {sorted(map(str, set(table_a) ^ set(table_b)))}")
    rows = [(c, table_b[c] - table_a[c]) for c in table_a]
    return sorted(rows, key=lambda r: (-r[1], str(r[0])))
