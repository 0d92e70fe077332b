"""Sliding-patch robustness harness.

An out-of-context object patch is slid over a scene on a regular grid.
Detections on the resulting frames are scored two ways: how often the
patch itself is found, and how many of the scene's own objects vanish.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Mapping, Optional, Sequence

import cv2
import numpy as np

from .core import BBox, DomainError, ObjectLabel, iou
from .evaluate import DetectionRecord, EvalConfig


@dataclass(frozen=True)
class PatchSpec:
    patch: np.ndarray
    alpha_mask: Optional[np.ndarray] = None
    stride_x: Optional[int] = None
    stride_y: Optional[int] = None
    scale: float = 1.0

    def __post_init__(self):
        if self.scale <= 0:
            raise DomainError("patch scale must be positive")
        if self.alpha_mask is not None:
            m = np.asarray(self.alpha_mask, dtype=np.float64)
            if m.shape != self.patch.shape[:2]:
                raise DomainError(f"mask shape {m.shape} != patch shape {self.patch.shape[:2]}")
            if m.min() < 0 or m.max() > 1:
                raise DomainError("mask values must lie in [0, 1]")
        for s in (self.stride_x, self.stride_y):
            if s is not None and s < 1:
                raise DomainError("strides must be >= 1")

    def scaled(self) -> tuple[np.ndarray, Optional[np.ndarray]]:
        if self.scale == 1.0:
            return self.patch, self.alpha_mask
        h, w = self.patch.shape[:2]
        nh, nw = max(1, round(h * self.scale)), max(1, round(w * self.scale))
        p = np.clip(cv2.resize(self.patch, (nw, nh), interpolation=cv2.INTER_LINEAR), 0.0, 1.0)
        m = None
        if self.alpha_mask is not None:
            m = np.clip(cv2.resize(np.asarray(self.alpha_mask, dtype=np.float64), (nw, nh),
                                   interpolation=cv2.INTER_LINEAR), 0.0, 1.0)
        return p, m


@dataclass(frozen=True)
class AdversarialFrame:
    """One patch placement.  Pixels are composited on access."""

    frame_id: int
    patch_bbox: BBox
    patch_class_id: int
    scene: np.ndarray
    patch: np.ndarray
    mask: Optional[np.ndarray] = None

    @property
    def offset(self) -> tuple[int, int]:
        return int(self.patch_bbox.xmin), int(self.patch_bbox.ymin)

    @property
    def image(self) -> np.ndarray:
        x, y = self.offset
        ph, pw = self.patch.shape[:2]
        out = self.scene.copy()
        if self.mask is None:
            out[y:y + ph, x:x + pw] = self.patch
        else:
            m = self.mask[..., None]
            region = out[y:y + ph, x:x + pw]
            out[y:y + ph, x:x + pw] = region * (1.0 - m) + self.patch * m
        return out


def frame_count(scene_w: int, scene_h: int, patch_w: int, patch_h: int,
                stride_x: int, stride_y: int) -> int:
    if patch_w > scene_w or patch_h > scene_h:
        return 0
    return ((scene_w - patch_w) // stride_x + 1) * ((scene_h - patch_h) // stride_y + 1)


def generate_frames(scene: np.ndarray, spec: PatchSpec, patch_class_id: int = 0) -> list[AdversarialFrame]:
    """One frame per grid placement where the patch fits, row by row.

    Strides default to half the scaled patch size.
    """
    patch, mask = spec.scaled()
    ph, pw = patch.shape[:2]
    sh, sw = scene.shape[:2]
    if ph > sh or pw > sw:
        raise DomainError(f"patch {pw}x{ph} does not fit scene {sw}x{sh}")
    sx = spec.stride_x or max(1, pw // 2)
    sy = spec.stride_y or max(1, ph // 2)
    frames = []
    for y in range(0, sh - ph + 1, sy):
        for x in range(0, sw - pw + 1, sx):
            frames.append(AdversarialFrame(len(frames), BBox(x, y, x + pw, y + ph),
                                           patch_class_id, scene, patch, mask))
    return frames


def _hit(obj_box: BBox, class_id: int, dets: Sequence[DetectionRecord], thr: float) -> bool:
    return any(d.class_id == class_id and iou(d.bbox, obj_box) >= thr for d in dets)


def patch_recall(frames: Sequence[AdversarialFrame],
                 detections: Mapping[Hashable, Sequence[DetectionRecord]],
                 cfg: EvalConfig = EvalConfig()) -> float:
    """Percentage of frames where some detection of the patch class hits the patch."""
    if not frames:
        raise DomainError("no frames")
    found = sum(
        _hit(f.patch_bbox, f.patch_class_id, detections.get(f.frame_id, ()), cfg.iou_threshold)
        for f in frames)
    return 100.0 * found / len(frames)


def disappearance_rate(clean_objects: Sequence[ObjectLabel], frames: Sequence[AdversarialFrame],
                       detections: Mapping[Hashable, Sequence[DetectionRecord]],
                       cfg: EvalConfig = EvalConfig(),
                       exclude_occluded: Optional[float] = None) -> float:
    """Percentage of (object, frame) pairs where a clean-scene object is missed.

    With ``exclude_occluded`` set, objects whose IoU with the patch reaches
    that value are left out of both numerator and denominator for that frame.
    """
    if not clean_objects:
        raise DomainError("no clean objects to track")
    if not frames:
        raise DomainError("no frames")
    gone = total = 0
    for f in frames:
        dets = detections.get(f.frame_id, ())
        for obj in clean_objects:
            if exclude_occluded is not None and iou(obj.bbox, f.patch_bbox) >= exclude_occluded:
                continue
            total += 1
            gone += not _hit(obj.bbox, obj.class_id, dets, cfg.iou_threshold)
    if total == 0:
        return 0.0
    return 100.0 * gone / total


def robustness_report(clean_objects, frames, detections, cfg: EvalConfig = EvalConfig(),
                      exclude_occluded: Optional[float] = None, clean_source: str = "annotations") -> dict:
    recall = patch_recall(frames, detections, cfg)
    rate = disappearance_rate(clean_objects, frames, detections, cfg, exclude_occluded)
    return {
        "frames": len(frames),
        "clean_objects": len(clean_objects),
        "clean_source": clean_source,
        "iou_threshold": cfg.iou_threshold,
        "exclude_occluded": exclude_occluded,
        "patch_recall": round(recall, 2),
        "disappearance_rate": round(rate, 2),
    }

