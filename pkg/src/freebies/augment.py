"""Box-aware data augmentation.

Geometric transforms (crop, expand, resize, flip) move boxes together with
pixels; color jitter touches pixels only.  Every random transform takes an
explicit ``numpy.random.Generator``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import cv2
import numpy as np

from .core import BBox, DomainError, Sample, clip_bbox, hflip, iou

cv2.setNumThreads(1)

INTERPOLATIONS = {
    "nearest": cv2.INTER_NEAREST,
    "bilinear": cv2.INTER_LINEAR,
    "bicubic": cv2.INTER_CUBIC,
    "area": cv2.INTER_AREA,
    "lanczos": cv2.INTER_LANCZOS4,
}
LUMA = np.array([0.299, 0.587, 0.114])
SSD_MIN_IOUS = (None, 0.1, 0.3, 0.5, 0.7, 0.9)


@dataclass(frozen=True)
class CropConstraint:
    min_iou: Optional[float] = None
    min_scale: float = 0.3
    max_scale: float = 1.0
    aspect_range: tuple[float, float] = (0.5, 2.0)
    max_trials: int = 50

    def __post_init__(self):
        if self.min_iou is not None and not 0.0 <= self.min_iou <= 1.0:
            raise DomainError(f"min_iou {self.min_iou} outside [0, 1]")
        if not 0.0 < self.min_scale <= self.max_scale <= 1.0:
            raise DomainError(f"bad scale range ({self.min_scale}, {self.max_scale})")
        lo, hi = self.aspect_range
        if not 0.0 < lo <= hi:
            raise DomainError(f"bad aspect range {self.aspect_range}")
        if self.max_trials < 1:
            raise DomainError("max_trials must be >= 1")


@dataclass(frozen=True)
class ColorJitterConfig:
    brightness_delta: float = 32 / 255
    contrast_range: tuple[float, float] = (0.5, 1.5)
    saturation_range: tuple[float, float] = (0.5, 1.5)
    hue_delta: float = 18.0

    def __post_init__(self):
        if self.brightness_delta < 0 or self.hue_delta < 0:
            raise DomainError("jitter deltas must be >= 0")
        for name in ("contrast_range", "saturation_range"):
            lo, hi = getattr(self, name)
            if not 0.0 < lo <= hi:
                raise DomainError(f"bad {name} {(lo, hi)}")


# --- crop --------------------------------------------------------------------

def crop_sample(s: Sample, rect: tuple[int, int, int, int]) -> Sample:
    """Cut out ``rect = (x0, y0, x1, y1)`` (integer pixels).

    A label survives when its box center lies strictly inside the crop;
    survivors are shifted into crop coordinates and clipped.
    """
    x0, y0, x1, y1 = (int(v) for v in rect)
    if not (0 <= x0 < x1 <= s.width and 0 <= y0 < y1 <= s.height):
        raise DomainError(f"crop {rect} outside {s.width}x{s.height} image")
    labels = []
    for lab in s.labels:
        cx, cy = lab.bbox.center
        if not (x0 < cx < x1 and y0 < cy < y1):
            continue
        b = clip_bbox(lab.bbox.translate(-x0, -y0), x1 - x0, y1 - y0)
        if b is not None:
            labels.append(lab.replace(bbox=b))
    return Sample(s.image[y0:y1, x0:x1].copy(), labels)


def _propose_crop(w: int, h: int, c: CropConstraint, rng: np.random.Generator):
    scale = rng.uniform(c.min_scale, c.max_scale)
    lo, hi = c.aspect_range
    aspect = math.exp(rng.uniform(math.log(lo), math.log(hi)))
    cw = int(round(w * math.sqrt(scale * aspect)))
    ch = int(round(h * math.sqrt(scale / aspect)))
    if not (1 <= cw <= w and 1 <= ch <= h):
        return None
    x0 = int(rng.integers(0, w - cw + 1))
    y0 = int(rng.integers(0, h - ch + 1))
    return x0, y0, x0 + cw, y0 + ch


def random_crop(s: Sample, c: CropConstraint, rng: np.random.Generator) -> Sample:
    """SSD-style constrained crop; returns ``s`` unchanged if no trial is accepted.

    A proposal is accepted when ``min_iou`` is unset or at least one ground
    truth box overlaps the crop rectangle with IoU >= ``min_iou``.
    """
    for _ in range(c.max_trials):
        rect = _propose_crop(s.width, s.height, c, rng)
        if rect is None:
            continue
        if c.min_iou is not None:
            crop_box = BBox(*rect)
            if not any(iou(lab.bbox, crop_box) >= c.min_iou for lab in s.labels):
                continue
        return crop_sample(s, rect)
    return s


def ssd_crop(s: Sample, rng: np.random.Generator, base: CropConstraint = CropConstraint()) -> Sample:
    """Pick ``min_iou`` from the SSD menu, then crop under it."""
    choice = SSD_MIN_IOUS[int(rng.integers(0, len(SSD_MIN_IOUS)))]
    c = CropConstraint(choice, base.min_scale, base.max_scale, base.aspect_range, base.max_trials)
    return random_crop(s, c, rng)


# --- expand ------------------------------------------------------------------

def expand_sample(s: Sample, ratio: float, offset: tuple[int, int], fill=(0.5, 0.5, 0.5)) -> Sample:
    """Place the image at ``offset = (x, y)`` on a ``ceil(ratio*h) x ceil(ratio*w)`` canvas."""
    if ratio < 1:
        raise DomainError(f"expansion ratio {ratio} < 1")
    nh, nw = math.ceil(ratio * s.height), math.ceil(ratio * s.width)
    ox, oy = int(offset[0]), int(offset[1])
    if not (0 <= ox <= nw - s.width and 0 <= oy <= nh - s.height):
        raise DomainError(f"offset {offset} does not fit a {nw}x{nh} canvas")
    canvas = np.empty((nh, nw, 3))
    canvas[:] = np.asarray(fill, dtype=np.float64)
    canvas[oy:oy + s.height, ox:ox + s.width] = s.image
    labels = [lab.replace(bbox=lab.bbox.translate(ox, oy)) for lab in s.labels]
    return Sample(canvas, labels)


def random_expand(s: Sample, max_ratio: float, fill=(0.5, 0.5, 0.5),
                  rng: Optional[np.random.Generator] = None) -> Sample:
    if max_ratio < 1:
        raise DomainError(f"max_ratio {max_ratio} < 1")
    if rng is None:
        raise DomainError("random_expand needs a generator")
    ratio = rng.uniform(1.0, max_ratio)
    nh, nw = math.ceil(ratio * s.height), math.ceil(ratio * s.width)
    ox = int(rng.integers(0, nw - s.width + 1))
    oy = int(rng.integers(0, nh - s.height + 1))
    return expand_sample(s, ratio, (ox, oy), fill)


# --- resize ------------------------------------------------------------------

def resize_image(img: np.ndarray, target_h: int, target_w: int, interp: str) -> np.ndarray:
    if interp not in INTERPOLATIONS:
        raise DomainError(f"unknown interpolation {interp!r}")
    if img.shape[:2] == (target_h, target_w) and interp != "lanczos":
        return img.copy()
    out = cv2.resize(img, (target_w, target_h), interpolation=INTERPOLATIONS[interp])
    # cubic and lanczos kernels overshoot
    return np.clip(out, 0.0, 1.0)


def resize_sample(s: Sample, target_h: int, target_w: int, interp: str = "bilinear") -> Sample:
    if target_h < 1 or target_w < 1:
        raise DomainError(f"invalid target size {target_w}x{target_h}")
    w, h = s.width, s.height
    labels = []
    for lab in s.labels:
        b = lab.bbox
        # multiply before dividing so an edge at w lands exactly on target_w
        nb = clip_bbox(BBox(b.xmin * target_w / w, b.ymin * target_h / h,
                            b.xmax * target_w / w, b.ymax * target_h / h), target_w, target_h)
        if nb is not None:
            labels.append(lab.replace(bbox=nb))
    return Sample(resize_image(s.image, target_h, target_w, interp), labels)


def random_resize(s: Sample, target_h: int, target_w: int, interp: str = "random",
                  rng: Optional[np.random.Generator] = None) -> Sample:
    if interp == "random":
        if rng is None:
            raise DomainError("random interpolation needs a generator")
        names = list(INTERPOLATIONS)
        interp = names[int(rng.integers(0, len(names)))]
    return resize_sample(s, target_h, target_w, interp)


def short_side_size(h: int, w: int, short: int = 600, long_cap: int = 1000) -> tuple[int, int]:
    """Target ``(h, w)`` with the short side at ``short`` and the long side capped."""
    scale = short / min(h, w)
    if max(h, w) * scale > long_cap:
        scale = long_cap / max(h, w)
    return max(1, int(round(h * scale))), max(1, int(round(w * scale)))


def resize_short_side(s: Sample, short: int = 600, long_cap: int = 1000,
                      interp: str = "bilinear") -> Sample:
    th, tw = short_side_size(s.height, s.width, short, long_cap)
    return resize_sample(s, th, tw, interp)


# --- color -------------------------------------------------------------------

def rgb_to_hsv(img: np.ndarray) -> np.ndarray:
    """Vectorized RGB -> HSV with hue in degrees [0, 360)."""
    r, g, b = img[..., 0], img[..., 1], img[..., 2]
    v = img.max(axis=-1)
    c = v - img.min(axis=-1)
    safe_c = np.where(c > 0, c, 1.0)
    h = np.where(v == r, ((g - b) / safe_c) % 6.0,
                 np.where(v == g, (b - r) / safe_c + 2.0, (r - g) / safe_c + 4.0))
    h = np.where(c > 0, h * 60.0, 0.0)
    s = np.where(v > 0, c / np.where(v > 0, v, 1.0), 0.0)
    return np.stack([h, s, v], axis=-1)


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    return _hcm_to_rgb(h, v * s, v - v * s)


def _hcm_to_rgb(h, c, m):
    hp = (h % 360.0) / 60.0
    x = c * (1.0 - np.abs(hp % 2.0 - 1.0))
    sector = np.floor(hp).astype(int) % 6
    zero = np.zeros_like(c)
    r = np.choose(sector, [c, x, zero, zero, x, c])
    g = np.choose(sector, [x, c, c, x, zero, zero])
    b = np.choose(sector, [zero, zero, x, c, c, x])
    return np.stack([r + m, g + m, b + m], axis=-1)


def rotate_hue(img: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate hue in the HSV hexcone, keeping each pixel's max and min.

    Works on chroma directly, so it is well defined for intensities that
    have drifted outside [0, 1] before the final clamp.
    """
    hi = img.max(axis=-1)
    lo = img.min(axis=-1)
    c = hi - lo
    hsv = rgb_to_hsv(img - lo[..., None])
    return _hcm_to_rgb(hsv[..., 0] + degrees, c, lo)


def luma(img: np.ndarray) -> np.ndarray:
    return img @ LUMA


def adjust_brightness(img, delta: float):
    return img + delta


def adjust_contrast(img, factor: float):
    m = luma(img).mean()
    return (img - m) * factor + m


def adjust_saturation(img, factor: float):
    y = luma(img)[..., None]
    return y + factor * (img - y)


def jitter_params(c: ColorJitterConfig, rng: np.random.Generator) -> dict:
    return {
        "brightness": rng.uniform(-c.brightness_delta, c.brightness_delta),
        "contrast": rng.uniform(*c.contrast_range),
        "saturation": rng.uniform(*c.saturation_range),
        "hue": rng.uniform(-c.hue_delta, c.hue_delta),
    }


def apply_jitter(img: np.ndarray, brightness=0.0, contrast=1.0, saturation=1.0, hue=0.0) -> np.ndarray:
    """Brightness, contrast, saturation, hue in that order, then clamp to [0, 1]."""
    out = adjust_brightness(img, brightness)
    out = adjust_contrast(out, contrast)
    out = adjust_saturation(out, saturation)
    if hue:
        out = rotate_hue(out, hue)
    return np.clip(out, 0.0, 1.0)


def color_jitter(img: np.ndarray, c: ColorJitterConfig, rng: np.random.Generator) -> np.ndarray:
    return apply_jitter(img, **jitter_params(c, rng))


# --- policies ----------------------------------------------------------------

GEOMETRIC_CROPS = frozenset({"random_crop", "random_expand"})


@dataclass(frozen=True)
class Step:
    name: str
    prob: float = 1.0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in TRANSFORMS:
            raise DomainError(f"unknown transform {self.name!r}; known: {sorted(TRANSFORMS)}")
        if not 0.0 <= self.prob <= 1.0:
            raise DomainError(f"probability {self.prob} outside [0, 1]")


@dataclass(frozen=True)
class AugmentPolicy:
    pipeline_kind: str
    steps: tuple[Step, ...]

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        if self.pipeline_kind not in ("single_stage", "multi_stage"):
            raise DomainError(f"unknown pipeline kind {self.pipeline_kind!r}")
        if self.pipeline_kind == "multi_stage":
            bad = [st.name for st in self.steps if st.name in GEOMETRIC_CROPS]
            if bad:
                raise DomainError(f"multi-stage policies cannot use {bad}")

    @classmethod
    def single_stage(cls, size: int = 416, fill=(0.5, 0.5, 0.5)) -> "AugmentPolicy":
        return cls("single_stage", (
            Step("color_jitter", 0.5),
            Step("random_expand", 0.5, {"max_ratio": 4.0, "fill": tuple(fill)}),
            Step("random_crop", 1.0),
            Step("random_resize", 1.0, {"target_h": size, "target_w": size, "interp": "random"}),
            Step("hflip", 0.5),
        ))

    @classmethod
    def multi_stage(cls, short: int = 600, long_cap: int = 1000) -> "AugmentPolicy":
        return cls("multi_stage", (
            Step("resize_short_side", 1.0, {"short": short, "long_cap": long_cap}),
            Step("hflip", 0.5),
        ))

    def to_dict(self) -> dict:
        return {"pipeline_kind": self.pipeline_kind,
                "steps": [{"name": st.name, "prob": st.prob, "params": dict(st.params)}
                          for st in self.steps]}


def _jitter_step(s, rng, **kw):
    return Sample(color_jitter(s.image, ColorJitterConfig(**kw), rng), list(s.labels))


def _crop_step(s, rng, **kw):
    if "min_iou" in kw:
        return random_crop(s, CropConstraint(**kw), rng)
    return ssd_crop(s, rng, CropConstraint(**kw))


TRANSFORMS: dict[str, Callable[..., Sample]] = {
    "color_jitter": _jitter_step,
    "random_expand": lambda s, rng, max_ratio=4.0, fill=(0.5, 0.5, 0.5): random_expand(s, max_ratio, fill, rng),
    "random_crop": _crop_step,
    "random_resize": lambda s, rng, target_h=416, target_w=416, interp="random": random_resize(
        s, target_h, target_w, interp, rng),
    "resize_short_side": lambda s, rng, short=600, long_cap=1000, interp="bilinear": resize_short_side(
        s, short, long_cap, interp),
    "hflip": lambda s, rng: hflip(s),
}


def apply_policy(s: Sample, p: AugmentPolicy, rng: np.random.Generator) -> Sample:
    """Run each step in order, each gated by one uniform draw against its probability."""
    for st in p.steps:
        if rng.random() < st.prob:
            s = TRANSFORMS[st.name](s, rng, **st.params)
    return s
