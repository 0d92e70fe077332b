"""Shared geometry and raster types.

Images are ``float64`` numpy arrays of shape ``(H, W, 3)`` holding
intensities in ``[0, 1]``.  Boxes use continuous pixel coordinates with
the origin at the top-left corner: ``(xmin, ymin, xmax, ymax)``.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "DomainError",
    "BBox",
    "ObjectLabel",
    "Sample",
    "as_image",
    "check_image",
    "make_rng",
    "sample_rng",
    "iou",
    "clip_bbox",
    "hflip",
]

RNG_ALGORITHM = "PCG64"


class DomainError(ValueError):
    """Raised when an input violates an operation's precondition."""


@dataclass(frozen=True)
class BBox:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        for name in ("xmin", "ymin", "xmax", "ymax"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not np.all(np.isfinite(self.as_tuple())):
            raise DomainError(f"non-finite box coordinates {self.as_tuple()}")
        if not (self.xmin < self.xmax and self.ymin < self.ymax):
            raise DomainError(f"box has no positive area: {self.as_tuple()}")

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (self.xmin + self.xmax) / 2.0, (self.ymin + self.ymax) / 2.0

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.xmin, self.ymin, self.xmax, self.ymax)

    def translate(self, dx: float, dy: float) -> "BBox":
        return BBox(self.xmin + dx, self.ymin + dy, self.xmax + dx, self.ymax + dy)


@dataclass(frozen=True)
class ObjectLabel:
    """One annotated object.

    ``weight`` is the per-object loss ratio introduced by mixup; plain
    annotations carry 1.0.
    """

    bbox: BBox
    class_id: int
    weight: float = 1.0
    difficult: bool = False

    def __post_init__(self):
        if self.class_id < 0:
            raise DomainError(f"negative class id {self.class_id}")
        if not 0.0 <= self.weight <= 1.0:
            raise DomainError(f"label weight {self.weight} outside [0, 1]")

    def replace(self, **changes) -> "ObjectLabel":
        return dataclasses.replace(self, **changes)


@dataclass
class Sample:
    image: np.ndarray
    labels: list[ObjectLabel] = field(default_factory=list)

    @property
    def height(self) -> int:
        return self.image.shape[0]

    @property
    def width(self) -> int:
        return self.image.shape[1]

    def validate(self, num_classes: Optional[int] = None) -> "Sample":
        check_image(self.image)
        for lab in self.labels:
            b = lab.bbox
            if b.xmin < 0 or b.ymin < 0 or b.xmax > self.width or b.ymax > self.height:
                raise DomainError(
                    f"box {b.as_tuple()} outside {self.width}x{self.height} image")
            if num_classes is not None and lab.class_id >= num_classes:
                raise DomainError(f"class id {lab.class_id} >= {num_classes}")
        return self


def as_image(data, copy: bool = False) -> np.ndarray:
    """Coerce ``data`` to a float64 ``(H, W, 3)`` array and validate it."""
    img = np.array(data, dtype=np.float64) if copy else np.asarray(data, dtype=np.float64)
    return check_image(img)


def check_image(img: np.ndarray) -> np.ndarray:
    if img.ndim != 3 or img.shape[2] != 3:
        raise DomainError(f"expected an HxWx3 image, got shape {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise DomainError(f"empty image of shape {img.shape}")
    if img.size and (np.nanmin(img) < 0.0 or np.nanmax(img) > 1.0 or np.isnan(img).any()):
        raise DomainError("image intensities must lie in [0, 1]")
    return img


def make_rng(seed: int) -> np.random.Generator:
    """Toolkit-wide PRNG: numpy's PCG64 seeded through a SeedSequence."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def sample_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for item ``index`` of a run seeded with ``seed``.

    Streams depend only on ``(seed, index)``, so a parallel map over items
    gives the same results regardless of scheduling.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(index)])))


def iou(a: BBox, b: BBox) -> float:
    iw = min(a.xmax, b.xmax) - max(a.xmin, b.xmin)
    ih = min(a.ymax, b.ymax) - max(a.ymin, b.ymin)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    return min(1.0, inter / union)


def iou_matrix(a: Sequence[BBox], b: Sequence[BBox]) -> np.ndarray:
    """Pairwise IoU, shape ``(len(a), len(b))``."""
    out = np.zeros((len(a), len(b)))
    for i, x in enumerate(a):
        for j, y in enumerate(b):
            out[i, j] = iou(x, y)
    return out


def clip_bbox(b: BBox, width: float, height: float) -> Optional[BBox]:
    """Clamp ``b`` to the image; ``None`` when nothing of positive area is left."""
    if width < 1 or height < 1:
        raise DomainError(f"invalid image size {width}x{height}")
    x0 = min(max(b.xmin, 0.0), width)
    y0 = min(max(b.ymin, 0.0), height)
    x1 = min(max(b.xmax, 0.0), width)
    y1 = min(max(b.ymax, 0.0), height)
    if x0 >= x1 or y0 >= y1:
        return None
    return BBox(x0, y0, x1, y1)


def hflip(s: Sample) -> Sample:
    w = s.width
    labels = [
        lab.replace(bbox=BBox(w - lab.bbox.xmax, lab.bbox.ymin, w - lab.bbox.xmin, lab.bbox.ymax))
        for lab in s.labels
    ]
    return Sample(s.image[:, ::-1, :].copy(), labels)
