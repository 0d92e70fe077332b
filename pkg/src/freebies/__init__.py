"""Training-time tricks for object detection: mixup, label smoothing,
learning-rate schedules, augmentation, and the evaluation tools to check them."""

__version__ = "0.1.0"

from .core import BBox, DomainError, ObjectLabel, Sample, clip_bbox, hflip, iou, make_rng, sample_rng

__all__ = [
    "__version__",
    "BBox",
    "DomainError",
    "ObjectLabel",
    "Sample",
    "clip_bbox",
    "hflip",
    "iou",
    "make_rng",
    "sample_rng",
]
