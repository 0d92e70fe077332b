"""Geometry-preserving image mixup for detection.

Two images are blended on a canvas large enough to hold both, each
anchored at the top-left corner at its natural size.  Boxes are kept as
they are; each label's loss weight is scaled by the blend coefficient of
the image it came from.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import DomainError, Sample

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BetaParams:
    alpha: float = 1.5
    beta: float = 1.5

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise DomainError(f"Beta parameters must be positive, got ({self.alpha}, {self.beta})")


@dataclass(frozen=True)
class MixupConfig:
    dist: BetaParams = field(default_factory=BetaParams)
    fixed_ratio: Optional[float] = None
    min_weight: float = 0.0

    def __post_init__(self):
        if self.fixed_ratio is not None and not 0.0 <= self.fixed_ratio <= 1.0:
            raise DomainError(f"fixed_ratio {self.fixed_ratio} outside [0, 1]")
        if not 0.0 <= self.min_weight < 1.0:
            raise DomainError(f"min_weight {self.min_weight} outside [0, 1)")
        if self.fixed_ratio is None and (self.dist.alpha < 1 or self.dist.beta < 1):
            warnings.warn(
                f"B({self.dist.alpha}, {self.dist.beta}) puts most mass near 0 and 1; "
                "detection mixup works best with alpha, beta >= 1",
                stacklevel=3,
            )


def sample_beta(dist: BetaParams, rng: np.random.Generator) -> float:
    """Draw from Beta(alpha, beta) as X / (X + Y) with independent Gamma draws."""
    while True:
        x = rng.standard_gamma(dist.alpha)
        y = rng.standard_gamma(dist.beta)
        # both gammas can underflow to 0 for tiny shape parameters
        if x + y > 0:
            return float(x / (x + y))


def _snap(lam: float) -> float:
    # round lam so that 1 - lam is exact; this makes mix(a, b, lam) and
    # mix(b, a, 1 - lam) bit-identical
    return 1.0 - (1.0 - float(lam))


def mix_images(a: np.ndarray, b: np.ndarray, lam: float) -> np.ndarray:
    """Blend ``lam * a + (1 - lam) * b`` on a zero canvas of the larger extent."""
    if not 0.0 <= lam <= 1.0:
        raise DomainError(f"mix coefficient {lam} outside [0, 1]")
    lam = _snap(lam)
    h = max(a.shape[0], b.shape[0])
    w = max(a.shape[1], b.shape[1])
    canvas = np.zeros((h, w, 3), dtype=np.float64)
    canvas[: a.shape[0], : a.shape[1]] += lam * a
    canvas[: b.shape[0], : b.shape[1]] += (1.0 - lam) * b
    # lam + (1 - lam) can exceed 1 by an ulp
    np.minimum(canvas, 1.0, out=canvas)
    return canvas


def _keep(weight: float, min_weight: float) -> bool:
    # min_weight == 0 disables dropping, so zero-weight labels survive by default
    return min_weight <= 0.0 or weight > min_weight


def mix_samples(a: Sample, b: Sample, cfg: MixupConfig, rng: np.random.Generator) -> tuple[Sample, float]:
    """Mix two samples and merge their labels.

    Returns the mixed sample and the coefficient applied to ``a``.
    """
    if cfg.fixed_ratio is not None:
        lam = cfg.fixed_ratio
    else:
        lam = sample_beta(cfg.dist, rng)
    lam = _snap(lam)
    image = mix_images(a.image, b.image, lam)
    labels = [lab.replace(weight=lab.weight * lam) for lab in a.labels]
    labels += [lab.replace(weight=lab.weight * (1.0 - lam)) for lab in b.labels]
    labels = [lab for lab in labels if _keep(lab.weight, cfg.min_weight)]
    return Sample(image, labels), lam


def pair_indices(n_a: int, n_b: int, rng: np.random.Generator, strategy: str = "shuffle") -> list[int]:
    """Choose a partner in the second set for each of ``n_a`` items.

    ``shuffle`` walks a random permutation of the partners, reshuffling
    each time it is exhausted; ``sequential`` pairs item i with i mod n_b.
    """
    if n_b < 1:
        raise DomainError("nothing to pair with")
    if strategy == "sequential":
        return [i % n_b for i in range(n_a)]
    if strategy != "shuffle":
        raise DomainError(f"unknown pair strategy {strategy!r}")
    out: list[int] = []
    while len(out) < n_a:
        out.extend(int(i) for i in rng.permutation(n_b))
    return out[:n_a]
