"""Learning-rate schedules and random-shape batch planning."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import DomainError

MODES = ("step", "cosine", "constant")


@dataclass(frozen=True)
class LrSchedule:
    """Iteration-indexed schedule with optional linear warmup from zero.

    After warmup the cosine mode decays over ``[warmup_iters, total_iters]``
    so that it reaches ``base_lr`` exactly when warmup ends and 0 at the end.
    """

    base_lr: float
    total_iters: int
    mode: str = "cosine"
    warmup_iters: int = 0
    step_milestones: tuple[int, ...] = ()
    step_factor: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "step_milestones", tuple(int(m) for m in self.step_milestones))
        if self.mode not in MODES:
            raise DomainError(f"unknown schedule mode {self.mode!r}")
        if not self.base_lr > 0:
            raise DomainError("base_lr must be positive")
        if self.total_iters < 1:
            raise DomainError("total_iters must be >= 1")
        if not 0 <= self.warmup_iters < self.total_iters:
            raise DomainError(
                f"warmup_iters {self.warmup_iters} must lie in [0, {self.total_iters})")
        if not 0.0 < self.step_factor < 1.0:
            raise DomainError(f"step_factor {self.step_factor} outside (0, 1)")
        ms = self.step_milestones
        if any(b <= a for a, b in zip(ms, ms[1:])):
            raise DomainError(f"milestones must be strictly increasing: {ms}")
        if ms and (ms[0] < self.warmup_iters or ms[-1] >= self.total_iters):
            raise DomainError(
                f"milestones must lie in [{self.warmup_iters}, {self.total_iters})")

    def __call__(self, t: int) -> float:
        return lr_at(self, t)


def lr_at(s: LrSchedule, t: int) -> float:
    if t < 0 or t > s.total_iters:
        raise DomainError(f"iteration {t} outside [0, {s.total_iters}]")
    if t < s.warmup_iters:
        return s.base_lr * t / s.warmup_iters
    if s.mode == "cosine":
        progress = (t - s.warmup_iters) / (s.total_iters - s.warmup_iters)
        return s.base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))
    if s.mode == "step":
        passed = sum(1 for m in s.step_milestones if m <= t)
        return s.base_lr * s.step_factor ** passed
    return s.base_lr


def emit_schedule_table(s: LrSchedule, every: int) -> list[tuple[int, float]]:
    """Rows ``(t, lr)`` at ``0, every, 2*every, ...``, always ending at ``total_iters``."""
    if every < 1:
        raise DomainError("every must be >= 1")
    ts = list(range(0, s.total_iters + 1, every))
    if ts[-1] != s.total_iters:
        ts.append(s.total_iters)
    return [(t, lr_at(s, t)) for t in ts]


@dataclass(frozen=True)
class ShapePlan:
    stride: int
    min_size: int
    max_size: int
    sizes: tuple[int, ...] = field(default=())

    @property
    def candidates(self) -> list[int]:
        return candidate_sizes(self.stride, self.min_size, self.max_size)

    def to_dict(self) -> dict:
        return {
            "stride": self.stride,
            "min_size": self.min_size,
            "max_size": self.max_size,
            "candidates": self.candidates,
            "schedule": [{"batch": i, "size": s} for i, s in enumerate(self.sizes)],
        }


def candidate_sizes(stride: int, min_size: int, max_size: int) -> list[int]:
    if stride < 1:
        raise DomainError("stride must be >= 1")
    if min_size % stride or max_size % stride:
        raise DomainError(f"sizes {min_size}, {max_size} must be multiples of stride {stride}")
    if not 0 < min_size <= max_size:
        raise DomainError(f"need 0 < min_size <= max_size, got {min_size}, {max_size}")
    return list(range(min_size, max_size + 1, stride))


def plan_shapes(stride: int, min_size: int, max_size: int, num_batches: int,
                rng: np.random.Generator) -> ShapePlan:
    """Assign every mini-batch an independent uniform square input size."""
    cands = candidate_sizes(stride, min_size, max_size)
    if num_batches < 0:
        raise DomainError("num_batches must be >= 0")
    idx = rng.integers(0, len(cands), size=num_batches)
    sizes = tuple(cands[i] for i in idx.tolist())
    return ShapePlan(stride, min_size, max_size, sizes)
