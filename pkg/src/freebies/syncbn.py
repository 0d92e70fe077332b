"""Batch-norm statistics across devices.

Shows that per-device moments differ from whole-batch moments and that
aggregating counts, sums and sums of squares recovers the latter.

Each device reduces ``(n, sum(x - k), sum((x - k)**2))`` around a pivot
``k`` shared by all devices.  With the pivot at the data's scale the raw
moment formula ``E[x^2] - E[x]^2`` stays accurate even for large offsets
with tiny spread, where it would otherwise cancel catastrophically.  Sums
use ``math.fsum`` so the result does not depend on summation order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Hashable, Sequence

from .core import DomainError


@dataclass(frozen=True)
class DeviceShard:
    values: tuple[float, ...]
    device_id: Hashable = 0

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))


@dataclass(frozen=True)
class BnStats:
    count: int
    mean: float
    variance: float


@dataclass(frozen=True)
class _Partial:
    count: int
    shifted_sum: float
    shifted_sumsq: float


def _reduce(values: Sequence[float], pivot: float) -> _Partial:
    d = [v - pivot for v in values]
    return _Partial(len(d), math.fsum(d), math.fsum(x * x for x in d))


def _finish(count: int, s1: float, s2: float, pivot: float) -> BnStats:
    m = s1 / count
    var = s2 / count - m * m
    return BnStats(count, pivot + m, max(var, 0.0))


def local_stats(shard: DeviceShard) -> BnStats:
    if not shard.values:
        raise DomainError(f"empty shard on device {shard.device_id!r}")
    pivot = shard.values[0]
    p = _reduce(shard.values, pivot)
    return _finish(p.count, p.shifted_sum, p.shifted_sumsq, pivot)


def sync_stats(shards: Sequence[DeviceShard]) -> BnStats:
    """Whole-batch moments from per-device partial sums."""
    nonempty = [s for s in shards if s.values]
    if not nonempty:
        raise DomainError("all shards are empty")
    pivot = nonempty[0].values[0]
    parts = [_reduce(s.values, pivot) for s in nonempty]
    n = sum(p.count for p in parts)
    s1 = math.fsum(p.shifted_sum for p in parts)
    s2 = math.fsum(p.shifted_sumsq for p in parts)
    return _finish(n, s1, s2, pivot)


def _rel(gap: float, ref: float):
    if ref == 0.0:
        return 0.0 if gap == 0.0 else None
    return gap / abs(ref)


def divergence_report(shards: Sequence[DeviceShard]) -> dict:
    """Per-device gaps between local and synchronized moments."""
    synced = sync_stats(shards)
    devices = []
    for shard in shards:
        if not shard.values:
            continue
        loc = local_stats(shard)
        mean_gap = abs(loc.mean - synced.mean)
        var_gap = abs(loc.variance - synced.variance)
        devices.append({
            "device_id": shard.device_id,
            "count": loc.count,
            "local_mean": loc.mean,
            "local_variance": loc.variance,
            "mean_gap": mean_gap,
            "variance_gap": var_gap,
            "mean_gap_rel": _rel(mean_gap, synced.mean),
            "variance_gap_rel": _rel(var_gap, synced.variance),
        })
    worst_mean = max(devices, key=lambda d: d["mean_gap"])
    worst_var = max(devices, key=lambda d: d["variance_gap"])
    return {
        "sync": {"count": synced.count, "mean": synced.mean, "variance": synced.variance},
        "naive_mean_of_local_variances": math.fsum(d["local_variance"] for d in devices) / len(devices),
        "devices": devices,
        "max_mean_gap": {"device_id": worst_mean["device_id"], "gap": worst_mean["mean_gap"]},
        "max_variance_gap": {"device_id": worst_var["device_id"], "gap": worst_var["variance_gap"]},
    }
