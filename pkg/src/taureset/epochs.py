"""Reset-driven epoch segmentation of a swap path.

A strategy centered on bucket M keeps its position while the price stays
within a coverage window of buckets around M. The first swap that lands
outside the window closes the running epoch and opens the next one at its
own price — consecutive epochs share that boundary swap. The coverage
window is [M - tau - eta_down, M + tau + eta_up]; the eta extensions only
delay resets, they carry no allocation weight.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .clmm import BucketPartition, bucket_of
from .errors import EmptyPath, SupportClipped, ValidationError
from .marketdata import PricePath


@dataclass(frozen=True)
class StrategyShape:
    """Half-width tau of the weighted band plus optional one-sided guards."""

    tau: int
    eta_up: int = 0
    eta_down: int = 0

    def __post_init__(self):
        if self.tau < 0 or self.eta_up < 0 or self.eta_down < 0:
            raise ValidationError("tau and eta extensions must be non-negative")

    @property
    def coverage_halfwidths(self) -> tuple[int, int]:
        return (self.tau + self.eta_down, self.tau + self.eta_up)


@dataclass(frozen=True)
class SupportRange:
    """Bucket window [lo, hi]; weights live only on [active_lo, active_hi]."""

    lo: int
    hi: int
    active_lo: int
    active_hi: int

    @property
    def buckets(self) -> np.ndarray:
        return np.arange(self.lo, self.hi + 1)

    @property
    def width(self) -> int:
        return self.hi - self.lo + 1

    def contains(self, n: int) -> bool:
        return self.lo <= n <= self.hi


def liquid_support(M: int, shape: StrategyShape, part: BucketPartition) -> SupportRange:
    """Coverage window for a position centered on bucket M.

    Raises SupportClipped when any covered bucket would fall outside the
    partition — positions are never silently truncated.
    """
    down, up = shape.coverage_halfwidths
    lo, hi = M - down, M + up
    if lo < 1 or hi > part.count:
        raise SupportClipped(
            f"support [{lo}, {hi}] around bucket {M} leaves partition 1..{part.count}"
        )
    return SupportRange(lo, hi, M - shape.tau, M + shape.tau)


@dataclass(frozen=True)
class Epoch:
    """Swap-index slice [start, end] of a path, centered on bucket `center`.

    A degenerate epoch (trigger on the final swap) has start == end and is
    treated as two identical prices so downstream fee/value algebra stays
    well-defined.
    """

    index: int
    start: int
    end: int
    center: int

    @property
    def degenerate(self) -> bool:
        return self.start == self.end

    @property
    def q(self) -> int:
        return 2 if self.degenerate else self.end - self.start + 1


@dataclass(frozen=True)
class EpochSet:
    path: PricePath
    partition: BucketPartition
    shape: StrategyShape
    epochs: list[Epoch] = field(default_factory=list)

    @property
    def K(self) -> int:
        return len(self.epochs)

    def __iter__(self):
        return iter(self.epochs)

    def __getitem__(self, i: int) -> Epoch:
        return self.epochs[i]


def partition_epochs(path: PricePath, part: BucketPartition, shape: StrategyShape) -> EpochSet:
    """Split a swap path into reset epochs under the given strategy shape."""
    if len(path) == 0:
        raise EmptyPath("cannot epoch an empty path")
    buckets = np.array([bucket_of(p, part) for p in path.prices])
    down, up = shape.coverage_halfwidths

    epochs: list[Epoch] = []
    start = 0
    center = int(buckets[0])
    liquid_support(center, shape, part)  # validate the opening position fits
    for i in range(1, len(path)):
        b = int(buckets[i])
        if b < center - down or b > center + up:
            epochs.append(Epoch(len(epochs) + 1, start, i, center))
            start = i
            center = b
            liquid_support(center, shape, part)
    epochs.append(Epoch(len(epochs) + 1, start, len(path) - 1, center))
    return EpochSet(path, part, shape, epochs)


def epoch_prices(path: PricePath, epoch: Epoch) -> np.ndarray:
    """Price sequence of an epoch; a degenerate epoch duplicates its only price."""
    if epoch.degenerate:
        p = path.prices[epoch.start]
        return np.array([p, p])
    return path.prices[epoch.start : epoch.end + 1]


def epoch_volume(path: PricePath, epoch: Epoch) -> float:
    """Volume attributed to an epoch: swaps after its opening print.

    The shared boundary swap closes the old epoch, so its volume counts
    there and not in the epoch it opens.
    """
    if epoch.degenerate:
        return 0.0
    return float(np.sum(path.volumes[epoch.start + 1 : epoch.end + 1]))
