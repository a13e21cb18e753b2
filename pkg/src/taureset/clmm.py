"""Concentrated-liquidity bucket math.

Prices live on a uniform partition of [lower, lower + count*width) split
into `count` buckets of width `width`. Each bucket n holds a band
[p_a, p_b); liquidity L placed in that band obeys

    (x + L/sqrt(p_b)) * (y + L*sqrt(p_a)) = L**2

with reserves pinned to one side once the price leaves the band. All
closed forms below follow from that invariant; the clamped square-root
formulation makes each quantity continuous across band edges by
construction.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateBucket, OutOfPartition, ValidationError


@dataclass(frozen=True)
class BucketPartition:
    """Uniform price buckets: bucket n (1-based) covers [edges[n-1], edges[n])."""

    lower: float
    width: float
    count: int

    def __post_init__(self):
        if self.width <= 0.0:
            raise DegenerateBucket(f"bucket width must be positive, got {self.width}")
        if self.count < 1:
            raise ValidationError(f"need at least one bucket, got {self.count}")
        if self.lower < 0.0:
            raise ValidationError(f"lower edge must be non-negative, got {self.lower}")

    @property
    def upper(self) -> float:
        return self.lower + self.width * self.count

    @property
    def edges(self) -> np.ndarray:
        return self.lower + self.width * np.arange(self.count + 1, dtype=float)

    @property
    def sqrt_edges(self) -> np.ndarray:
        return np.sqrt(self.edges)

    def band(self, n: int) -> tuple[float, float]:
        if not 1 <= n <= self.count:
            raise OutOfPartition(f"bucket {n} outside 1..{self.count}")
        return (self.lower + (n - 1) * self.width, self.lower + n * self.width)

    def bucket_of(self, p: float) -> int:
        return bucket_of(p, self)


def bucket_of(p: float, part: BucketPartition) -> int:
    """1-based index of the bucket containing price `p`.

    A price on a shared boundary belongs to the upper bucket; the top edge
    of the partition itself closes bucket `count`.
    """
    if not np.isfinite(p):
        raise OutOfPartition(f"price {p} is not finite")
    if p == part.upper:
        return part.count
    if p < part.lower or p > part.upper:
        raise OutOfPartition(
            f"price {p} outside [{part.lower}, {part.upper}]"
        )
    i = int(np.floor((p - part.lower) / part.width)) + 1
    # repair float rounding at the edges so boundary prices resolve upward
    if i <= part.count and p >= part.lower + i * part.width:
        i += 1
    if i > 1 and p < part.lower + (i - 1) * part.width:
        i -= 1
    return min(max(i, 1), part.count)


def _clamped_sqrt(p, sa, sb):
    return np.clip(np.sqrt(p), sa, sb)


def liquidity_from_capital(W: float, p: float, p_a: float, p_b: float) -> tuple[float, float, float]:
    """Split capital W (numéraire) into reserves (x, y) and liquidity L for band [p_a, p_b].

    Below the band all capital buys risky token; above, it stays in
    numéraire; inside, the split keeps both legs' liquidity equal. In every
    case y + p*x == W.
    """
    if not (0.0 <= p_a < p_b):
        raise ValidationError(f"need 0 <= p_a < p_b, got ({p_a}, {p_b})")
    if p <= 0.0 or not np.isfinite(p):
        raise ValidationError(f"price must be positive and finite, got {p}")
    if W < 0.0:
        raise ValidationError(f"capital must be non-negative, got {W}")
    sa, sb = np.sqrt(p_a), np.sqrt(p_b)
    if p <= p_a:
        x = W / p
        L = x * sa * sb / (sb - sa)
        return float(x), 0.0, float(L)
    if p >= p_b:
        y = W
        L = y / (sb - sa)
        return 0.0, float(y), float(L)
    sp = np.sqrt(p)
    x_L = sp * sb / (sb - sp)   # price per unit of x-leg liquidity
    y_L = 1.0 / (sp - sa)       # units of y-leg liquidity per numéraire
    denom = x_L + y_L * p
    x = W * y_L / denom
    y = W * (1.0 - y_L * p / denom)
    L = x * x_L
    return float(x), float(y), float(L)


def unit_liquidity(p: float, part: BucketPartition) -> np.ndarray:
    """Liquidity bought by one numéraire unit in each bucket, at price `p` (vectorized).

    Linear in capital, so profiles for any allocation follow by scaling.
    Buckets whose lower edge is 0 and that sit above the price yield zero:
    capital below such a band converts fully to risky token but the band
    has no finite liquidity density at p_a = 0.
    """
    se = part.sqrt_edges
    sa, sb = se[:-1], se[1:]
    sp = np.sqrt(p)
    out = np.empty(part.count)

    below = sp <= sa      # price at or below the band: all risky
    above = sp >= sb      # price at or above the band: all numéraire
    inside = ~(below | above)

    with np.errstate(divide="ignore", invalid="ignore"):
        out[below] = (sa[below] * sb[below] / (sb[below] - sa[below])) / p
    out[above] = 1.0 / (sb[above] - sa[above])
    if np.any(inside):
        a, b = sa[inside], sb[inside]
        x_L = sp * b / (b - sp)
        y_L = 1.0 / (sp - a)
        x = y_L / (x_L + y_L * p)
        out[inside] = x * x_L
    out[~np.isfinite(out)] = 0.0
    return out


def liquidity_state(L: float, p: float, p_a: float, p_b: float) -> tuple[float, float]:
    """Reserves (x, y) held by liquidity L in band [p_a, p_b] at price p."""
    if L < 0.0:
        raise ValidationError(f"liquidity must be non-negative, got {L}")
    if not (0.0 <= p_a < p_b):
        raise ValidationError(f"need 0 <= p_a < p_b, got ({p_a}, {p_b})")
    if p <= 0.0 or not np.isfinite(p):
        raise ValidationError(f"price must be positive and finite, got {p}")
    sa, sb = np.sqrt(p_a), np.sqrt(p_b)
    s = float(_clamped_sqrt(p, sa, sb))
    x = L * (1.0 / s - 1.0 / sb)
    y = L * (s - sa)
    return float(x), float(y)


def delta_reserves(L: float, p_from: float, p_to: float, p_a: float, p_b: float) -> tuple[float, float]:
    """Pool-side reserve change (dx, dy) as price moves p_from -> p_to.

    Positive components are inflows the pool collects fees on. Exact
    round-trip cancellation holds because both legs evaluate the same
    clamped closed form.
    """
    x0, y0 = liquidity_state(L, p_from, p_a, p_b)
    x1, y1 = liquidity_state(L, p_to, p_a, p_b)
    return x1 - x0, y1 - y0


@dataclass(frozen=True)
class LiquidityProfile:
    """Per-bucket liquidity over a partition."""

    partition: BucketPartition
    L: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.L, dtype=float)
        if arr.shape != (self.partition.count,):
            raise ValidationError(
                f"profile length {arr.shape} does not match {self.partition.count} buckets"
            )
        if np.any(~np.isfinite(arr)) or np.any(arr < 0.0):
            raise ValidationError("bucket liquidity must be finite and non-negative")
        object.__setattr__(self, "L", arr)

    def __add__(self, other: "LiquidityProfile") -> "LiquidityProfile":
        if other.partition != self.partition:
            raise ValidationError("profiles live on different partitions")
        return LiquidityProfile(self.partition, self.L + other.L)


@dataclass(frozen=True)
class ReserveState:
    x: np.ndarray
    y: np.ndarray

    @property
    def totals(self) -> tuple[float, float]:
        return float(np.sum(self.x)), float(np.sum(self.y))

    def value(self, p: float) -> float:
        tx, ty = self.totals
        return ty + p * tx


def profile_reserves(profile: LiquidityProfile, p: float) -> ReserveState:
    """Reserves of every bucket at price p (vectorized liquidity_state)."""
    part = profile.partition
    se = part.sqrt_edges
    sa, sb = se[:-1], se[1:]
    s = _clamped_sqrt(p, sa, sb)
    x = profile.L * (1.0 / s - 1.0 / sb)
    y = profile.L * (s - sa)
    return ReserveState(x, y)


def delta_inflows(part: BucketPartition, p_from: float, p_to: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-unit-liquidity positive inflows (ax, ay) for each bucket, p_from -> p_to.

    Scaling by a profile's L and summing gives that profile's collected
    swap inflows for the move — the quantity fee revenue is proportional
    to. Only the legs the pool receives count: rising prices push y in,
    falling prices push x in.
    """
    se = part.sqrt_edges
    sa, sb = se[:-1], se[1:]
    s0 = _clamped_sqrt(p_from, sa, sb)
    s1 = _clamped_sqrt(p_to, sa, sb)
    ax = np.maximum(1.0 / s1 - 1.0 / s0, 0.0)
    ay = np.maximum(s1 - s0, 0.0)
    return ax, ay


def path_inflows(part: BucketPartition, prices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Accumulated (ax, ay) over every consecutive step of a price sequence."""
    prices = np.asarray(prices, dtype=float)
    se = part.sqrt_edges
    sa, sb = se[:-1], se[1:]
    s = np.clip(np.sqrt(prices)[:, None], sa[None, :], sb[None, :])
    dx = 1.0 / s[1:] - 1.0 / s[:-1]
    dy = s[1:] - s[:-1]
    ax = np.maximum(dx, 0.0).sum(axis=0)
    ay = np.maximum(dy, 0.0).sum(axis=0)
    return ax, ay
