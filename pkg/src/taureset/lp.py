"""LP position accounting: allocations, fee shares, epoch-end value, gas.

An LP strategy is a symmetric capital split over the 2*tau+1 buckets
around the entry bucket M, stored in reduced form rho = (center weight,
paired weight at distance 1, ..., distance tau), sum 1. Fee income is a
per-bucket share of a reference profile's simulated fee flow; four share
conventions are supported, from whole-pool accounting down to a fully
diluted add-on position. Position value marks shared reserves at the
closing price, so divergence loss lands in the epoch-end capital.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .calibrate import FeeTotals
from .clmm import BucketPartition, LiquidityProfile, path_inflows, unit_liquidity
from .epochs import StrategyShape
from .errors import SupportClipped, ValidationError, ZeroPoolLiquidity


class RewardApproach(Enum):
    """How the LP's fee cut relates to the calibrated pool.

    POOL_LEVEL accounts fees for the whole pool (shares play no role).
    ISOLATED_LP treats the LP profile as the only liquidity, keeping every
    fee it would collect. SHARE_OF_HISTORICAL pays the LP its per-bucket
    liquidity ratio against the calibrated pool, capped at full capture —
    the LP can never earn more than the pool did. AUGMENTED stacks the LP
    on top of the pool and pays the diluted share of the combined flow.
    """

    POOL_LEVEL = "pool_level"
    ISOLATED_LP = "isolated_lp"
    SHARE_OF_HISTORICAL = "share_of_historical"
    AUGMENTED = "augmented"


def expand_allocation(rho_hat: np.ndarray, M: int, N: int, shape: StrategyShape) -> np.ndarray:
    """Reduced weights -> full per-bucket weight vector of length N.

    Center bucket M takes rho[0]; each distance-k pair splits rho[k]
    evenly. Guard buckets and everything outside the support stay zero.
    """
    rho = np.asarray(rho_hat, dtype=float)
    if rho.shape != (shape.tau + 1,):
        raise ValidationError(
            f"reduced weights need length tau+1={shape.tau + 1}, got {rho.shape}"
        )
    if np.any(rho < 0) or np.any(~np.isfinite(rho)):
        raise ValidationError("allocation weights must be finite and non-negative")
    if not np.isclose(rho.sum(), 1.0, rtol=0.0, atol=1e-6):
        raise ValidationError(f"reduced weights must sum to 1, got {rho.sum()}")
    down, up = shape.coverage_halfwidths
    if M - down < 1 or M + up > N:
        raise SupportClipped(
            f"support [{M - down}, {M + up}] around bucket {M} leaves partition 1..{N}"
        )
    tau = shape.tau
    alpha = np.zeros(N)
    alpha[M - 1] = rho[0]
    for k in range(1, tau + 1):
        alpha[M - 1 + k] = rho[k] / 2.0
        alpha[M - 1 - k] = rho[k] / 2.0
    return alpha


def reduce_allocation(alpha: np.ndarray, M: int, shape: StrategyShape) -> np.ndarray:
    """Full weight vector -> reduced form (mirror pairs folded together)."""
    alpha = np.asarray(alpha, dtype=float)
    tau = shape.tau
    if not 1 <= M - tau and M + tau <= len(alpha):
        raise ValidationError(f"support around bucket {M} leaves the weight vector")
    rho = np.empty(tau + 1)
    rho[0] = alpha[M - 1]
    for k in range(1, tau + 1):
        rho[k] = alpha[M - 1 + k] + alpha[M - 1 - k]
    return rho


@dataclass(frozen=True)
class LpAllocation:
    """A position: capital, center bucket, shape, and reduced weights."""

    W: float
    center: int
    shape: StrategyShape
    rho: np.ndarray
    N: int

    def __post_init__(self):
        if self.W < 0.0:
            raise ValidationError(f"capital must be non-negative, got {self.W}")
        rho = np.asarray(self.rho, dtype=float)
        # expand_allocation re-validates shape, positivity, sum, and clipping
        alpha = expand_allocation(rho, self.center, self.N, self.shape)
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "_alpha", alpha)

    @property
    def alpha(self) -> np.ndarray:
        return self._alpha


def lp_profile(alloc: LpAllocation, p_open: float, part: BucketPartition) -> LiquidityProfile:
    """Liquidity bought per bucket with alpha_n * W at the opening price."""
    if part.count != alloc.N:
        raise ValidationError(
            f"allocation built for {alloc.N} buckets, partition has {part.count}"
        )
    unit = unit_liquidity(p_open, part)
    return LiquidityProfile(part, alloc.W * alloc.alpha * unit)


def lp_shares(
    L_lp: LiquidityProfile,
    L_pool: LiquidityProfile,
    approach: RewardApproach,
) -> np.ndarray:
    """Per-bucket fraction of the reference fee flow the LP receives."""
    if L_lp.partition != L_pool.partition:
        raise ValidationError("profiles live on different partitions")
    lpL, poolL = L_lp.L, L_pool.L
    if approach is RewardApproach.POOL_LEVEL:
        return np.ones_like(poolL)
    if approach is RewardApproach.ISOLATED_LP:
        return (lpL > 0.0).astype(float)
    if approach is RewardApproach.SHARE_OF_HISTORICAL:
        bad = (lpL > 0.0) & (poolL == 0.0)
        if np.any(bad):
            raise ZeroPoolLiquidity(
                f"pool holds no liquidity in buckets {[int(n) for n in np.flatnonzero(bad) + 1]}"
            )
        safe = np.where(poolL > 0.0, poolL, 1.0)
        return np.minimum(np.where(poolL > 0.0, lpL / safe, 0.0), 1.0)
    denom = poolL + lpL
    safe = np.where(denom > 0.0, denom, 1.0)
    return np.where(denom > 0.0, lpL / safe, 0.0)


def fee_base_profile(
    L_lp: LiquidityProfile,
    L_pool: LiquidityProfile,
    approach: RewardApproach,
) -> LiquidityProfile:
    """Reference profile whose fee flow the shares divide.

    The calibrated pool for the share-capped and pool-level views, the LP
    alone when isolated, and the stacked sum when the LP augments the pool.
    """
    if approach is RewardApproach.ISOLATED_LP:
        return L_lp
    if approach is RewardApproach.AUGMENTED:
        return L_pool + L_lp
    return L_pool


def lp_fees(
    shares: np.ndarray,
    volume_profile: LiquidityProfile,
    prices: np.ndarray,
    gamma: float,
    closing_price: float | None = None,
) -> FeeTotals:
    """Fee income over a price slice: the shared slice of per-bucket inflows.

    The token legs are taxed in kind and marked in numéraire at
    `closing_price` (default: the slice's last print).
    """
    shares = np.asarray(shares, dtype=float)
    if shares.shape != volume_profile.L.shape:
        raise ValidationError("shares must align with the profile's buckets")
    if np.any(shares < 0.0) or np.any(shares > 1.0 + 1e-12):
        raise ValidationError("shares live in [0, 1]")
    prices = np.asarray(prices, dtype=float)
    ax, ay = path_inflows(volume_profile.partition, prices)
    earning = shares * volume_profile.L
    sx = gamma * float(earning @ ax)
    sy = gamma * float(earning @ ay)
    p_mark = float(prices[-1]) if closing_price is None else float(closing_price)
    return FeeTotals(sx, sy, p_mark * sx + sy)


def end_of_epoch_capital(
    shares: np.ndarray,
    L_pool: LiquidityProfile,
    closing_price: float,
    F_lp: float,
) -> float:
    """LP capital after an epoch: shared reserves at the close plus fees.

    `L_pool` is the same reference profile the shares divide (the stacked
    sum under the augmented view, the LP itself when isolated), so the
    shared slice is exactly the LP's own position. The revaluation term
    carries the divergence loss, including full conversion to the risky
    leg when the close falls below the support.
    """
    part = L_pool.partition
    se = part.sqrt_edges
    sa, sb = se[:-1], se[1:]
    s = np.clip(np.sqrt(closing_price), sa, sb)
    owned = np.asarray(shares, dtype=float) * L_pool.L
    x = owned * (1.0 / s - 1.0 / sb)
    y = owned * (s - sa)
    return float(np.sum(y + closing_price * x)) + F_lp


# --- reallocation gas -------------------------------------------------------

@dataclass(frozen=True)
class CostModel:
    gas_mint: float = 430_000.0
    gas_burn: float = 215_000.0
    gas_price_gwei: float = 20.0

    def __post_init__(self):
        if self.gas_mint < 0 or self.gas_burn < 0 or self.gas_price_gwei < 0:
            raise ValidationError("gas amounts and price must be non-negative")

    @property
    def mint_eth(self) -> float:
        return self.gas_mint * self.gas_price_gwei * 1e-9

    @property
    def burn_eth(self) -> float:
        return self.gas_burn * self.gas_price_gwei * 1e-9


_GAS_RTOL = 1e-9


def gas_cost(
    prev: LiquidityProfile | None,
    new: LiquidityProfile | None,
    cost: CostModel,
    eth_price: float,
) -> float:
    """Numéraire cost of moving between liquidity profiles.

    A bucket whose liquidity rises pays one mint, one that falls pays one
    burn; unchanged amounts (1e-9 relative) are free. The ETH leg is
    priced at `eth_price` — the pool's own closing price when ETH is the
    risky token.
    """
    if prev is None and new is None:
        return 0.0
    ref = new if new is not None else prev
    prevL = prev.L if prev is not None else np.zeros(ref.partition.count)
    newL = new.L if new is not None else np.zeros(ref.partition.count)
    if prev is not None and new is not None and prev.partition != new.partition:
        raise ValidationError("profiles live on different partitions")
    diff = newL - prevL
    tol = _GAS_RTOL * np.maximum(np.abs(newL), np.abs(prevL))
    mints = int(np.sum(diff > tol))
    burns = int(np.sum(diff < -tol))
    return (mints * cost.mint_eth + burns * cost.burn_eth) * eth_price
