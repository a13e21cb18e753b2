"""Historical liquidity-profile calibration.

The pool's (unobserved) liquidity profile over an epoch is modeled as a
Gaussian bump over bucket centers, parameterized by (mu, sigma) in units
of a per-epoch anchor/scale. Simulated fee revenue — pool inflows along
the epoch's realized price path, taxed at the fee tier and valued at the
closing price — is matched to the historical fee (fee tier times traded
volume) by grid search. The first grid point within tolerance wins, in
row-major order (mu ascending outer, sigma ascending inner); if none
lands, the closest miss is kept and flagged best-effort.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .clmm import BucketPartition, LiquidityProfile, path_inflows, unit_liquidity
from .errors import EmptySeries, ValidationError

WEIGHT_FLOOR = 1e-12


@dataclass(frozen=True)
class GaussianParams:
    mu: float
    sigma: float

    def __post_init__(self):
        if self.sigma <= 0.0:
            raise ValidationError(f"sigma must be positive, got {self.sigma}")


def _default_mu_grid() -> np.ndarray:
    return np.linspace(-3.0, 3.0, 61)


def _default_sigma_grid() -> np.ndarray:
    return np.geomspace(np.sqrt(0.01), np.sqrt(10.0), 61)


@dataclass(frozen=True)
class CalibrationConfig:
    mu_grid: np.ndarray = field(default_factory=_default_mu_grid)
    sigma_grid: np.ndarray = field(default_factory=_default_sigma_grid)
    rel_tol: float = 0.05

    def __post_init__(self):
        mu = np.asarray(self.mu_grid, dtype=float)
        sig = np.asarray(self.sigma_grid, dtype=float)
        if mu.ndim != 1 or sig.ndim != 1 or len(mu) == 0 or len(sig) == 0:
            raise ValidationError("parameter grids must be non-empty 1-d arrays")
        if np.any(sig <= 0.0):
            raise ValidationError("sigma grid must be positive")
        if self.rel_tol <= 0.0:
            raise ValidationError("rel_tol must be positive")
        object.__setattr__(self, "mu_grid", mu)
        object.__setattr__(self, "sigma_grid", sig)


@dataclass(frozen=True)
class FeeTotals:
    """Fee-side inflows (token units) and their value at the marking price."""

    inflow_x: float
    inflow_y: float
    fee: float


@dataclass(frozen=True)
class CalibrationResult:
    params: GaussianParams
    weights: np.ndarray
    profile: LiquidityProfile
    fee_sim: float
    fee_hist: float
    anchor: float
    scale: float
    best_effort: bool = False
    mu_min: float = -3.0

    @property
    def mu_at_floor(self) -> bool:
        return self.params.mu <= self.mu_min + 1e-12


def anchor_and_scale(prices: np.ndarray, part: BucketPartition) -> tuple[float, float]:
    """Epoch anchor (mean price) and scale (population std, floored at one width)."""
    prices = np.asarray(prices, dtype=float)
    if len(prices) == 0:
        raise EmptySeries("no prices to anchor on")
    return float(np.mean(prices)), float(max(np.std(prices), part.width))


def bucket_centers(part: BucketPartition) -> np.ndarray:
    return part.lower + (np.arange(part.count) + 0.5) * part.width


def gaussian_weights(
    part: BucketPartition, params: GaussianParams, anchor: float, scale: float
) -> np.ndarray:
    """Normalized bump over bucket centers, floored so every bucket stays live."""
    u = (bucket_centers(part) - anchor) / scale
    raw = np.exp(-((u - params.mu) ** 2) / (2.0 * params.sigma**2))
    raw = np.maximum(raw, WEIGHT_FLOOR)
    return raw / raw.sum()


def _weight_matrix(
    part: BucketPartition, mu_grid: np.ndarray, sigma_grid: np.ndarray,
    anchor: float, scale: float,
) -> np.ndarray:
    """(len(mu)*len(sigma), N) weight rows in row-major (mu outer) grid order."""
    u = (bucket_centers(part) - anchor) / scale
    mu = mu_grid[:, None, None]
    sig = sigma_grid[None, :, None]
    raw = np.exp(-((u[None, None, :] - mu) ** 2) / (2.0 * sig**2))
    raw = np.maximum(raw, WEIGHT_FLOOR)
    raw /= raw.sum(axis=2, keepdims=True)
    return raw.reshape(-1, part.count)


def profile_from_params(
    part: BucketPartition,
    params: GaussianParams,
    anchor: float,
    scale: float,
    p_open: float,
    capital: float,
) -> LiquidityProfile:
    """Liquidity bought by `capital` spread per the bump, all priced at `p_open`."""
    w = gaussian_weights(part, params, anchor, scale)
    return LiquidityProfile(part, capital * w * unit_liquidity(p_open, part))


def simulate_pool_fees(
    profile: LiquidityProfile,
    prices: np.ndarray,
    gamma: float,
    value_price: float | None = None,
) -> FeeTotals:
    """Fees the profile collects over a price sequence.

    Inflows accumulate per swap step and per bucket; the fee tier taxes
    them in kind, and the total is marked in numéraire at `value_price`
    (default: the closing price of the sequence).
    """
    prices = np.asarray(prices, dtype=float)
    if len(prices) < 2:
        raise EmptySeries("need at least two prices to move through")
    ax, ay = path_inflows(profile.partition, prices)
    sx = gamma * float(profile.L @ ax)
    sy = gamma * float(profile.L @ ay)
    p_mark = float(prices[-1]) if value_price is None else float(value_price)
    return FeeTotals(sx, sy, p_mark * sx + sy)


def historical_fee(volumes: np.ndarray, gamma: float) -> float:
    """Fee-tier revenue on the traded volume after the opening print."""
    volumes = np.asarray(volumes, dtype=float)
    return gamma * float(np.sum(volumes[1:]))


def calibrate_epoch(
    prices: np.ndarray,
    volumes: np.ndarray,
    part: BucketPartition,
    gamma: float,
    capital: float,
    config: CalibrationConfig | None = None,
) -> CalibrationResult:
    """Fit (mu, sigma) so simulated fees match the epoch's historical fees.

    `prices` and `volumes` are the epoch's aligned swap columns (the
    opening print's volume belongs to the previous epoch and is ignored).
    A zero historical fee short-circuits to the flattest admissible bump.
    """
    if config is None:
        config = CalibrationConfig()
    prices = np.asarray(prices, dtype=float)
    volumes = np.asarray(volumes, dtype=float)
    if len(prices) < 2:
        raise EmptySeries("an epoch carries at least two prices")
    if len(volumes) != len(prices):
        raise ValidationError("volumes must align with prices")

    anchor, scale = anchor_and_scale(prices, part)
    p_open, p_close = float(prices[0]), float(prices[-1])
    hist = historical_fee(volumes, gamma)

    mu_min = float(config.mu_grid[0])
    if hist == 0.0:
        params = GaussianParams(0.0, float(config.sigma_grid[-1]))
        prof = profile_from_params(part, params, anchor, scale, p_open, capital)
        sim = simulate_pool_fees(prof, prices, gamma).fee
        return CalibrationResult(
            params, gaussian_weights(part, params, anchor, scale), prof,
            sim, hist, anchor, scale, mu_min=mu_min,
        )

    weights = _weight_matrix(part, config.mu_grid, config.sigma_grid, anchor, scale)
    unit = unit_liquidity(p_open, part)
    liq = capital * weights * unit[None, :]
    ax, ay = path_inflows(part, prices)
    sims = gamma * (p_close * (liq @ ax) + liq @ ay)

    err = np.abs(sims - hist)
    hits = np.flatnonzero(err <= config.rel_tol * hist)
    if len(hits) > 0:
        g = int(hits[0])
        best_effort = False
    else:
        g = int(np.argmin(err))
        best_effort = True
    n_sig = len(config.sigma_grid)
    params = GaussianParams(
        float(config.mu_grid[g // n_sig]), float(config.sigma_grid[g % n_sig])
    )
    prof = LiquidityProfile(part, liq[g])
    return CalibrationResult(
        params, weights[g], prof, float(sims[g]), hist, anchor, scale,
        best_effort, mu_min,
    )


# --- sub-epoch segmentation -------------------------------------------------

def segment_subepochs(q: int, n: int) -> list[tuple[int, int]]:
    """Offsets (first, last) of overlapping n-price windows over q prices.

    Consecutive windows share one price. The step remainder is absorbed by
    the final window; a window size exceeding the epoch collapses to a
    single full-epoch window rather than failing.
    """
    if q < 2:
        raise ValidationError(f"an epoch has at least two prices, got q={q}")
    if n < 2:
        raise ValidationError(f"windows need at least two prices, got n={n}")
    m = max((q - 1) // (n - 1), 1)
    step = n - 1
    windows = [(j * step, (j + 1) * step) for j in range(m)]
    windows[-1] = (windows[-1][0], q - 1)
    return windows


@dataclass(frozen=True)
class WindowCalibration:
    offsets: tuple[int, int]
    result: CalibrationResult


def calibrate_subepochs(
    prices: np.ndarray,
    volumes: np.ndarray,
    part: BucketPartition,
    gamma: float,
    capital: float,
    n: int,
    config: CalibrationConfig | None = None,
) -> list[WindowCalibration]:
    """Calibrate each n-price window of an epoch independently.

    Windows re-anchor on their own prices and re-buy the bump at their own
    opening print, so the pool profile tracks the price between resets.
    """
    prices = np.asarray(prices, dtype=float)
    volumes = np.asarray(volumes, dtype=float)
    out = []
    for (a, b) in segment_subepochs(len(prices), n):
        res = calibrate_epoch(
            prices[a : b + 1], volumes[a : b + 1], part, gamma, capital, config
        )
        out.append(WindowCalibration((a, b), res))
    return out
