"""Shared synthetic-data builders for the test suite."""
import numpy as np

from taureset import BarSeries, BucketPartition, PricePath

# one trading week of minute bars — the feature look-back requirement
WEEK_BARS = 1440 * 7


def make_path(seed=0, n=200, part=None, p0=None, step=0.6, t0=0.0, dt=60.0,
              vol_scale=50_000.0):
    """Random-walk swap path that stays inside the partition's middle band."""
    if part is None:
        part = BucketPartition(0.0, 10.0, 650)
    rng = np.random.default_rng(seed)
    lo = part.lower + 0.15 * (part.upper - part.lower)
    hi = part.upper - 0.15 * (part.upper - part.lower)
    p = 0.5 * (lo + hi) if p0 is None else float(p0)
    prices = np.empty(n)
    for i in range(n):
        prices[i] = p
        p += part.width * rng.normal(0.0, step)
        if p < lo:
            p = lo + (lo - p)
        if p > hi:
            p = hi - (p - hi)
    volumes = rng.uniform(0.0, vol_scale, size=n)
    return PricePath(t0 + dt * np.arange(n), prices, volumes)


def make_bars(seed=0, n=WEEK_BARS + 200, t0=0.0, dt=60.0, base=2500.0):
    """Minute OHLCV bars with a geometric-walk close and consistent bodies."""
    rng = np.random.default_rng(seed)
    close = base * np.exp(np.cumsum(rng.normal(0.0, 1e-3, size=n)))
    opn = np.concatenate([[close[0]], close[:-1]])
    wick = rng.uniform(0.0, 1e-4, size=n)
    high = np.maximum(opn, close) * (1.0 + wick)
    low = np.minimum(opn, close) * (1.0 - wick)
    volume = rng.uniform(1.0, 100.0, size=n)
    return BarSeries(t0 + dt * np.arange(n), opn, high, low, close, volume)


def bars_covering(path, seed=0, base=2500.0):
    """Bar series whose history already spans a week before the path starts."""
    t0 = float(path.timestamps[0]) - WEEK_BARS * 60.0
    span = int((path.timestamps[-1] - path.timestamps[0]) // 60) + 2
    return make_bars(seed=seed, n=WEEK_BARS + span, t0=t0, base=base)
