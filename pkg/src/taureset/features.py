"""Technical features from minute OHLCV bars.

Each market pair contributes 15 numbers evaluated at the bar nearest an
epoch's opening timestamp, computed over the trailing one-week window:

     1  close            2  volume
     3  ema(12)          4  ema(26)        5  macd
     6  signal           7  histogram          (minute closes)
     8-12 the same five on an hourly aggregation
    13  std30            14 std60          15 std30 - std60  (volume)

Two pairs plus their element-wise ratios give the 45-dimension row per
epoch.
"""
from __future__ import annotations

import csv
import io

import numpy as np
from scipy.signal import lfilter

from .epochs import EpochSet
from .errors import (
    EmptySeries,
    InsufficientHistory,
    LookbackUnderflow,
    MalformedRecord,
)
from .marketdata import BarSeries, nearest_bar_index

LOOKBACK_BARS = 1440 * 7
VOLUME_FLOOR = 1e-8
RATIO_FLOOR = 1e-8
FEATURES_PER_PAIR = 15
FEATURE_DIM = 45


def ema(series: np.ndarray, period: int) -> np.ndarray:
    """Recursive exponential moving average, seeded at the first sample."""
    series = np.asarray(series, dtype=float)
    if len(series) == 0:
        raise EmptySeries("cannot average an empty series")
    if period < 1:
        raise EmptySeries(f"period must be >= 1, got {period}")
    alpha = 2.0 / (period + 1.0)
    # y[t] = alpha*x[t] + (1-alpha)*y[t-1] as an IIR filter, state = first value
    zi = np.array([(1.0 - alpha) * series[0]])
    out, _ = lfilter([alpha], [1.0, alpha - 1.0], series, zi=zi)
    return out


def macd_features(
    close: np.ndarray, fast: int = 12, slow: int = 26, signal: int = 9
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """(ema_fast, ema_slow, macd, signal_line, histogram) over the series."""
    close = np.asarray(close, dtype=float)
    if len(close) < slow:
        raise InsufficientHistory(
            f"need at least {slow} samples for the slow average, got {len(close)}"
        )
    ema_fast = ema(close, fast)
    ema_slow = ema(close, slow)
    macd = ema_fast - ema_slow
    signal_line = ema(macd, signal)
    return ema_fast, ema_slow, macd, signal_line, macd - signal_line


def volume_volatility(volume: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Trailing 30- and 60-bar population stds of volume, and their gap.

    Zero volumes are floored first so quiet markets stay well-defined.
    Entries before a window fills are NaN.
    """
    volume = np.asarray(volume, dtype=float)
    if len(volume) < 60:
        raise InsufficientHistory(f"need at least 60 bars, got {len(volume)}")
    vol = np.where(volume == 0.0, VOLUME_FLOOR, volume)

    def rolling_std(arr, w):
        out = np.full(len(arr), np.nan)
        windows = np.lib.stride_tricks.sliding_window_view(arr, w)
        out[w - 1 :] = windows.std(axis=1)
        return out

    std30 = rolling_std(vol, 30)
    std60 = rolling_std(vol, 60)
    return std30, std60, std30 - std60


def hourly_series(timestamps: np.ndarray, close: np.ndarray, volume: np.ndarray):
    """Aggregate minute data by clock hour: last close, summed volume."""
    hours = (np.asarray(timestamps, dtype=float) // 3600).astype(np.int64)
    # boundaries where a new hour starts; data is time-ordered
    new = np.flatnonzero(np.diff(hours)) + 1
    starts = np.concatenate([[0], new])
    ends = np.concatenate([new, [len(hours)]])
    h_close = close[ends - 1]
    h_vol = np.add.reduceat(np.asarray(volume, dtype=float), starts)
    return h_close, h_vol


def pair_features(bars: BarSeries, at_index: int) -> np.ndarray:
    """15 features at one bar, from the trailing one-week window ending there."""
    if at_index < LOOKBACK_BARS:
        raise LookbackUnderflow(
            f"bar {at_index} has only {at_index} bars of history, need {LOOKBACK_BARS}"
        )
    lo = at_index - LOOKBACK_BARS + 1
    ts = bars.timestamps[lo : at_index + 1]
    close = bars.close[lo : at_index + 1]
    vol = bars.volume[lo : at_index + 1]

    ef, es, macd, sig, hist = macd_features(close)
    h_close, h_vol = hourly_series(ts, close, vol)
    hef, hes, hmacd, hsig, hhist = macd_features(h_close)
    std30, std60, sdiff = volume_volatility(vol)

    return np.array([
        close[-1], vol[-1],
        ef[-1], es[-1], macd[-1], sig[-1], hist[-1],
        hef[-1], hes[-1], hmacd[-1], hsig[-1], hhist[-1],
        std30[-1], std60[-1], sdiff[-1],
    ])


def _guarded_ratio(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # floor the denominator's magnitude, keeping its sign (zero counts as +)
    sign = np.where(b < 0.0, -1.0, 1.0)
    return a / (sign * np.maximum(np.abs(b), RATIO_FLOOR))


def build_feature_matrix(
    epochs: EpochSet, bars_a: BarSeries, bars_b: BarSeries
) -> np.ndarray:
    """(K, 45) matrix: pair-A features, pair-B features, A/B ratios per epoch."""
    rows = []
    for ep in epochs:
        t_open = epochs.path.timestamps[ep.start]
        try:
            ia = nearest_bar_index(bars_a, t_open)
            ib = nearest_bar_index(bars_b, t_open)
            fa = pair_features(bars_a, ia)
            fb = pair_features(bars_b, ib)
        except LookbackUnderflow as exc:
            raise LookbackUnderflow(f"epoch {ep.index}: {exc}") from None
        rows.append(np.concatenate([fa, fb, _guarded_ratio(fa, fb)]))
    X = np.array(rows)
    if np.any(~np.isfinite(X)):
        raise LookbackUnderflow("feature matrix contains non-finite entries")
    return X


# --- persistence ------------------------------------------------------------

def save_features(X: np.ndarray, dest) -> None:
    X = np.asarray(X, dtype=float)
    own = not hasattr(dest, "write")
    fh = open(dest, "w", encoding="utf-8", newline="") if own else dest
    try:
        w = csv.writer(fh)
        w.writerow(["epoch_id"] + [f"f{j}" for j in range(1, X.shape[1] + 1)])
        for i, row in enumerate(X, start=1):
            w.writerow([i] + [repr(float(v)) for v in row])
    finally:
        if own:
            fh.close()


def load_features(source) -> np.ndarray:
    if hasattr(source, "read"):
        text = source.read()
    else:
        with open(source, "r", encoding="utf-8") as fh:
            text = fh.read()
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise MalformedRecord("empty feature file")
    head = [c.strip() for c in rows[0]]
    if head[:1] != ["epoch_id"]:
        raise MalformedRecord(f"unexpected feature header {head}")
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(head):
            raise MalformedRecord(f"line {lineno}: expected {len(head)} fields")
        try:
            out.append([float(v) for v in row[1:]])
        except ValueError as exc:
            raise MalformedRecord(f"line {lineno}: {exc}") from None
    return np.array(out)
