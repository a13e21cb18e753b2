"""Swap-history and OHLCV ingestion.

Swap files are delimited text with header ``timestamp,price,volume`` —
one record per swap, prices in numéraire per risky token, volumes in the
numéraire. Bar files carry ``timestamp,open,high,low,close,volume`` one-
minute records. A small subgraph client can pull swap histories over
GraphQL; it speaks the generic ``swaps(where: {pool, timestamp_gte,
timestamp_lt}, ...)`` shape with cursor pagination and retry/backoff.
"""
from __future__ import annotations

import csv
import io
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DataError,
    EmptyFile,
    EmptyRange,
    EmptySeries,
    LookbackUnderflow,
    MalformedRecord,
    NetworkError,
    PaginationGap,
    UnsortedInput,
    ValidationError,
)

SWAP_HEADER = ["timestamp", "price", "volume"]
BAR_HEADER = ["timestamp", "open", "high", "low", "close", "volume"]


@dataclass(frozen=True)
class PoolSpec:
    """Static pool parameters; volumes and prices are quoted in `numeraire`."""

    fee_tier: float
    tick_size: float
    token_a: str = "ETH"
    token_b: str = "USDC"
    numeraire: str = "USDC"

    def __post_init__(self):
        if not 0.0 < self.fee_tier < 1.0:
            raise ValidationError(f"fee_tier must lie in (0, 1), got {self.fee_tier}")
        if self.tick_size <= 0.0:
            raise ValidationError(f"tick_size must be positive, got {self.tick_size}")


@dataclass(frozen=True)
class SwapEvent:
    timestamp: float
    price_after: float
    volume: float


@dataclass(frozen=True)
class OhlcvBar:
    timestamp: float
    open: float
    high: float
    low: float
    close: float
    volume: float


@dataclass(frozen=True)
class PricePath:
    """Ordered swap history: index 0..H, strictly positive prices."""

    timestamps: np.ndarray
    prices: np.ndarray
    volumes: np.ndarray

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=float)
        px = np.asarray(self.prices, dtype=float)
        vol = np.asarray(self.volumes, dtype=float)
        if not (len(ts) == len(px) == len(vol)):
            raise ValidationError("timestamps, prices, volumes must be equally long")
        if len(ts) == 0:
            raise ValidationError("a price path holds at least one swap")
        if np.any(~np.isfinite(px)) or np.any(px <= 0.0):
            raise ValidationError("prices must be finite and positive")
        if np.any(~np.isfinite(vol)) or np.any(vol < 0.0):
            raise ValidationError("volumes must be finite and non-negative")
        if np.any(np.diff(ts) < 0):
            raise UnsortedInput("timestamps must be non-decreasing")
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "prices", px)
        object.__setattr__(self, "volumes", vol)

    def __len__(self) -> int:
        return len(self.prices)

    @property
    def H(self) -> int:
        return len(self.prices) - 1

    @property
    def events(self) -> list[SwapEvent]:
        return [
            SwapEvent(t, p, v)
            for t, p, v in zip(self.timestamps, self.prices, self.volumes)
        ]

    @staticmethod
    def from_events(events) -> "PricePath":
        ev = list(events)
        return PricePath(
            np.array([e.timestamp for e in ev], dtype=float),
            np.array([e.price_after for e in ev], dtype=float),
            np.array([e.volume for e in ev], dtype=float),
        )


@dataclass(frozen=True)
class BarSeries:
    """Column-wise OHLCV minute bars, sorted by timestamp."""

    timestamps: np.ndarray
    open: np.ndarray
    high: np.ndarray
    low: np.ndarray
    close: np.ndarray
    volume: np.ndarray

    def __post_init__(self):
        cols = [self.timestamps, self.open, self.high, self.low, self.close, self.volume]
        arrs = [np.asarray(c, dtype=float) for c in cols]
        n = len(arrs[0])
        if any(len(a) != n for a in arrs):
            raise ValidationError("bar columns must be equally long")
        if n == 0:
            raise EmptySeries("no bars")
        ts, o, h, lo, c, v = arrs
        if np.any(np.diff(ts) < 0):
            raise UnsortedInput("bar timestamps must be non-decreasing")
        body_lo = np.minimum(o, c)
        body_hi = np.maximum(o, c)
        if np.any(lo > body_lo) or np.any(body_hi > h):
            raise ValidationError("bars must satisfy low <= min(o,c) <= max(o,c) <= high")
        if np.any(v < 0):
            raise ValidationError("bar volume must be non-negative")
        for name, a in zip(("timestamps", "open", "high", "low", "close", "volume"), arrs):
            object.__setattr__(self, name, a)

    def __len__(self) -> int:
        return len(self.timestamps)

    def bar(self, i: int) -> OhlcvBar:
        return OhlcvBar(
            self.timestamps[i], self.open[i], self.high[i],
            self.low[i], self.close[i], self.volume[i],
        )


# --- file loading ---------------------------------------------------------

def _read_rows(source, header):
    if hasattr(source, "read"):
        text = source.read()
    else:
        with open(source, "r", encoding="utf-8") as fh:
            text = fh.read()
    if not text.strip():
        raise EmptyFile(f"{source}: empty input")
    reader = csv.reader(io.StringIO(text))
    rows = list(reader)
    head = [c.strip().lower() for c in rows[0]]
    if head != header:
        raise MalformedRecord(
            f"{source}: expected header {','.join(header)!r}, got {','.join(head)!r}"
        )
    if len(rows) == 1:
        raise EmptyFile(f"{source}: header only, no records")
    return rows[1:]


def load_swaps(source, spec: PoolSpec | None = None, *, auto_sort: bool = False) -> PricePath:
    """Read a swap file into a validated, timestamp-ordered `PricePath`.

    Rejects non-positive prices and negative volumes with the offending
    line number; out-of-order timestamps raise unless `auto_sort` is set,
    in which case a stable sort keeps equal-timestamp records in file order.
    """
    rows = _read_rows(source, SWAP_HEADER)
    ts, px, vol = [], [], []
    for lineno, row in enumerate(rows, start=2):
        if len(row) != 3:
            raise MalformedRecord(f"line {lineno}: expected 3 fields, got {len(row)}")
        try:
            t, p, v = float(row[0]), float(row[1]), float(row[2])
        except ValueError as exc:
            raise MalformedRecord(f"line {lineno}: {exc}") from None
        if not np.isfinite(p) or p <= 0.0:
            raise MalformedRecord(f"line {lineno}: price must be positive, got {row[1]}")
        if not np.isfinite(v) or v < 0.0:
            raise MalformedRecord(f"line {lineno}: volume must be non-negative, got {row[2]}")
        ts.append(t)
        px.append(p)
        vol.append(v)
    ts = np.array(ts)
    px = np.array(px)
    vol = np.array(vol)
    if np.any(np.diff(ts) < 0):
        if not auto_sort:
            raise UnsortedInput("swap records out of order (pass auto_sort to reorder)")
        order = np.argsort(ts, kind="stable")
        ts, px, vol = ts[order], px[order], vol[order]
    return PricePath(ts, px, vol)


def save_swaps(path: PricePath, dest) -> None:
    own = not hasattr(dest, "write")
    fh = open(dest, "w", encoding="utf-8", newline="") if own else dest
    try:
        w = csv.writer(fh)
        w.writerow(SWAP_HEADER)
        for t, p, v in zip(path.timestamps, path.prices, path.volumes):
            w.writerow([repr(float(t)), repr(float(p)), repr(float(v))])
    finally:
        if own:
            fh.close()


def load_bars(source) -> BarSeries:
    rows = _read_rows(source, BAR_HEADER)
    cols = [[] for _ in range(6)]
    for lineno, row in enumerate(rows, start=2):
        if len(row) != 6:
            raise MalformedRecord(f"line {lineno}: expected 6 fields, got {len(row)}")
        try:
            vals = [float(x) for x in row]
        except ValueError as exc:
            raise MalformedRecord(f"line {lineno}: {exc}") from None
        for c, v in zip(cols, vals):
            c.append(v)
    return BarSeries(*[np.array(c) for c in cols])


def nearest_bar(bars: BarSeries, t: float) -> OhlcvBar:
    """Bar with timestamp closest to `t`; ties go to the earlier bar."""
    return bars.bar(nearest_bar_index(bars, t))


def nearest_bar_index(bars: BarSeries, t: float) -> int:
    ts = bars.timestamps
    if len(ts) == 0:
        raise EmptySeries("no bars")
    if len(ts) > 1:
        interval = np.min(np.diff(ts)[np.diff(ts) > 0]) if np.any(np.diff(ts) > 0) else 60.0
    else:
        interval = 60.0
    if t < ts[0] - interval:
        raise LookbackUnderflow(f"t={t} predates the series start {ts[0]}")
    j = int(np.searchsorted(ts, t, side="left"))
    if j == 0:
        return 0
    if j == len(ts):
        return len(ts) - 1
    # tie (equal distance) resolves toward the earlier bar
    return j - 1 if t - ts[j - 1] <= ts[j] - t else j


# --- subgraph client -------------------------------------------------------

_SWAP_QUERY = """\
query ($pool: String!, $tsGte: Int!, $tsLt: Int!, $cursor: String!, $page: Int!) {
  swaps(
    where: {pool: $pool, timestamp_gte: $tsGte, timestamp_lt: $tsLt, id_gt: $cursor}
    orderBy: id
    orderDirection: asc
    first: $page
  ) {
    id
    timestamp
    sqrtPriceX96
    amount0
    amount1
    amountUSD
    price
  }
}
"""

AUTH_TOKEN_ENV = "SUBGRAPH_AUTH_TOKEN"


def _record_price(rec, decimals0: int, decimals1: int, invert: bool) -> float:
    if rec.get("price") not in (None, "", "0"):
        return float(rec["price"])
    sq = rec.get("sqrtPriceX96")
    if sq not in (None, "", "0"):
        raw = (int(sq) / 2**96) ** 2 * 10 ** (decimals0 - decimals1)
        return 1.0 / raw if invert else raw
    a0, a1 = float(rec.get("amount0", 0) or 0), float(rec.get("amount1", 0) or 0)
    if a0 == 0.0:
        raise MalformedRecord(f"swap {rec.get('id')}: cannot derive a price")
    ratio = abs(a1 / a0)
    return 1.0 / ratio if invert else ratio


def _record_volume(rec, price: float) -> float:
    usd = rec.get("amountUSD")
    if usd not in (None, ""):
        return abs(float(usd))
    a1 = rec.get("amount1")
    if a1 not in (None, ""):
        return abs(float(a1))
    return abs(float(rec.get("amount0", 0) or 0)) * price


def fetch_swaps_subgraph(
    endpoint: str,
    pool_id: str,
    t_start: int,
    t_end: int,
    *,
    page_size: int = 1000,
    session=None,
    max_retries: int = 5,
    backoff: float = 0.5,
    decimals0: int = 6,
    decimals1: int = 18,
    invert: bool = False,
    sleep=time.sleep,
) -> PricePath:
    """Paginated GraphQL fetch of all swaps with timestamp in [t_start, t_end).

    Pages are keyed by an id cursor so a re-fetch of the same range yields a
    byte-identical serialized path. Transient HTTP failures retry with
    exponential backoff before raising `NetworkError`; a page whose first id
    is not beyond the cursor raises `PaginationGap`. Auth token, when present
    in the environment, is sent as a bearer header.
    """
    if t_end <= t_start:
        raise EmptyRange(f"empty range [{t_start}, {t_end})")
    if session is None:
        import requests

        session = requests.Session()
    headers = {}
    token = os.environ.get(AUTH_TOKEN_ENV)
    if token:
        headers["Authorization"] = f"Bearer {token}"

    records = []
    cursor = ""
    while True:
        variables = {
            "pool": pool_id.lower(),
            "tsGte": int(t_start),
            "tsLt": int(t_end),
            "cursor": cursor,
            "page": int(page_size),
        }
        payload = {"query": _SWAP_QUERY, "variables": variables}
        page = _post_with_retry(session, endpoint, payload, headers, max_retries, backoff, sleep)
        if not page:
            break
        ids = [r["id"] for r in page]
        if cursor and min(ids) <= cursor:
            raise PaginationGap(f"page regressed past cursor {cursor!r}")
        if sorted(ids) != ids:
            raise PaginationGap("page not ordered by id")
        records.extend(page)
        cursor = ids[-1]
        if len(page) < page_size:
            break
    if not records:
        raise EmptyRange(f"no swaps in [{t_start}, {t_end})")

    records.sort(key=lambda r: (int(r["timestamp"]), r["id"]))
    ts = np.array([float(r["timestamp"]) for r in records])
    px = np.array([_record_price(r, decimals0, decimals1, invert) for r in records])
    vol = np.array([_record_volume(r, p) for r, p in zip(records, px)])
    return PricePath(ts, px, vol)


def _post_with_retry(session, endpoint, payload, headers, max_retries, backoff, sleep):
    last = None
    for attempt in range(max_retries):
        try:
            resp = session.post(endpoint, json=payload, headers=headers, timeout=30)
        except Exception as exc:  # connection-level failure
            last = exc
            sleep(backoff * 2**attempt)
            continue
        if resp.status_code >= 500:
            last = DataError(f"server error {resp.status_code}")
            sleep(backoff * 2**attempt)
            continue
        if resp.status_code != 200:
            raise NetworkError(f"query failed with status {resp.status_code}")
        body = resp.json()
        if "errors" in body:
            raise NetworkError(f"graphql errors: {body['errors']}")
        return body["data"]["swaps"]
    raise NetworkError(f"giving up after {max_retries} attempts: {last}")
