import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import bucket_scan, clamped_reserves, pool_fee_scan
from taureset import (
    BucketPartition,
    LiquidityProfile,
    bucket_of,
    delta_inflows,
    delta_reserves,
    liquidity_from_capital,
    liquidity_state,
    path_inflows,
    profile_reserves,
    unit_liquidity,
)
from taureset.errors import DegenerateBucket, OutOfPartition, ValidationError

DEFAULT = BucketPartition(0.0, 10.0, 650)

bands = st.tuples(
    st.floats(min_value=0.0, max_value=50.0),
    st.floats(min_value=0.1, max_value=20.0),
).map(lambda t: (t[0], t[0] + t[1]))
prices = st.floats(min_value=0.01, max_value=100.0)
liquidities = st.floats(min_value=1e-3, max_value=1e6)


# --- bucket indexing --------------------------------------------------------

def test_bucket_of_examples():
    assert bucket_of(5.0, DEFAULT) == 1
    assert bucket_of(10.0, DEFAULT) == 2      # boundary resolves upward
    assert bucket_of(6495.0, DEFAULT) == 650
    assert bucket_of(6500.0, DEFAULT) == 650  # top edge closes the last bucket
    assert bucket_of(0.0, DEFAULT) == 1


def test_bucket_of_rejects_outside():
    with pytest.raises(OutOfPartition):
        bucket_of(-1.0, DEFAULT)
    with pytest.raises(OutOfPartition):
        bucket_of(6500.1, DEFAULT)
    with pytest.raises(OutOfPartition):
        bucket_of(float("nan"), DEFAULT)


@given(st.floats(min_value=0.0, max_value=6500.0))
@settings(deadline=None)
def test_bucket_of_matches_linear_scan(p):
    assert bucket_of(p, DEFAULT) == bucket_scan(p, 0.0, 10.0, 650)


def test_bucket_of_survives_float_noise():
    part = BucketPartition(0.0, 0.1, 1000)
    for k in range(1, 1000):
        edge = k * 0.1  # inexact in binary; must still resolve upward
        assert bucket_of(edge, part) == bucket_of(edge + 1e-12, part)


def test_partition_validation():
    with pytest.raises(DegenerateBucket):
        BucketPartition(0.0, 0.0, 10)
    with pytest.raises(ValidationError):
        BucketPartition(0.0, 1.0, 0)
    with pytest.raises(ValidationError):
        BucketPartition(-1.0, 1.0, 10)
    with pytest.raises(OutOfPartition):
        DEFAULT.band(0)
    with pytest.raises(OutOfPartition):
        DEFAULT.band(651)


# --- capital -> (x, y, L) ---------------------------------------------------

def test_capital_split_above_band():
    x, y, L = liquidity_from_capital(100.0, 4.0, 1.0, 4.0)
    assert (x, y) == (0.0, 100.0)
    assert L == pytest.approx(100.0, rel=1e-12)


def test_capital_split_below_band():
    x, y, L = liquidity_from_capital(50.0, 1.0, 1.0, 4.0)
    assert y == 0.0
    assert x == pytest.approx(50.0, rel=1e-12)
    assert L == pytest.approx(100.0, rel=1e-12)


def test_capital_split_inside_band():
    x, y, L = liquidity_from_capital(100.0, 2.25, 1.0, 4.0)
    assert x == pytest.approx(200.0 / 10.5, rel=1e-12)
    assert y == pytest.approx(600.0 / 10.5, rel=1e-12)
    assert L == pytest.approx(1200.0 / 10.5, rel=1e-12)


def test_capital_split_validation():
    with pytest.raises(ValidationError):
        liquidity_from_capital(1.0, 1.0, 4.0, 4.0)   # empty band
    with pytest.raises(ValidationError):
        liquidity_from_capital(1.0, 0.0, 1.0, 4.0)   # non-positive price
    with pytest.raises(ValidationError):
        liquidity_from_capital(-1.0, 2.0, 1.0, 4.0)  # negative capital


@given(st.floats(min_value=0.0, max_value=1e6), prices, bands)
@settings(deadline=None)
def test_value_identity(W, p, band):
    p_a, p_b = band
    x, y, _ = liquidity_from_capital(W, p, p_a, p_b)
    assert y + p * x == pytest.approx(W, rel=1e-9, abs=1e-12)


@given(liquidities, prices, bands)
@settings(deadline=None)
def test_reserve_invariant(L, p, band):
    p_a, p_b = band
    x, y = liquidity_state(L, p, p_a, p_b)
    lhs = (x + L / np.sqrt(p_b)) * (y + L * np.sqrt(p_a))
    assert lhs == pytest.approx(L * L, rel=1e-9)


# --- liquidity -> reserves --------------------------------------------------

def test_liquidity_state_examples():
    assert liquidity_state(100.0, 1.0, 1.0, 4.0) == pytest.approx((50.0, 0.0))
    assert liquidity_state(100.0, 0.5, 1.0, 4.0) == pytest.approx((50.0, 0.0))
    assert liquidity_state(100.0, 4.0, 1.0, 4.0) == pytest.approx((0.0, 100.0))
    assert liquidity_state(100.0, 9.0, 1.0, 4.0) == pytest.approx((0.0, 100.0))
    x, y = liquidity_state(100.0, 2.25, 1.0, 4.0)
    assert x == pytest.approx(100.0 / 6.0, rel=1e-12)
    assert y == pytest.approx(50.0, rel=1e-12)


@given(liquidities, bands)
@settings(deadline=None)
def test_liquidity_state_edge_continuity(L, band):
    p_a, p_b = band
    delta = 1e-13
    for edge in (max(p_a, 1e-6), p_b):
        lo = liquidity_state(L, edge * (1.0 - delta), p_a, p_b)
        hi = liquidity_state(L, edge * (1.0 + delta), p_a, p_b)
        value_lo = lo[1] + edge * lo[0]
        value_hi = hi[1] + edge * hi[0]
        tol = 1e-9 * L * max(1.0, np.sqrt(p_b))
        assert abs(value_hi - value_lo) <= tol


@given(liquidities, prices, bands, st.floats(min_value=0.01, max_value=100.0))
@settings(deadline=None)
def test_liquidity_state_homogeneity(L, p, band, c):
    p_a, p_b = band
    x1, y1 = liquidity_state(L, p, p_a, p_b)
    xc, yc = liquidity_state(c * L, p, p_a, p_b)
    assert xc == pytest.approx(c * x1, rel=1e-9, abs=1e-15)
    assert yc == pytest.approx(c * y1, rel=1e-9, abs=1e-15)


def test_delta_reserves_examples():
    dx, dy = delta_reserves(100.0, 2.25, 4.0, 1.0, 4.0)
    assert dx == pytest.approx(-100.0 / 6.0, rel=1e-12)
    assert dy == pytest.approx(50.0, rel=1e-12)
    dx, dy = delta_reserves(100.0, 2.25, 1.0, 1.0, 4.0)
    assert dx == pytest.approx(100.0 / 3.0, rel=1e-12)
    assert dy == pytest.approx(-50.0, rel=1e-12)


@given(liquidities, prices, prices, bands)
@settings(deadline=None)
def test_delta_reserves_round_trip_is_exact_zero(L, p1, p2, band):
    p_a, p_b = band
    fwd = delta_reserves(L, p1, p2, p_a, p_b)
    back = delta_reserves(L, p2, p1, p_a, p_b)
    assert fwd[0] + back[0] == 0.0
    assert fwd[1] + back[1] == 0.0


@given(liquidities, prices, prices, prices, bands)
@settings(deadline=None)
def test_delta_reserves_path_independence(L, p1, p2, p3, band):
    p_a, p_b = band
    direct = delta_reserves(L, p1, p3, p_a, p_b)
    via = delta_reserves(L, p1, p2, p_a, p_b)
    leg2 = delta_reserves(L, p2, p3, p_a, p_b)
    scale = L * (1.0 + 1.0 / np.sqrt(max(p_a, 1e-6)))
    assert direct[0] == pytest.approx(via[0] + leg2[0], abs=1e-9 * scale)
    assert direct[1] == pytest.approx(via[1] + leg2[1], abs=1e-9 * scale)


# --- vectorized forms vs the scalar closed forms ------------------------------

def test_unit_liquidity_matches_scalar_closed_form():
    part = BucketPartition(0.0, 2.5, 12)
    for p in (0.7, 2.5, 3.1, 12.0, 29.9, 30.0):
        unit = unit_liquidity(p, part)
        for n in range(1, part.count + 1):
            p_a, p_b = part.band(n)
            if p <= p_a and p_a == 0.0:
                expected = 0.0  # zero-edge band above the price has no density
            else:
                expected = liquidity_from_capital(1.0, p, p_a, p_b)[2]
            assert unit[n - 1] == pytest.approx(expected, rel=1e-12, abs=1e-15)


def test_profile_reserves_matches_scalar_loop():
    part = BucketPartition(1.0, 1.5, 8)
    rng = np.random.default_rng(3)
    L = rng.uniform(0.0, 500.0, part.count)
    prof = LiquidityProfile(part, L)
    for p in (1.0, 2.2, 7.3, 13.0):
        state = profile_reserves(prof, p)
        for n in range(part.count):
            x, y = clamped_reserves(L[n], p, *part.band(n + 1))
            assert state.x[n] == pytest.approx(x, rel=1e-12, abs=1e-15)
            assert state.y[n] == pytest.approx(y, rel=1e-12, abs=1e-15)
        assert state.value(p) == pytest.approx(
            sum(state.y) + p * sum(state.x), rel=1e-12
        )


def test_path_inflows_matches_stepwise_sum():
    part = BucketPartition(0.5, 2.0, 6)
    rng = np.random.default_rng(7)
    path = rng.uniform(0.6, 12.0, size=30)
    ax, ay = path_inflows(part, path)
    ax_ref = np.zeros(part.count)
    ay_ref = np.zeros(part.count)
    for q in range(1, len(path)):
        dx, dy = delta_inflows(part, path[q - 1], path[q])
        ax_ref += dx
        ay_ref += dy
    np.testing.assert_allclose(ax, ax_ref, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(ay, ay_ref, rtol=1e-12, atol=1e-15)


def test_inflows_agree_with_reserve_scan():
    # per-unit inflows scaled by a profile must equal the brute-force scan
    part = BucketPartition(1.0, 1.0, 5)
    rng = np.random.default_rng(11)
    L = rng.uniform(0.0, 100.0, part.count)
    path = rng.uniform(1.1, 5.9, size=20)
    ax, ay = path_inflows(part, path)
    sx, sy, _ = pool_fee_scan(part.edges, L, path, 1.0)
    assert float(L @ ax) == pytest.approx(sx, rel=1e-9, abs=1e-12)
    assert float(L @ ay) == pytest.approx(sy, rel=1e-9, abs=1e-12)


# --- profile container --------------------------------------------------------

def test_profile_validation():
    part = BucketPartition(0.0, 1.0, 4)
    with pytest.raises(ValidationError):
        LiquidityProfile(part, np.ones(3))
    with pytest.raises(ValidationError):
        LiquidityProfile(part, np.array([1.0, -1.0, 0.0, 2.0]))
    with pytest.raises(ValidationError):
        LiquidityProfile(part, np.array([1.0, np.nan, 0.0, 2.0]))


def test_profile_addition():
    part = BucketPartition(0.0, 1.0, 3)
    a = LiquidityProfile(part, np.array([1.0, 2.0, 3.0]))
    b = LiquidityProfile(part, np.array([0.5, 0.0, 1.0]))
    np.testing.assert_array_equal((a + b).L, [1.5, 2.0, 4.0])
    other = BucketPartition(0.0, 2.0, 3)
    with pytest.raises(ValidationError):
        a + LiquidityProfile(other, np.zeros(3))
