import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import capped_share_vector, lp_fee_scan
from taureset import (
    BucketPartition,
    CostModel,
    LiquidityProfile,
    LpAllocation,
    RewardApproach,
    StrategyShape,
    end_of_epoch_capital,
    expand_allocation,
    fee_base_profile,
    gas_cost,
    lp_fees,
    lp_profile,
    lp_shares,
    reduce_allocation,
    simulate_pool_fees,
)
from taureset.clmm import liquidity_from_capital, profile_reserves
from taureset.errors import SupportClipped, ValidationError, ZeroPoolLiquidity

ONE_BUCKET = BucketPartition(1.0, 3.0, 1)
GAMMA = 0.003


# --- allocation expansion -----------------------------------------------------

def test_expand_splits_pairs_evenly():
    alpha = expand_allocation(np.array([1 / 3, 2 / 3]), M=5, N=10, shape=StrategyShape(1))
    np.testing.assert_allclose(alpha[3:6], [1 / 3, 1 / 3, 1 / 3], rtol=1e-12)
    assert alpha.sum() == pytest.approx(1.0)
    assert np.count_nonzero(alpha) == 3


def test_expand_point_mass():
    alpha = expand_allocation(np.array([1.0, 0.0]), M=5, N=10, shape=StrategyShape(1))
    assert alpha[4] == 1.0
    assert np.count_nonzero(alpha) == 1


def test_expand_two_ring_example():
    alpha = expand_allocation(
        np.array([0.4, 0.4, 0.2]), M=3, N=5, shape=StrategyShape(2)
    )
    np.testing.assert_allclose(alpha, [0.1, 0.2, 0.4, 0.2, 0.1], rtol=1e-12)


def test_expand_leaves_guard_buckets_empty():
    shape = StrategyShape(1, eta_up=2, eta_down=2)
    alpha = expand_allocation(np.array([0.5, 0.5]), M=5, N=10, shape=shape)
    assert np.count_nonzero(alpha) == 3  # weights never reach the guard rings
    assert alpha[1] == 0.0 and alpha[7] == 0.0


def test_expand_validation():
    shape = StrategyShape(1)
    with pytest.raises(ValidationError):
        expand_allocation(np.array([1.0]), 5, 10, shape)
    with pytest.raises(ValidationError):
        expand_allocation(np.array([0.7, 0.2]), 5, 10, shape)  # sums to 0.9
    with pytest.raises(ValidationError):
        expand_allocation(np.array([1.2, -0.2]), 5, 10, shape)
    with pytest.raises(SupportClipped):
        expand_allocation(np.array([0.5, 0.5]), 1, 10, shape)
    with pytest.raises(SupportClipped):
        expand_allocation(np.array([0.5, 0.5]), 10, 10, StrategyShape(1, eta_up=1))


@given(st.integers(min_value=0, max_value=6), st.integers(min_value=0, max_value=1000))
@settings(deadline=None, max_examples=50)
def test_expand_reduce_round_trip(tau, seed):
    rng = np.random.default_rng(seed)
    rho = rng.dirichlet(np.ones(tau + 1))
    shape = StrategyShape(tau)
    alpha = expand_allocation(rho, M=20, N=40, shape=shape)
    assert alpha.sum() == pytest.approx(1.0, abs=1e-9)
    np.testing.assert_allclose(reduce_allocation(alpha, 20, shape), rho, rtol=1e-12)


def test_allocation_container():
    alloc = LpAllocation(1e6, 5, StrategyShape(1), np.array([0.5, 0.5]), 10)
    assert alloc.alpha[4] == 0.5
    with pytest.raises(ValidationError):
        LpAllocation(-1.0, 5, StrategyShape(1), np.array([0.5, 0.5]), 10)
    LpAllocation(0.0, 5, StrategyShape(1), np.array([1.0, 0.0]), 10)  # empty is fine


def test_lp_profile_buys_value_exactly():
    part = BucketPartition(0.0, 10.0, 650)
    alloc = LpAllocation(1e6, 250, StrategyShape(5), np.full(6, 1 / 6), 650)
    p_open = 2495.0
    prof = lp_profile(alloc, p_open, part)
    state = profile_reserves(prof, p_open)
    total = float(np.sum(state.y) + p_open * np.sum(state.x))
    assert total == pytest.approx(1e6, rel=1e-9)
    with pytest.raises(ValidationError):
        lp_profile(alloc, p_open, BucketPartition(0.0, 10.0, 651))


# --- fee shares ----------------------------------------------------------------

def _profiles(lp_scale=1.0, pool=None):
    part = BucketPartition(1.0, 1.0, 5)
    poolL = np.array([10.0, 20.0, 40.0, 20.0, 10.0]) if pool is None else pool
    lpL = lp_scale * poolL
    return LiquidityProfile(part, lpL), LiquidityProfile(part, poolL)


def test_share_of_historical_equal_profiles():
    lp, pool = _profiles()
    np.testing.assert_array_equal(
        lp_shares(lp, pool, RewardApproach.SHARE_OF_HISTORICAL), np.ones(5)
    )


def test_share_of_historical_caps_at_full_capture():
    lp, pool = _profiles(lp_scale=2.0)
    np.testing.assert_array_equal(
        lp_shares(lp, pool, RewardApproach.SHARE_OF_HISTORICAL), np.ones(5)
    )


def test_share_of_historical_rejects_empty_pool_bucket():
    part = BucketPartition(1.0, 1.0, 3)
    lp = LiquidityProfile(part, np.array([1.0, 1.0, 0.0]))
    pool = LiquidityProfile(part, np.array([2.0, 0.0, 5.0]))
    with pytest.raises(ZeroPoolLiquidity, match=r"\[2\]"):
        lp_shares(lp, pool, RewardApproach.SHARE_OF_HISTORICAL)
    # an empty pool bucket the LP also skips is harmless
    lp2 = LiquidityProfile(part, np.array([1.0, 0.0, 0.0]))
    shares = lp_shares(lp2, pool, RewardApproach.SHARE_OF_HISTORICAL)
    np.testing.assert_array_equal(shares, [0.5, 0.0, 0.0])


def test_augmented_shares_dilute():
    lp, pool = _profiles()
    np.testing.assert_allclose(
        lp_shares(lp, pool, RewardApproach.AUGMENTED), np.full(5, 0.5), rtol=1e-12
    )
    quarter, _ = _profiles(lp_scale=1 / 3)
    np.testing.assert_allclose(
        lp_shares(quarter, pool, RewardApproach.AUGMENTED), np.full(5, 0.25), rtol=1e-12
    )


def test_isolated_and_pool_level_shares():
    part = BucketPartition(1.0, 1.0, 3)
    lp = LiquidityProfile(part, np.array([1.0, 0.0, 2.0]))
    pool = LiquidityProfile(part, np.array([5.0, 5.0, 5.0]))
    np.testing.assert_array_equal(
        lp_shares(lp, pool, RewardApproach.ISOLATED_LP), [1.0, 0.0, 1.0]
    )
    np.testing.assert_array_equal(
        lp_shares(lp, pool, RewardApproach.POOL_LEVEL), [1.0, 1.0, 1.0]
    )


@given(st.integers(min_value=0, max_value=500))
@settings(deadline=None, max_examples=50)
def test_capped_shares_match_elementwise_oracle(seed):
    part = BucketPartition(1.0, 1.0, 8)
    rng = np.random.default_rng(seed)
    poolL = rng.uniform(0.1, 10.0, 8)
    lpL = rng.uniform(0.0, 15.0, 8)
    shares = lp_shares(
        LiquidityProfile(part, lpL), LiquidityProfile(part, poolL),
        RewardApproach.SHARE_OF_HISTORICAL,
    )
    np.testing.assert_allclose(shares, capped_share_vector(lpL, poolL), rtol=1e-12)
    assert np.all(shares <= 1.0)


def test_fee_base_profile_selection():
    lp, pool = _profiles(lp_scale=0.5)
    assert fee_base_profile(lp, pool, RewardApproach.POOL_LEVEL) is pool
    assert fee_base_profile(lp, pool, RewardApproach.SHARE_OF_HISTORICAL) is pool
    assert fee_base_profile(lp, pool, RewardApproach.ISOLATED_LP) is lp
    stacked = fee_base_profile(lp, pool, RewardApproach.AUGMENTED)
    np.testing.assert_allclose(stacked.L, pool.L * 1.5, rtol=1e-12)


# --- fee income ------------------------------------------------------------------

def test_lp_fees_zero_share():
    pool = LiquidityProfile(ONE_BUCKET, np.array([100.0]))
    f = lp_fees(np.zeros(1), pool, np.array([2.25, 4.0]), GAMMA)
    assert (f.inflow_x, f.inflow_y, f.fee) == (0.0, 0.0, 0.0)


def test_lp_fees_full_share_equals_pool_fee():
    pool = LiquidityProfile(ONE_BUCKET, np.array([100.0]))
    prices = np.array([2.25, 4.0, 1.5, 2.0])
    mine = lp_fees(np.ones(1), pool, prices, GAMMA)
    pools = simulate_pool_fees(pool, prices, GAMMA)
    assert mine.fee == pytest.approx(pools.fee, rel=1e-12)


def test_lp_fees_half_share_single_bucket():
    pool = LiquidityProfile(ONE_BUCKET, np.array([100.0]))
    f = lp_fees(np.array([0.5]), pool, np.array([2.25, 4.0]), GAMMA)
    assert f.fee == pytest.approx(0.075, rel=1e-12)


def test_lp_fees_match_share_weighted_scan():
    part = BucketPartition(1.0, 1.0, 6)
    rng = np.random.default_rng(9)
    L = rng.uniform(0.0, 200.0, 6)
    shares = rng.uniform(0.0, 1.0, 6)
    prices = rng.uniform(1.2, 6.8, 30)
    mine = lp_fees(shares, LiquidityProfile(part, L), prices, GAMMA)
    sx, sy, fee = lp_fee_scan(part.edges, shares, L, prices, GAMMA)
    assert mine.fee == pytest.approx(fee, rel=1e-9, abs=1e-15)
    assert mine.inflow_x == pytest.approx(sx, rel=1e-9, abs=1e-15)
    assert mine.inflow_y == pytest.approx(sy, rel=1e-9, abs=1e-15)


def test_lp_fees_monotone_in_shares():
    part = BucketPartition(1.0, 1.0, 6)
    rng = np.random.default_rng(10)
    L = rng.uniform(0.0, 200.0, 6)
    prices = rng.uniform(1.2, 6.8, 30)
    lo = rng.uniform(0.0, 0.5, 6)
    hi = np.minimum(lo + rng.uniform(0.0, 0.5, 6), 1.0)
    pool = LiquidityProfile(part, L)
    assert lp_fees(hi, pool, prices, GAMMA).fee >= lp_fees(lo, pool, prices, GAMMA).fee


def test_lp_fees_validation():
    pool = LiquidityProfile(ONE_BUCKET, np.array([100.0]))
    with pytest.raises(ValidationError):
        lp_fees(np.array([0.5, 0.5]), pool, np.array([2.25, 4.0]), GAMMA)
    with pytest.raises(ValidationError):
        lp_fees(np.array([1.5]), pool, np.array([2.25, 4.0]), GAMMA)
    with pytest.raises(ValidationError):
        lp_fees(np.array([-0.1]), pool, np.array([2.25, 4.0]), GAMMA)


def test_capped_fee_never_beats_the_pool():
    # approach-3 fee income is bounded by what the pool historically earned
    part = BucketPartition(1.0, 1.0, 8)
    rng = np.random.default_rng(12)
    for _ in range(25):
        poolL = rng.uniform(0.1, 10.0, 8)
        lpL = rng.uniform(0.0, 25.0, 8)
        prices = rng.uniform(1.2, 8.8, 20)
        pool = LiquidityProfile(part, poolL)
        shares = lp_shares(LiquidityProfile(part, lpL), pool, RewardApproach.SHARE_OF_HISTORICAL)
        assert lp_fees(shares, pool, prices, GAMMA).fee <= (
            simulate_pool_fees(pool, prices, GAMMA).fee + 1e-12
        )


# --- epoch-end value -------------------------------------------------------------

def test_position_value_survives_a_flat_epoch():
    part = BucketPartition(0.0, 10.0, 650)
    alloc = LpAllocation(1e6, 250, StrategyShape(5), np.full(6, 1 / 6), 650)
    p = 2495.0
    prof = lp_profile(alloc, p, part)
    W_end = end_of_epoch_capital(np.ones(650), prof, p, 0.0)
    assert W_end == pytest.approx(1e6, rel=1e-9)


def test_position_value_below_band_is_all_risky():
    # 100 units at 2.25 in [1,4]; close at 1 leaves x = L/2 worth 400/7
    prof = LiquidityProfile(ONE_BUCKET, np.array([liquidity_from_capital(100.0, 2.25, 1.0, 4.0)[2]]))
    W_end = end_of_epoch_capital(np.ones(1), prof, 1.0, 0.0)
    assert W_end == pytest.approx(400.0 / 7.0, rel=1e-9)


def test_position_value_scales_with_share():
    prof = LiquidityProfile(ONE_BUCKET, np.array([100.0]))
    full = end_of_epoch_capital(np.ones(1), prof, 3.0, 0.0)
    half = end_of_epoch_capital(np.array([0.5]), prof, 3.0, 0.0)
    assert half == pytest.approx(0.5 * full, rel=1e-12)


def test_fees_enter_epoch_end_capital_additively():
    prof = LiquidityProfile(ONE_BUCKET, np.array([100.0]))
    base = end_of_epoch_capital(np.ones(1), prof, 3.0, 0.0)
    assert end_of_epoch_capital(np.ones(1), prof, 3.0, 7.5) == base + 7.5


@given(st.floats(min_value=0.3, max_value=12.0), st.integers(min_value=0, max_value=200))
@settings(deadline=None, max_examples=60)
def test_divergence_loss_is_never_a_gain(p_close, seed):
    # principal at the close never beats holding the entry mix
    rng = np.random.default_rng(seed)
    W, p_open = 100.0, rng.uniform(1.1, 3.9)
    x0, y0, L = liquidity_from_capital(W, p_open, 1.0, 4.0)
    prof = LiquidityProfile(ONE_BUCKET, np.array([L]))
    principal = end_of_epoch_capital(np.ones(1), prof, p_close, 0.0)
    hold = y0 + p_close * x0
    assert principal <= hold + 1e-9 * hold


# --- gas -------------------------------------------------------------------------

def test_gas_free_when_nothing_moves():
    part = BucketPartition(0.0, 10.0, 650)
    prof = LiquidityProfile(part, np.arange(650, dtype=float))
    assert gas_cost(prof, prof, CostModel(), 2500.0) == 0.0
    assert gas_cost(None, None, CostModel(), 2500.0) == 0.0


def test_gas_eleven_bucket_mint():
    part = BucketPartition(0.0, 10.0, 650)
    L = np.zeros(650)
    L[244:255] = 123.0
    cost = gas_cost(None, LiquidityProfile(part, L), CostModel(), 2500.0)
    assert cost == pytest.approx(236.5, rel=1e-12)


def test_gas_disjoint_move_pays_both_ways():
    part = BucketPartition(0.0, 10.0, 650)
    a, b = np.zeros(650), np.zeros(650)
    a[10:13] = 5.0
    b[100:103] = 7.0
    cost = gas_cost(LiquidityProfile(part, a), LiquidityProfile(part, b), CostModel(), 2500.0)
    model = CostModel()
    assert cost == pytest.approx(3 * (model.mint_eth + model.burn_eth) * 2500.0, rel=1e-12)


def test_gas_ignores_sub_tolerance_noise():
    part = BucketPartition(0.0, 10.0, 2)
    a = LiquidityProfile(part, np.array([1e6, 1e6]))
    b = LiquidityProfile(part, np.array([1e6 * (1 + 1e-12), 1e6]))
    assert gas_cost(a, b, CostModel(), 2500.0) == 0.0
    c = LiquidityProfile(part, np.array([1e6 * (1 + 1e-6), 1e6]))
    assert gas_cost(a, c, CostModel(), 2500.0) > 0.0


def test_gas_burn_everything():
    part = BucketPartition(0.0, 10.0, 650)
    L = np.zeros(650)
    L[5:8] = 9.0
    cost = gas_cost(LiquidityProfile(part, L), None, CostModel(), 2000.0)
    assert cost == pytest.approx(3 * CostModel().burn_eth * 2000.0, rel=1e-12)


def test_gas_partition_mismatch():
    a = LiquidityProfile(BucketPartition(0.0, 10.0, 2), np.ones(2))
    b = LiquidityProfile(BucketPartition(0.0, 5.0, 2), np.ones(2))
    with pytest.raises(ValidationError):
        gas_cost(a, b, CostModel(), 2500.0)


def test_cost_model_validation():
    assert CostModel().mint_eth == pytest.approx(0.0086)
    assert CostModel().burn_eth == pytest.approx(0.0043)
    with pytest.raises(ValidationError):
        CostModel(gas_mint=-1.0)
