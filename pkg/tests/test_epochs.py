import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_path
from taureset import (
    BucketPartition,
    PricePath,
    StrategyShape,
    bucket_of,
    epoch_prices,
    epoch_volume,
    liquid_support,
    partition_epochs,
)
from taureset.errors import SupportClipped, ValidationError

DEFAULT = BucketPartition(0.0, 10.0, 650)


def _path(prices, volumes=None):
    prices = np.asarray(prices, dtype=float)
    if volumes is None:
        volumes = np.ones_like(prices)
    return PricePath(np.arange(len(prices), dtype=float) * 60.0, prices, volumes)


# --- shape and support ------------------------------------------------------

def test_shape_validation():
    assert StrategyShape(0).coverage_halfwidths == (0, 0)
    assert StrategyShape(5, eta_up=2, eta_down=20).coverage_halfwidths == (25, 7)
    with pytest.raises(ValidationError):
        StrategyShape(-1)
    with pytest.raises(ValidationError):
        StrategyShape(1, eta_up=-1)


def test_support_single_bucket():
    s = liquid_support(100, StrategyShape(0), DEFAULT)
    assert (s.lo, s.hi) == (100, 100)
    assert s.width == 1
    np.testing.assert_array_equal(s.buckets, [100])


def test_support_with_downside_guard():
    s = liquid_support(100, StrategyShape(5, eta_down=20), DEFAULT)
    assert (s.lo, s.hi) == (75, 105)
    assert (s.active_lo, s.active_hi) == (95, 105)
    assert s.width == 31
    assert s.contains(75) and s.contains(105) and not s.contains(106)
    # guard buckets extend the window but sit below the weighted band
    assert all(n < s.active_lo for n in range(s.lo, 95))


def test_support_symmetric_guards():
    s = liquid_support(5, StrategyShape(1, eta_up=1, eta_down=1), BucketPartition(0.0, 1.0, 10))
    assert (s.lo, s.hi) == (3, 7)
    assert (s.active_lo, s.active_hi) == (4, 6)


def test_support_never_truncates_silently():
    with pytest.raises(SupportClipped):
        liquid_support(3, StrategyShape(5), DEFAULT)
    with pytest.raises(SupportClipped):
        liquid_support(648, StrategyShape(5), DEFAULT)
    with pytest.raises(SupportClipped):
        liquid_support(100, StrategyShape(5, eta_down=95), DEFAULT)
    liquid_support(6, StrategyShape(5), DEFAULT)  # flush against the edge is fine


# --- segmentation -----------------------------------------------------------

def test_two_epoch_worked_example():
    part = BucketPartition(0.0, 1.0, 10)
    path = _path([1.5, 2.5, 3.5, 4.6])
    eps = partition_epochs(path, part, StrategyShape(1))
    assert eps.K == 2
    first, second = eps[0], eps[1]
    assert (first.start, first.end, first.center) == (0, 2, 2)
    assert (second.start, second.end, second.center) == (2, 3, 4)
    assert first.end == second.start  # the trigger swap is shared
    assert not first.degenerate and not second.degenerate
    np.testing.assert_array_equal(epoch_prices(path, first), [1.5, 2.5, 3.5])
    np.testing.assert_array_equal(epoch_prices(path, second), [3.5, 4.6])


def test_single_epoch_when_price_stays_inside():
    part = BucketPartition(0.0, 1.0, 10)
    path = _path([2.5, 2.9, 3.4, 2.1, 2.5])
    eps = partition_epochs(path, part, StrategyShape(1))
    assert eps.K == 1
    assert (eps[0].start, eps[0].end) == (0, 4)
    assert eps[0].q == 5


def test_degenerate_final_epoch():
    part = BucketPartition(0.0, 1.0, 10)
    path = _path([2.5, 2.6, 5.5], volumes=[3.0, 4.0, 9.0])
    eps = partition_epochs(path, part, StrategyShape(1))
    assert eps.K == 2
    last = eps[1]
    assert last.degenerate
    assert (last.start, last.end, last.center) == (2, 2, 6)
    assert last.q == 2  # duplicated price keeps downstream algebra defined
    np.testing.assert_array_equal(epoch_prices(path, last), [5.5, 5.5])
    assert epoch_volume(path, last) == 0.0
    assert epoch_volume(path, eps[0]) == 13.0  # boundary volume closes the old epoch


def test_guard_buckets_delay_resets():
    part = BucketPartition(0.0, 1.0, 20)
    path = _path([5.5, 7.5, 5.5, 7.5, 9.5])
    tight = partition_epochs(path, part, StrategyShape(1))
    guarded = partition_epochs(path, part, StrategyShape(1, eta_up=2, eta_down=2))
    assert tight.K > guarded.K
    assert guarded.K == 2  # only the final jump to 9.5 escapes [2, 9]


def test_clipped_positions_fail_loudly():
    part = BucketPartition(0.0, 1.0, 10)
    with pytest.raises(SupportClipped):
        partition_epochs(_path([0.5, 0.6]), part, StrategyShape(1))
    with pytest.raises(SupportClipped):
        # the reset itself would open a position hanging off the partition
        partition_epochs(_path([5.0, 9.9]), part, StrategyShape(1))


def test_epochs_tile_the_path():
    path = make_path(seed=1, n=400)
    eps = partition_epochs(path, DEFAULT, StrategyShape(3, eta_up=1, eta_down=2))
    assert eps[0].start == 0
    assert eps[eps.K - 1].end == len(path) - 1
    for k in range(1, eps.K):
        assert eps[k].start == eps[k - 1].end
    for ep in eps:
        assert ep.center == bucket_of(path.prices[ep.start], DEFAULT)
        assert ep.index == list(eps).index(ep) + 1


def test_interior_swaps_stay_in_coverage():
    path = make_path(seed=2, n=500, step=1.2)
    shape = StrategyShape(2, eta_down=1)
    eps = partition_epochs(path, DEFAULT, shape)
    down, up = shape.coverage_halfwidths
    for ep in eps:
        inside = [bucket_of(p, DEFAULT) for p in path.prices[ep.start : ep.end]]
        assert all(ep.center - down <= b <= ep.center + up for b in inside)
        if ep.index < eps.K:
            trigger = bucket_of(path.prices[ep.end], DEFAULT)
            assert trigger < ep.center - down or trigger > ep.center + up


def test_epoch_volume_conserves_total():
    path = make_path(seed=3, n=300)
    eps = partition_epochs(path, DEFAULT, StrategyShape(1))
    total = float(path.volumes[0]) + sum(epoch_volume(path, ep) for ep in eps)
    assert total == pytest.approx(float(np.sum(path.volumes)), rel=1e-12)


@given(st.integers(min_value=0, max_value=500))
@settings(deadline=None, max_examples=25)
def test_reset_count_shrinks_with_wider_bands(seed):
    path = make_path(seed=seed, n=250, step=1.5)
    ks_tau = [
        partition_epochs(path, DEFAULT, StrategyShape(tau)).K for tau in range(6)
    ]
    assert all(a >= b for a, b in zip(ks_tau, ks_tau[1:]))
    ks_eta = [
        partition_epochs(path, DEFAULT, StrategyShape(2, eta_up=e, eta_down=e)).K
        for e in range(4)
    ]
    assert all(a >= b for a, b in zip(ks_eta, ks_eta[1:]))
