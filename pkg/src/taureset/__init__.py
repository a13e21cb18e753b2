"""Historical CLMM pool-state reconstruction and τ-reset LP strategy lab.

Reconstructs per-epoch liquidity profiles from swap history, searches
allocation strategies against the reconstructed fee flow, trains a
predictor from technical features to allocations, and replays the result
out-of-training with fee, divergence-loss, and gas accounting.
"""
from .backtest import (
    BacktestConfig,
    BacktestResult,
    CapitalMode,
    EpochLedgerEntry,
    Metrics,
    PerformanceReport,
    buy_and_hold,
    compare_strategies,
    compute_metrics,
    config_from_dict,
    emit_comparison,
    emit_reports,
    load_config,
    run_oot_backtest,
    run_training_pipeline,
    sweep_tau,
)
from .calibrate import (
    CalibrationConfig,
    CalibrationResult,
    FeeTotals,
    GaussianParams,
    WindowCalibration,
    anchor_and_scale,
    calibrate_epoch,
    calibrate_subepochs,
    gaussian_weights,
    profile_from_params,
    segment_subepochs,
    simulate_pool_fees,
)
from .clmm import (
    BucketPartition,
    LiquidityProfile,
    ReserveState,
    bucket_of,
    delta_inflows,
    delta_reserves,
    liquidity_from_capital,
    liquidity_state,
    path_inflows,
    profile_reserves,
    unit_liquidity,
)
from .epochs import (
    Epoch,
    EpochSet,
    StrategyShape,
    SupportRange,
    epoch_prices,
    epoch_volume,
    liquid_support,
    partition_epochs,
)
from .errors import (
    CapitalDepleted,
    DataError,
    NumericalError,
    PipelineError,
    ValidationError,
)
from .features import (
    build_feature_matrix,
    ema,
    load_features,
    macd_features,
    pair_features,
    save_features,
    volume_volatility,
)
from .lp import (
    CostModel,
    LpAllocation,
    RewardApproach,
    end_of_epoch_capital,
    expand_allocation,
    fee_base_profile,
    gas_cost,
    lp_fees,
    lp_profile,
    lp_shares,
    reduce_allocation,
)
from .marketdata import (
    BarSeries,
    OhlcvBar,
    PoolSpec,
    PricePath,
    SwapEvent,
    fetch_swaps_subgraph,
    load_bars,
    load_swaps,
    nearest_bar,
    save_swaps,
)
from .optimize import (
    EpochMarket,
    OptimalRecord,
    StrategyFamily,
    build_targets,
    candidate_fees,
    find_optimal,
    load_targets,
    sample_strategies,
    save_targets,
    uniform_reduced,
)
from .predictor import (
    AllocationNet,
    DatasetSplit,
    EnsembleWeights,
    MlpConfig,
    external_predictions,
    fit_ensemble,
    load_model,
    predict,
    save_model,
    split_dataset,
    train_mlp,
)

__version__ = "0.1.0"
