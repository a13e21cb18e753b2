"""End-to-end pipelines: calibrate → optimize → train, and the OOT replay.

The replay walks reset epochs in order, sizing the LP position per the
capital mode, charging reallocation gas at each boundary, accruing the
share-based fee income window by window (with the conservative zeroing
rule for windows whose calibration pins the bump at the grid's lower
edge), and marking the position at each epoch close. Metrics follow the
365-day crypto convention with daily resampling for the Sharpe ratio.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .calibrate import (
    CalibrationConfig,
    CalibrationResult,
    WindowCalibration,
    calibrate_epoch,
    calibrate_subepochs,
)
from .clmm import BucketPartition, LiquidityProfile
from .epochs import Epoch, EpochSet, StrategyShape, epoch_prices, partition_epochs
from .errors import (
    EmptySeries,
    PeriodMismatch,
    TooFewRows,
    ValidationError,
)
from .features import build_feature_matrix
from .lp import (
    CostModel,
    LpAllocation,
    RewardApproach,
    end_of_epoch_capital,
    fee_base_profile,
    gas_cost,
    lp_fees,
    lp_profile,
    lp_shares,
)
from .marketdata import BarSeries, PoolSpec, PricePath
from .optimize import (
    EpochMarket,
    OptimalRecord,
    StrategyFamily,
    build_targets,
    find_optimal,
    uniform_reduced,
)
from .predictor import AllocationNet, DatasetSplit, MlpConfig, split_dataset, train_mlp

SECONDS_PER_DAY = 86_400.0
TRADING_DAYS = 365.0


class CapitalMode(Enum):
    REINVEST = "reinvest"
    NO_REINVEST = "no_reinvest"
    FIXED = "fixed"


@dataclass(frozen=True)
class BacktestConfig:
    pool: PoolSpec = PoolSpec(fee_tier=0.003, tick_size=10.0)
    partition: BucketPartition = BucketPartition(lower=0.0, width=10.0, count=650)
    shape: StrategyShape = StrategyShape(tau=5)
    pool_tvl: float = 80_000_000.0
    lp_capital: float = 1_000_000.0
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    capital_mode: CapitalMode = CapitalMode.NO_REINVEST
    cost: CostModel = CostModel()
    approach: RewardApproach = RewardApproach.SHARE_OF_HISTORICAL
    seed: int = 0
    flexibility: int = 0
    n_candidates: int = 1000
    bh_risky_fraction: float = 1.0
    mlp: MlpConfig = field(default_factory=MlpConfig)

    def __post_init__(self):
        if self.pool_tvl <= 0 or self.lp_capital <= 0:
            raise ValidationError("pool TVL and LP capital must be positive")
        if self.flexibility == 1 or self.flexibility < 0:
            raise ValidationError(
                "flexibility is 0 (off) or a window size of at least 2 prices"
            )
        if not 0.0 <= self.bh_risky_fraction <= 1.0:
            raise ValidationError("risky fraction lies in [0, 1]")


_CONFIG_DEFAULTS = {
    "fee_tier": 0.003,
    "token_a": "ETH",
    "token_b": "USDC",
    "numeraire": "USDC",
    "partition": {"lower": 0.0, "width": 10.0, "count": 650},
    "shape": {"tau": 5, "eta_up": 0, "eta_down": 0},
    "pool_tvl": 80_000_000.0,
    "lp_capital": 1_000_000.0,
    "calibration": {"rel_tol": 0.05, "mu_lo": -3.0, "mu_hi": 3.0, "mu_points": 61,
                    "sigma2_lo": 0.01, "sigma2_hi": 10.0, "sigma_points": 61},
    "capital_mode": "no_reinvest",
    "cost_model": {"gas_mint": 430_000.0, "gas_burn": 215_000.0, "gas_price_gwei": 20.0},
    "approach": "share_of_historical",
    "seed": 0,
    "flexibility": 0,
    "n_candidates": 1000,
    "bh_risky_fraction": 1.0,
}


def config_from_dict(raw: dict) -> BacktestConfig:
    """Build a config from a JSON-style dict; unknown keys are rejected."""
    unknown = set(raw) - set(_CONFIG_DEFAULTS)
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")

    def merged(key):
        base = dict(_CONFIG_DEFAULTS[key])
        sub = raw.get(key, {})
        extra = set(sub) - set(base)
        if extra:
            raise ValidationError(f"unknown {key} keys: {sorted(extra)}")
        base.update(sub)
        return base

    part = merged("partition")
    shape = merged("shape")
    cal = merged("calibration")
    cost = merged("cost_model")
    get = lambda key: raw.get(key, _CONFIG_DEFAULTS[key])
    return BacktestConfig(
        pool=PoolSpec(
            fee_tier=get("fee_tier"),
            tick_size=part["width"],
            token_a=get("token_a"),
            token_b=get("token_b"),
            numeraire=get("numeraire"),
        ),
        partition=BucketPartition(part["lower"], part["width"], int(part["count"])),
        shape=StrategyShape(int(shape["tau"]), int(shape["eta_up"]), int(shape["eta_down"])),
        pool_tvl=float(get("pool_tvl")),
        lp_capital=float(get("lp_capital")),
        calibration=CalibrationConfig(
            mu_grid=np.linspace(cal["mu_lo"], cal["mu_hi"], int(cal["mu_points"])),
            sigma_grid=np.geomspace(
                np.sqrt(cal["sigma2_lo"]), np.sqrt(cal["sigma2_hi"]), int(cal["sigma_points"])
            ),
            rel_tol=float(cal["rel_tol"]),
        ),
        capital_mode=CapitalMode(get("capital_mode")),
        cost=CostModel(cost["gas_mint"], cost["gas_burn"], cost["gas_price_gwei"]),
        approach=RewardApproach(get("approach")),
        seed=int(get("seed")),
        flexibility=int(get("flexibility")),
        n_candidates=int(get("n_candidates")),
        bh_risky_fraction=float(get("bh_risky_fraction")),
    )


def load_config(source) -> BacktestConfig:
    if hasattr(source, "read"):
        raw = json.load(source)
    else:
        with open(source, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ValidationError("config must be a JSON object")
    return config_from_dict(raw)


# --- per-epoch plumbing -----------------------------------------------------

def epoch_columns(path: PricePath, epoch: Epoch) -> tuple[np.ndarray, np.ndarray]:
    """Aligned (prices, volumes) for an epoch; degenerate epochs duplicate."""
    prices = epoch_prices(path, epoch)
    if epoch.degenerate:
        return prices, np.array([path.volumes[epoch.start], 0.0])
    return prices, path.volumes[epoch.start : epoch.end + 1]


def calibrate_windows(
    prices: np.ndarray, volumes: np.ndarray, cfg: BacktestConfig
) -> list[WindowCalibration]:
    """Whole-epoch calibration, or per-window when flexibility is on."""
    if cfg.flexibility >= 2:
        return calibrate_subepochs(
            prices, volumes, cfg.partition, cfg.pool.fee_tier,
            cfg.pool_tvl, cfg.flexibility, cfg.calibration,
        )
    res = calibrate_epoch(
        prices, volumes, cfg.partition, cfg.pool.fee_tier, cfg.pool_tvl, cfg.calibration
    )
    return [WindowCalibration((0, len(prices) - 1), res)]


def position_outcome(
    rho: np.ndarray,
    center: int,
    W_pos: float,
    prices: np.ndarray,
    windows: list[WindowCalibration],
    cfg: BacktestConfig,
) -> tuple[float, float, int, LiquidityProfile]:
    """Run one epoch's position: (fee income, principal at close, zeroed windows, profile)."""
    alloc = LpAllocation(W_pos, center, cfg.shape, rho, cfg.partition.count)
    L_lp = lp_profile(alloc, float(prices[0]), cfg.partition)
    gamma = cfg.pool.fee_tier
    lrf_active = cfg.flexibility >= 2

    fee_total = 0.0
    lrf_zeroed = 0
    for win in windows:
        a, b = win.offsets
        if lrf_active and win.result.mu_at_floor:
            lrf_zeroed += 1
            continue
        shares = lp_shares(L_lp, win.result.profile, cfg.approach)
        base = fee_base_profile(L_lp, win.result.profile, cfg.approach)
        fee_total += lp_fees(shares, base, prices[a : b + 1], gamma).fee

    last = windows[-1].result
    shares_end = lp_shares(L_lp, last.profile, cfg.approach)
    base_end = fee_base_profile(L_lp, last.profile, cfg.approach)
    principal = end_of_epoch_capital(shares_end, base_end, float(prices[-1]), 0.0)
    return fee_total, principal, lrf_zeroed, L_lp


# --- ledger / report types --------------------------------------------------

@dataclass(frozen=True)
class EpochLedgerEntry:
    epoch_id: int
    p_open: float
    p_close: float
    rho: np.ndarray
    fee_lp: float
    gas: float
    W_begin: float
    W_end: float
    lrf_zeroed: int


@dataclass(frozen=True)
class Metrics:
    cagr: float
    mdd: float
    sharpe: float | None


@dataclass(frozen=True)
class PerformanceReport:
    label: str
    tau: int
    W0: float
    final_capital: float
    total_fees: float
    total_costs: float
    n_epochs: int
    lrf_zeroed_total: int
    depleted: bool
    metrics: Metrics


@dataclass(frozen=True)
class BacktestResult:
    label: str
    ledger: list[EpochLedgerEntry]
    report: PerformanceReport
    timestamps: np.ndarray
    capital: np.ndarray


# --- metrics ----------------------------------------------------------------

def compute_metrics(timestamps: np.ndarray, capital: np.ndarray, W0: float) -> Metrics:
    """CAGR, max drawdown, and annualized daily-return Sharpe (rf = 0)."""
    ts = np.asarray(timestamps, dtype=float)
    W = np.asarray(capital, dtype=float)
    if len(ts) == 0 or len(ts) != len(W):
        raise EmptySeries("capital series is empty or misaligned")
    if W0 <= 0:
        raise ValidationError(f"starting capital must be positive, got {W0}")

    days = (ts[-1] - ts[0]) / SECONDS_PER_DAY
    if days > 0:
        cagr = float((W[-1] / W0) ** (TRADING_DAYS / days) - 1.0)
    else:
        cagr = 0.0 if W[-1] == W0 else float(W[-1] / W0 - 1.0)

    mdd = float(np.min(W / np.maximum.accumulate(np.maximum(W, 1e-300)) - 1.0))
    mdd = min(mdd, 0.0)

    # end-of-day marks -> daily returns
    day = np.floor(ts / SECONDS_PER_DAY).astype(np.int64)
    last_of_day = np.flatnonzero(np.diff(day)) if len(day) > 1 else np.array([], dtype=int)
    idx = np.concatenate([last_of_day, [len(W) - 1]])
    daily = W[idx]
    sharpe = None
    if len(daily) >= 3 and np.all(daily[:-1] > 0):
        rets = daily[1:] / daily[:-1] - 1.0
        sd = float(np.std(rets, ddof=1))
        if sd > 0.0:
            sharpe = float(np.mean(rets) / sd * np.sqrt(TRADING_DAYS))
    return Metrics(cagr, mdd, sharpe)


# --- strategies -------------------------------------------------------------

def _predict_rho(model: AllocationNet | None, feature_row: np.ndarray | None, tau: int) -> np.ndarray:
    if model is None:
        return uniform_reduced(tau)
    return model.predict(feature_row)


def run_oot_backtest(
    cfg: BacktestConfig,
    model: AllocationNet | None,
    path: PricePath,
    bars_a: BarSeries | None = None,
    bars_b: BarSeries | None = None,
    label: str | None = None,
) -> BacktestResult:
    """Replay the strategy over out-of-training data, epoch by epoch.

    `model=None` runs the uniform benchmark (no feature data needed).
    Capital is floored at zero; depletion ends the run but still reports.
    """
    epochs = partition_epochs(path, cfg.partition, cfg.shape)
    X = None
    if model is not None:
        if bars_a is None or bars_b is None:
            raise ValidationError("a model-driven run needs both bar series")
        X = build_feature_matrix(epochs, bars_a, bars_b)

    mode = cfg.capital_mode
    W0 = cfg.lp_capital
    account = W0
    cum_fees = 0.0
    total_gas = 0.0
    lrf_total = 0
    prev_profile: LiquidityProfile | None = None
    depleted = False

    ledger: list[EpochLedgerEntry] = []
    ts_points = [path.timestamps[0]]
    cap_points = [W0]

    for k, ep in enumerate(epochs):
        prices, volumes = epoch_columns(path, ep)
        p_open, p_close = float(prices[0]), float(prices[-1])
        rho = _predict_rho(model, None if X is None else X[k], cfg.shape.tau)

        base_capital = W0 if mode is CapitalMode.FIXED else account
        # size the mint before gas so the op count is known, then invest net
        pre_alloc = LpAllocation(base_capital, ep.center, cfg.shape, rho, cfg.partition.count)
        pre_profile = lp_profile(pre_alloc, p_open, cfg.partition)
        gas = gas_cost(prev_profile, pre_profile, cfg.cost, p_open)
        total_gas += gas

        W_pos = base_capital - gas
        if W_pos <= 0.0:
            depleted = True
            ledger.append(EpochLedgerEntry(
                ep.index, p_open, p_close, rho, 0.0, gas,
                base_capital, 0.0, 0,
            ))
            ts_points.append(path.timestamps[ep.end])
            cap_points.append(0.0)
            account = 0.0
            break

        windows = calibrate_windows(prices, volumes, cfg)
        fee_lp, principal, lrf_zeroed, L_lp = position_outcome(
            rho, ep.center, W_pos, prices, windows, cfg
        )
        lrf_total += lrf_zeroed
        cum_fees += fee_lp
        delta_il = principal - W_pos

        if mode is CapitalMode.REINVEST:
            account = W_pos + delta_il + fee_lp
        elif mode is CapitalMode.NO_REINVEST:
            account = W_pos + delta_il
        else:  # fixed position size; net results accrue to the side account
            account = account - gas + delta_il + fee_lp

        w_end = max(account, 0.0)
        ledger.append(EpochLedgerEntry(
            ep.index, p_open, p_close, rho, fee_lp, gas,
            base_capital, w_end, lrf_zeroed,
        ))
        ts_points.append(path.timestamps[ep.end])
        cap_points.append(w_end)
        prev_profile = L_lp
        if account <= 0.0:
            depleted = True
            account = 0.0
            break

    ts_arr = np.array(ts_points)
    cap_arr = np.array(cap_points)
    metrics = compute_metrics(ts_arr, cap_arr, W0)
    report = PerformanceReport(
        label=label or ("ml" if model is not None else "uniform"),
        tau=cfg.shape.tau,
        W0=W0,
        final_capital=float(cap_arr[-1]),
        total_fees=cum_fees,
        total_costs=total_gas,
        n_epochs=len(ledger),
        lrf_zeroed_total=lrf_total,
        depleted=depleted,
        metrics=metrics,
    )
    return BacktestResult(report.label, ledger, report, ts_arr, cap_arr)


def buy_and_hold(
    path: PricePath, W0: float, risky_fraction: float = 1.0, label: str = "buy_and_hold"
) -> BacktestResult:
    """Convert part of W0 at the first print and mark to market at each swap."""
    if not 0.0 <= risky_fraction <= 1.0:
        raise ValidationError("risky fraction lies in [0, 1]")
    p0 = path.prices[0]
    capital = W0 * (1.0 - risky_fraction) + W0 * risky_fraction * (path.prices / p0)
    metrics = compute_metrics(path.timestamps, capital, W0)
    report = PerformanceReport(
        label=label, tau=-1, W0=W0, final_capital=float(capital[-1]),
        total_fees=0.0, total_costs=0.0, n_epochs=0, lrf_zeroed_total=0,
        depleted=False, metrics=metrics,
    )
    return BacktestResult(label, [], report, path.timestamps.copy(), capital)


# --- training pipeline ------------------------------------------------------

@dataclass(frozen=True)
class TrainingArtifacts:
    epochs: EpochSet
    calibrations: list[CalibrationResult]
    records: list[OptimalRecord]
    Y: np.ndarray
    X: np.ndarray
    split: DatasetSplit
    model: AllocationNet


def run_training_pipeline(
    cfg: BacktestConfig,
    path: PricePath,
    bars_a: BarSeries,
    bars_b: BarSeries,
) -> TrainingArtifacts:
    """Epochs → calibration → optimal search → features → split → train."""
    epochs = partition_epochs(path, cfg.partition, cfg.shape)
    gamma = cfg.pool.fee_tier
    family = StrategyFamily(cfg.shape.tau, cfg.n_candidates, cfg.seed)

    calibrations: list[CalibrationResult] = []
    records: list[OptimalRecord] = []
    for ep in epochs:
        prices, volumes = epoch_columns(path, ep)
        res = calibrate_epoch(
            prices, volumes, cfg.partition, gamma, cfg.pool_tvl, cfg.calibration
        )
        calibrations.append(res)
        market = EpochMarket(ep.index, ep.center, float(prices[0]), [(prices, res.profile)])
        records.append(find_optimal(
            market, cfg.lp_capital, family, cfg.approach, cfg.partition, cfg.shape, gamma
        ))

    Y = build_targets(records, cfg.shape.tau)
    X = build_feature_matrix(epochs, bars_a, bars_b)
    if len(X) < 5:
        raise TooFewRows(f"need at least 5 epochs to train, got {len(X)}")
    split = split_dataset(X, Y)
    model = train_mlp(split, cfg.mlp, cfg.seed)
    return TrainingArtifacts(epochs, calibrations, records, Y, X, split, model)


# --- comparison and reports -------------------------------------------------

def compare_strategies(
    ml: BacktestResult,
    uniform: BacktestResult,
    bh: BacktestResult | None = None,
) -> dict:
    """Table row: fee totals, efficiency, finals, metrics — same period only."""
    runs = [ml, uniform] + ([bh] if bh is not None else [])
    t0s = {float(r.timestamps[0]) for r in runs}
    t1s = {float(r.timestamps[-1]) for r in runs}
    w0s = {float(r.report.W0) for r in runs}
    if len(t0s) > 1 or len(t1s) > 1 or len(w0s) > 1:
        raise PeriodMismatch("strategies cover different periods or capital bases")

    f_ml, f_uni = ml.report.total_fees, uniform.report.total_fees
    efficiency = None
    if f_uni > 0.0:
        efficiency = (f_ml - f_uni) / f_uni * 100.0
    elif f_ml == f_uni:
        efficiency = 0.0

    def metric_block(r: BacktestResult) -> dict:
        return {
            "final_capital": r.report.final_capital,
            "total_fees": r.report.total_fees,
            "total_costs": r.report.total_costs,
            "cagr": r.report.metrics.cagr,
            "mdd": r.report.metrics.mdd,
            "sharpe": r.report.metrics.sharpe,
        }

    row = {
        "tau": ml.report.tau,
        "efficiency_pct": efficiency,
        "ml": metric_block(ml),
        "uniform": metric_block(uniform),
    }
    if bh is not None:
        row["buy_and_hold"] = metric_block(bh)
    return row


def _round_trip_float(v) -> str:
    return repr(float(v))


def emit_reports(result: BacktestResult, out_dir: str) -> list[str]:
    """Write summary JSON, the epoch ledger, and the capital series."""
    os.makedirs(out_dir, exist_ok=True)
    prefix = os.path.join(out_dir, result.label)
    written = []

    rep = result.report
    summary = {
        "label": rep.label,
        "tau": rep.tau,
        "W0": rep.W0,
        "final_capital": rep.final_capital,
        "total_fees": rep.total_fees,
        "total_costs": rep.total_costs,
        "n_epochs": rep.n_epochs,
        "lrf_zeroed_total": rep.lrf_zeroed_total,
        "depleted": rep.depleted,
        "cagr": rep.metrics.cagr,
        "mdd": rep.metrics.mdd,
        "sharpe": rep.metrics.sharpe,
    }
    summary_path = prefix + "_summary.json"
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    written.append(summary_path)

    ledger_path = prefix + "_ledger.csv"
    with open(ledger_path, "w", encoding="utf-8", newline="") as fh:
        tau = max((len(e.rho) for e in result.ledger), default=1) - 1
        head = ["epoch_id", "p_open", "p_close", "fee_lp", "gas",
                "W_begin", "W_end", "lrf_zeroed"] + [f"rho_{k}" for k in range(tau + 1)]
        fh.write(",".join(head) + "\n")
        for e in result.ledger:
            cells = [str(e.epoch_id), _round_trip_float(e.p_open), _round_trip_float(e.p_close),
                     _round_trip_float(e.fee_lp), _round_trip_float(e.gas),
                     _round_trip_float(e.W_begin), _round_trip_float(e.W_end),
                     str(e.lrf_zeroed)] + [_round_trip_float(v) for v in e.rho]
            fh.write(",".join(cells) + "\n")
    written.append(ledger_path)

    series_path = prefix + "_capital.csv"
    with open(series_path, "w", encoding="utf-8", newline="") as fh:
        fh.write("timestamp,capital\n")
        for t, w in zip(result.timestamps, result.capital):
            fh.write(f"{_round_trip_float(t)},{_round_trip_float(w)}\n")
    written.append(series_path)
    return written


def emit_comparison(rows: list[dict], out_dir: str) -> str:
    """One flattened CSV row per τ, plus the raw JSON."""
    os.makedirs(out_dir, exist_ok=True)
    json_path = os.path.join(out_dir, "comparison.json")
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(rows, fh, indent=2, sort_keys=True)
        fh.write("\n")

    csv_path = os.path.join(out_dir, "comparison.csv")
    cols = ["tau", "fees_ml", "fees_uniform", "efficiency_pct",
            "final_ml", "final_uniform", "final_bh"]
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(cols) + "\n")
        for row in rows:
            eff = row["efficiency_pct"]
            cells = [
                str(row["tau"]),
                _round_trip_float(row["ml"]["total_fees"]),
                _round_trip_float(row["uniform"]["total_fees"]),
                "" if eff is None else _round_trip_float(eff),
                _round_trip_float(row["ml"]["final_capital"]),
                _round_trip_float(row["uniform"]["final_capital"]),
                _round_trip_float(row["buy_and_hold"]["final_capital"])
                if "buy_and_hold" in row else "",
            ]
            fh.write(",".join(cells) + "\n")
    return csv_path


def sweep_tau(
    cfg: BacktestConfig,
    taus: list[int],
    train_path: PricePath,
    oot_path: PricePath,
    bars_a: BarSeries,
    bars_b: BarSeries,
) -> list[dict]:
    """Train and replay at each τ; one comparison row per τ."""
    rows = []
    for tau in taus:
        cfg_tau = replace(cfg, shape=StrategyShape(tau, cfg.shape.eta_up, cfg.shape.eta_down))
        artifacts = run_training_pipeline(cfg_tau, train_path, bars_a, bars_b)
        ml = run_oot_backtest(cfg_tau, artifacts.model, oot_path, bars_a, bars_b, label=f"ml_tau{tau}")
        uni = run_oot_backtest(cfg_tau, None, oot_path, label=f"uniform_tau{tau}")
        bh = buy_and_hold(oot_path, cfg_tau.lp_capital, cfg_tau.bh_risky_fraction)
        rows.append(compare_strategies(ml, uni, bh))
    return rows
