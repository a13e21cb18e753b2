"""Command-line pipeline: each stage reads and writes plain artifacts.

Stages are separately invocable and idempotent — a stage re-derives what
it needs from its input files, so partial reruns stay cheap. Exit codes:
0 success, 2 bad configuration or arguments, 3 data problems, 4 numerical
failures.
"""
from __future__ import annotations

import csv
import json
import os
import sys

import click
import numpy as np

from .backtest import (
    BacktestConfig,
    BacktestResult,
    EpochLedgerEntry,
    Metrics,
    PerformanceReport,
    buy_and_hold,
    calibrate_windows,
    compare_strategies,
    compute_metrics,
    config_from_dict,
    emit_comparison,
    emit_reports,
    epoch_columns,
    load_config,
    run_oot_backtest,
    run_training_pipeline,
    sweep_tau,
)
from .calibrate import calibrate_epoch
from .epochs import epoch_volume, partition_epochs
from .errors import PipelineError, ValidationError
from .features import build_feature_matrix, load_features, save_features
from .marketdata import fetch_swaps_subgraph, load_bars, load_swaps, save_swaps
from .optimize import (
    EpochMarket,
    StrategyFamily,
    build_targets,
    find_optimal,
    load_targets,
    save_targets,
)
from .predictor import (
    external_predictions,
    fit_ensemble,
    load_model,
    save_model,
    split_dataset,
    train_mlp,
)


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="JSON config file; omitted fields take documented defaults.")
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--out-dir", type=click.Path(), default="out", show_default=True,
              help="Directory for stage artifacts.")
@click.pass_context
def cli(ctx, config_path, seed, out_dir):
    """Historical pool-state reconstruction and LP-strategy backtesting."""
    cfg = load_config(config_path) if config_path else config_from_dict({})
    if seed is not None:
        from dataclasses import replace

        cfg = replace(cfg, seed=seed)
    ctx.obj = {"cfg": cfg, "out_dir": out_dir}


def _outpath(ctx, name: str) -> str:
    out_dir = ctx.obj["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    return os.path.join(out_dir, name)


@cli.command()
@click.option("--swaps", "swaps_path", type=click.Path(), default=None,
              help="Local swap CSV to validate and canonicalize.")
@click.option("--endpoint", default=None, help="GraphQL endpoint to fetch from instead.")
@click.option("--pool", "pool_id", default=None, help="Pool id for the subgraph query.")
@click.option("--start", type=int, default=None, help="Inclusive start timestamp.")
@click.option("--end", type=int, default=None, help="Exclusive end timestamp.")
@click.option("--auto-sort", is_flag=True, help="Reorder out-of-order local records.")
@click.pass_context
def ingest(ctx, swaps_path, endpoint, pool_id, start, end, auto_sort):
    """Validate or fetch swap history into the canonical swap CSV."""
    if swaps_path is None and endpoint is None:
        raise ValidationError("ingest needs --swaps or --endpoint")
    if swaps_path is not None:
        path = load_swaps(swaps_path, ctx.obj["cfg"].pool, auto_sort=auto_sort)
    else:
        if pool_id is None or start is None or end is None:
            raise ValidationError("subgraph ingest needs --pool, --start, and --end")
        path = fetch_swaps_subgraph(endpoint, pool_id, start, end)
    dest = _outpath(ctx, "swaps.csv")
    save_swaps(path, dest)
    click.echo(f"wrote {len(path)} swaps to {dest}")


@cli.command(name="epochs")
@click.option("--swaps", "swaps_path", type=click.Path(), required=True)
@click.pass_context
def epochs_cmd(ctx, swaps_path):
    """Segment the swap path into reset epochs."""
    cfg = ctx.obj["cfg"]
    path = load_swaps(swaps_path, cfg.pool)
    eset = partition_epochs(path, cfg.partition, cfg.shape)
    dest = _outpath(ctx, "epochs.csv")
    with open(dest, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch_id", "start", "end", "center", "p_open", "p_close", "q", "volume"])
        for ep in eset:
            w.writerow([
                ep.index, ep.start, ep.end, ep.center,
                repr(float(path.prices[ep.start])), repr(float(path.prices[ep.end])),
                ep.q, repr(epoch_volume(path, ep)),
            ])
    click.echo(f"wrote {eset.K} epochs to {dest}")


@cli.command()
@click.option("--swaps", "swaps_path", type=click.Path(), required=True)
@click.pass_context
def calibrate(ctx, swaps_path):
    """Fit the per-epoch pool profiles against historical fees."""
    cfg = ctx.obj["cfg"]
    path = load_swaps(swaps_path, cfg.pool)
    eset = partition_epochs(path, cfg.partition, cfg.shape)
    dest = _outpath(ctx, "calibrations.csv")
    with open(dest, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch_id", "mu", "sigma", "fee_sim", "fee_hist", "best_effort"])
        for ep in eset:
            prices, volumes = epoch_columns(path, ep)
            res = calibrate_epoch(
                prices, volumes, cfg.partition, cfg.pool.fee_tier,
                cfg.pool_tvl, cfg.calibration,
            )
            w.writerow([
                ep.index, repr(res.params.mu), repr(res.params.sigma),
                repr(res.fee_sim), repr(res.fee_hist), int(res.best_effort),
            ])
    click.echo(f"wrote {eset.K} calibrations to {dest}")


@cli.command()
@click.option("--swaps", "swaps_path", type=click.Path(), required=True)
@click.pass_context
def optimize(ctx, swaps_path):
    """Search the strategy family per epoch and persist training targets."""
    cfg = ctx.obj["cfg"]
    path = load_swaps(swaps_path, cfg.pool)
    eset = partition_epochs(path, cfg.partition, cfg.shape)
    family = StrategyFamily(cfg.shape.tau, cfg.n_candidates, cfg.seed)
    records = []
    for ep in eset:
        prices, volumes = epoch_columns(path, ep)
        res = calibrate_epoch(
            prices, volumes, cfg.partition, cfg.pool.fee_tier,
            cfg.pool_tvl, cfg.calibration,
        )
        market = EpochMarket(ep.index, ep.center, float(prices[0]), [(prices, res.profile)])
        records.append(find_optimal(
            market, cfg.lp_capital, family, cfg.approach,
            cfg.partition, cfg.shape, cfg.pool.fee_tier,
        ))
    dest = _outpath(ctx, "targets.csv")
    save_targets(records, cfg.shape.tau, dest)
    click.echo(f"wrote {len(records)} targets to {dest}")


@cli.command()
@click.option("--swaps", "swaps_path", type=click.Path(), required=True)
@click.option("--bars-a", type=click.Path(), required=True)
@click.option("--bars-b", type=click.Path(), required=True)
@click.pass_context
def features(ctx, swaps_path, bars_a, bars_b):
    """Assemble the per-epoch technical feature matrix."""
    cfg = ctx.obj["cfg"]
    path = load_swaps(swaps_path, cfg.pool)
    eset = partition_epochs(path, cfg.partition, cfg.shape)
    X = build_feature_matrix(eset, load_bars(bars_a), load_bars(bars_b))
    dest = _outpath(ctx, "features.csv")
    save_features(X, dest)
    click.echo(f"wrote {X.shape[0]}x{X.shape[1]} feature matrix to {dest}")


@cli.command()
@click.option("--targets", "targets_path", type=click.Path(), required=True)
@click.option("--features", "features_path", type=click.Path(), required=True)
@click.option("--external", "external_paths", type=click.Path(), multiple=True,
              help="Prediction files of additional ensemble members.")
@click.pass_context
def train(ctx, targets_path, features_path, external_paths):
    """Train the allocation network; optionally fit ensemble weights."""
    cfg = ctx.obj["cfg"]
    records = load_targets(targets_path)
    Y = build_targets(records, len(records[0].rho_hat_star) - 1)
    X = load_features(features_path)
    split = split_dataset(X, Y)
    model = train_mlp(split, cfg.mlp, cfg.seed)
    dest = _outpath(ctx, "model.npz")
    save_model(model, dest)
    click.echo(f"wrote model to {dest} (validation loss {model.val_loss_:.6g})")

    if external_paths:
        n_train = len(split.X_train)
        members = [model.predict(split.X_train)]
        for path in external_paths:
            mat = external_predictions(path, expected_ids=range(1, len(Y) + 1))
            members.append(mat[:n_train])
        weights = fit_ensemble(members, split.Y_train)
        edest = _outpath(ctx, "ensemble.json")
        with open(edest, "w", encoding="utf-8") as fh:
            json.dump({"weights": [float(v) for v in weights.w]}, fh, indent=2, sort_keys=True)
            fh.write("\n")
        click.echo(f"wrote ensemble weights to {edest}")


@cli.command()
@click.option("--swaps", "swaps_path", type=click.Path(), required=True)
@click.option("--model", "model_path", type=click.Path(), default=None,
              help="Trained model artifact; omitted = uniform benchmark only.")
@click.option("--bars-a", type=click.Path(), default=None)
@click.option("--bars-b", type=click.Path(), default=None)
@click.pass_context
def backtest(ctx, swaps_path, model_path, bars_a, bars_b):
    """Replay strategies out-of-training and emit ledgers and reports."""
    cfg = ctx.obj["cfg"]
    path = load_swaps(swaps_path, cfg.pool)
    out_dir = ctx.obj["out_dir"]

    uni = run_oot_backtest(cfg, None, path)
    emit_reports(uni, out_dir)
    bh = buy_and_hold(path, cfg.lp_capital, cfg.bh_risky_fraction)
    emit_reports(bh, out_dir)
    if model_path is not None:
        model = load_model(model_path)
        ml = run_oot_backtest(
            cfg, model, path,
            load_bars(bars_a) if bars_a else None,
            load_bars(bars_b) if bars_b else None,
        )
        emit_reports(ml, out_dir)
        emit_comparison([compare_strategies(ml, uni, bh)], out_dir)
        click.echo(f"ml final {ml.report.final_capital:.2f}, "
                   f"uniform final {uni.report.final_capital:.2f}")
    else:
        click.echo(f"uniform final {uni.report.final_capital:.2f}")


@cli.command()
@click.option("--run-label", required=True, help="Artifact prefix to re-summarize.")
@click.pass_context
def report(ctx, run_label):
    """Recompute a run's summary JSON from its ledger and capital series."""
    out_dir = ctx.obj["out_dir"]
    ledger_path = os.path.join(out_dir, f"{run_label}_ledger.csv")
    capital_path = os.path.join(out_dir, f"{run_label}_capital.csv")
    entries = _read_ledger(ledger_path)
    ts, cap = _read_capital(capital_path)
    W0 = float(cap[0])
    metrics = compute_metrics(ts, cap, W0)
    tau = max((len(e.rho) for e in entries), default=1) - 1
    rep = PerformanceReport(
        label=run_label, tau=tau, W0=W0, final_capital=float(cap[-1]),
        total_fees=float(sum(e.fee_lp for e in entries)),
        total_costs=float(sum(e.gas for e in entries)),
        n_epochs=len(entries),
        lrf_zeroed_total=int(sum(e.lrf_zeroed for e in entries)),
        depleted=bool(entries and entries[-1].W_end == 0.0),
        metrics=metrics,
    )
    result = BacktestResult(run_label, entries, rep, ts, cap)
    written = emit_reports(result, out_dir)
    click.echo(f"rewrote {written[0]}")


@cli.command()
@click.option("--tau", "tau_list", required=True,
              help="Comma-separated τ values, e.g. 0,1,2,5,10.")
@click.option("--swaps-train", type=click.Path(), required=True)
@click.option("--swaps-oot", type=click.Path(), required=True)
@click.option("--bars-a", type=click.Path(), required=True)
@click.option("--bars-b", type=click.Path(), required=True)
@click.pass_context
def sweep(ctx, tau_list, swaps_train, swaps_oot, bars_a, bars_b):
    """Train and replay at several τ values; emit the comparison table."""
    cfg = ctx.obj["cfg"]
    try:
        taus = [int(v) for v in tau_list.split(",") if v.strip() != ""]
    except ValueError:
        raise ValidationError(f"--tau wants comma-separated integers, got {tau_list!r}")
    if not taus:
        raise ValidationError("--tau lists at least one value")
    rows = sweep_tau(
        cfg, taus,
        load_swaps(swaps_train, cfg.pool), load_swaps(swaps_oot, cfg.pool),
        load_bars(bars_a), load_bars(bars_b),
    )
    dest = emit_comparison(rows, ctx.obj["out_dir"])
    click.echo(f"wrote {dest}")


# --- artifact readers for the report stage -----------------------------------

def _read_ledger(path: str) -> list[EpochLedgerEntry]:
    with open(path, "r", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    head = rows[0]
    rho_cols = [i for i, name in enumerate(head) if name.startswith("rho_")]
    col = {name: i for i, name in enumerate(head)}
    out = []
    for row in rows[1:]:
        out.append(EpochLedgerEntry(
            epoch_id=int(row[col["epoch_id"]]),
            p_open=float(row[col["p_open"]]),
            p_close=float(row[col["p_close"]]),
            rho=np.array([float(row[i]) for i in rho_cols]),
            fee_lp=float(row[col["fee_lp"]]),
            gas=float(row[col["gas"]]),
            W_begin=float(row[col["W_begin"]]),
            W_end=float(row[col["W_end"]]),
            lrf_zeroed=int(row[col["lrf_zeroed"]]),
        ))
    return out


def _read_capital(path: str) -> tuple[np.ndarray, np.ndarray]:
    with open(path, "r", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    ts = np.array([float(r[0]) for r in rows[1:]])
    cap = np.array([float(r[1]) for r in rows[1:]])
    return ts, cap


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.ClickException as exc:
        exc.show()
        return 2
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except PipelineError as exc:
        click.echo(f"error: {exc}", err=True)
        return exc.exit_code
    except OSError as exc:
        click.echo(f"error: {exc}", err=True)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
