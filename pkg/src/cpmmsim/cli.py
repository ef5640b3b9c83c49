"""Command-line entry point: ``cpmmsim simulate|sweep|calibrate|backtest|stats``.

Fees are given in basis points on the command line. Every run writes a
``manifest.json`` (before any simulation starts) into the output directory,
which defaults to ``$CPMMSIM_OUTPUT_DIR`` or ``./cpmmsim-out``.

Exit codes: 0 ok, 1 usage, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import json
import math
import os
import sys
from dataclasses import asdict
from pathlib import Path

import click

from . import __version__
from .calibration import backtest, calibrate, load_market_data
from .engine import DEFAULT_SEED, SimConfig, default_workers, run_ensemble
from .io import (
    config_to_dict,
    load_config_file,
    write_csv,
    write_histogram,
    write_json,
)
from .market import FeeSchedule, PoolState, bps, region_bounds
from .prices import GBM, ExpOU, load_historical
from .stats import log_ratio_histogram, pnl_histogram, summarize
from .sweep import SweepGrid, approx_optimal_fee, infinite_demand_revenue, optimal_fee, regret, sweep

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3
OUTPUT_ENV = "CPMMSIM_OUTPUT_DIR"


class DataError(click.ClickException):
    exit_code = EXIT_DATA


def parse_axis(text: str | None) -> list[float] | None:
    """``"1,2,5"`` or an inclusive range ``"start:stop:step"``."""
    if text is None:
        return None
    text = text.strip()
    try:
        if ":" in text:
            start, stop, step = (float(v) for v in text.split(":"))
            if step <= 0:
                raise ValueError
            n = int(math.floor((stop - start) / step + 1e-9)) + 1
            return [round(start + i * step, 12) for i in range(n)]
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter(f"cannot parse axis {text!r}")


_MODEL_KEYS = ("eta0_bps", "eta1_bps", "etaA_bps", "etaH_bps", "sigma", "mu", "kappa", "theta",
               "demand", "noise", "n_steps", "horizon", "x0", "y0", "s0", "seed")


def model_options(f):
    opts = [
        click.option("--config", "config_file", type=click.Path(dir_okay=False), help="JSON or TOML file."),
        click.option("--eta0-bps", type=float, help="CEX trading cost [20]."),
        click.option("--eta1-bps", type=float, help="AMM fee [15]."),
        click.option("--etaA-bps", "etaA_bps", type=float, help="Arbitrageur CEX fee [eta0]."),
        click.option("--etaH-bps", "etaH_bps", type=float, help="LP hedging fee [0]."),
        click.option("--sigma", type=float, help="Volatility per sqrt(day) [0.04]."),
        click.option("--mu", type=float, help="Drift per day [0]."),
        click.option("--kappa", type=float, help="Mean reversion rate; selects the exp-OU model."),
        click.option("--theta", type=float, help="Log-price reference level [log s0]."),
        click.option("--demand", type=float, help="Buy demand = |sell demand| per day [5000]."),
        click.option("--noise", type=float, help="Noise volume per day [0]."),
        click.option("--n-steps", type=int, help="Periods [1440]."),
        click.option("--horizon", type=float, help="Days [1]."),
        click.option("--x0", type=float, help="Initial X reserve [3e7]."),
        click.option("--y0", type=float, help="Initial Y reserve [1e4]."),
        click.option("--s0", type=float, help="Initial CEX price [3000]."),
        click.option("--seed", type=int, help=f"Seed [{DEFAULT_SEED}]."),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


def resolve_settings(config_file, flags: dict) -> dict:
    settings = {}
    if config_file:
        try:
            settings.update(load_config_file(config_file))
        except FileNotFoundError:
            raise click.UsageError(f"config file not found: {config_file}")
        except Exception as exc:
            raise click.UsageError(f"cannot read config {config_file}: {exc}")
        unknown = set(settings) - set(_MODEL_KEYS) - {"paths", "workers"}
        if unknown:
            raise click.UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    settings.update({k: v for k, v in flags.items() if v is not None})
    return settings


def build_config(s: dict) -> SimConfig:
    try:
        eta0 = s.get("eta0_bps", 20.0)
        fees = FeeSchedule.from_bps(eta0, s.get("eta1_bps", 15.0), s.get("etaA_bps"), s.get("etaH_bps", 0.0))
        s0 = s.get("s0", 3000.0)
        sigma = s.get("sigma", 0.04)
        if s.get("kappa") is not None:
            model = ExpOU(s["kappa"], s.get("theta", math.log(s0)), sigma)
        else:
            model = GBM(sigma, s.get("mu", 0.0))
        demand = s.get("demand", 5000.0)
        return SimConfig(
            fees=fees, initial_pool=PoolState(s.get("x0", 3e7), s.get("y0", 1e4)), initial_cex_price=s0,
            n_steps=int(s.get("n_steps", 1440)), horizon=s.get("horizon", 1.0),
            demand_buy=demand, demand_sell=-demand, noise_volume=s.get("noise", 0.0),
            price_model=model, seed=int(s.get("seed", DEFAULT_SEED)),
        )
    except (TypeError, ValueError) as exc:
        raise click.UsageError(f"invalid configuration: {exc}")


def _model_flags(kwargs: dict) -> dict:
    return {k: kwargs.pop(k) for k in _MODEL_KEYS if k in kwargs}


def write_manifest(ctx, out: Path, subcommand: str, cfg: SimConfig | None, extra: dict) -> None:
    write_json(out / "manifest.json", {
        "subcommand": subcommand,
        "params": dict(ctx.params),
        "argv": sys.argv[1:],
        "config": None if cfg is None else config_to_dict(cfg),
        "seed": None if cfg is None else cfg.seed,
        "workers": ctx.obj["workers"],
        "output_dir": str(out),
        "version": __version__,
        **extra,
    })


@click.group()
@click.option("--out", "out_dir", type=click.Path(file_okay=False), help=f"Output directory [${OUTPUT_ENV} or ./cpmmsim-out].")
@click.option("--workers", type=int, default=None, help="Worker processes [available CPUs].")
@click.version_option(__version__)
@click.pass_context
def cli(ctx, out_dir, workers):
    """Monte Carlo CPMM/CEX simulator: LP PnL, optimal fees, calibration, backtests."""
    out = Path(out_dir or os.environ.get(OUTPUT_ENV) or "cpmmsim-out")
    if workers is not None and workers < 1:
        raise click.BadParameter("--workers must be >= 1")
    ctx.obj = {"out": out, "workers": workers or default_workers()}


@cli.command("simulate")
@model_options
@click.option("--paths", type=int, help="Number of paths [1000].")
@click.option("--bins", type=int, default=201, show_default=True, help="Log-ratio histogram bins.")
@click.option("--pnl-bins", type=int, default=50, show_default=True)
@click.pass_context
def simulate_cmd(ctx, config_file, paths, bins, pnl_bins, **kwargs):
    """Run an ensemble and write summary statistics and histograms."""
    settings = resolve_settings(config_file, _model_flags(kwargs))
    cfg = build_config(settings)
    n_paths = int(paths if paths is not None else settings.get("paths", 1000))
    if n_paths < 1:
        raise click.UsageError("--paths must be >= 1")
    out = ctx.obj["out"]
    write_manifest(ctx, out, "simulate", cfg, {"paths": n_paths})
    ens = run_ensemble(cfg, n_paths, workers=ctx.obj["workers"], keep_log_ratios=True)
    stats = summarize(ens)
    write_json(out / "stats.json", stats.as_dict())
    write_csv(out / "stats.csv", [stats.as_dict()])
    write_histogram(out / "ratio_histogram.csv", log_ratio_histogram(ens, bins))
    write_histogram(out / "pnl_histogram.csv", pnl_histogram(ens, pnl_bins))
    click.echo(
        f"E[profit]={stats.e_profit:.2f} (se {stats.stderr_profit:.2f})  E[fees]={stats.e_fees:.2f}  "
        f"E[volume]={stats.e_volume:.2f}  P(profit)={stats.p_profit:.2%}  "
        f"P(buy-sell)={stats.p_buysell:.2%}  P(arb)={stats.p_arb:.2%}")


@cli.command("sweep")
@model_options
@click.option("--paths", type=int, help="Paths per cell [5000].")
@click.option("--eta1-axis", help="AMM fees in bps, list or start:stop:step [1:40:1].")
@click.option("--sigma-axis", help="Volatilities.")
@click.option("--demand-axis", help="Total demand per day (buy plus sell).")
@click.option("--eta0-axis", help="CEX fees in bps.")
@click.option("--regret-at-bps", type=float, help="Also write regret of this fixed fee.")
@click.option("--resume", is_flag=True, help="Skip conditions already in cells.jsonl.")
@click.pass_context
def sweep_cmd(ctx, config_file, paths, eta1_axis, sigma_axis, demand_axis, eta0_axis, regret_at_bps,
              resume, **kwargs):
    """Expected-PnL surface, optimal fee per condition, and regret."""
    settings = resolve_settings(config_file, _model_flags(kwargs))
    cfg = build_config(settings)
    to_dec = lambda axis: None if axis is None else [bps(v) for v in axis]
    try:
        grid = SweepGrid(
            eta1=to_dec(parse_axis(eta1_axis or "1:40:1")), sigma=parse_axis(sigma_axis),
            total_demand=parse_axis(demand_axis), eta0=to_dec(parse_axis(eta0_axis)),
            n_paths=int(paths if paths is not None else settings.get("paths", 5000)),
        )
        grid.resolved(cfg)
    except ValueError as exc:
        raise click.UsageError(str(exc))
    out = ctx.obj["out"]
    cells_file = out / "cells.jsonl"
    if not resume and cells_file.exists():
        cells_file.unlink()
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(ctx, out, "sweep", cfg, {
        "paths": grid.n_paths, "axes": grid.resolved(cfg), "regret_at_bps": regret_at_bps})
    surface = sweep(grid, cfg, workers=ctx.obj["workers"], manifest=cells_file,
                    progress=lambda *c: click.echo(f"done eta0={c[0]:g} sigma={c[1]:g} demand={c[2]:g}", err=True))
    rows = surface.rows()
    write_csv(out / "surface.csv", rows)
    write_json(out / "surface.json", rows)
    optimal = []
    for cond in surface.conditions():
        res = optimal_fee(surface, cond)
        optimal.append({"eta0": res.eta0, "sigma": res.sigma, "total_demand": res.total_demand,
                        "optimal_eta1": res.eta1, "optimal_eta1_bps": res.eta1 * 1e4,
                        "e_profit": res.e_profit, "halt": res.halted})
    write_csv(out / "optimal_fee.csv", optimal)
    if regret_at_bps is not None:
        try:
            shortfall = regret(surface, bps(regret_at_bps))
        except ValueError as exc:
            raise click.UsageError(str(exc))
        write_csv(out / "regret.csv", [
            {"eta0": c[0], "sigma": c[1], "total_demand": c[2], "fixed_eta1": bps(regret_at_bps), "regret": r}
            for c, r in shortfall.items()])
    click.echo(f"wrote {len(rows)} cells to {out / 'surface.csv'}")


def _load_data(cex, dex):
    try:
        return load_market_data(cex, dex)
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(str(exc))


@cli.command("calibrate")
@click.option("--cex", required=True, type=click.Path(dir_okay=False), help="CSV timestamp,price.")
@click.option("--dex", required=True, type=click.Path(dir_okay=False), help="CSV timestamp,reserve_x,reserve_y.")
@click.option("--eta1-bps", type=float, default=30.0, show_default=True)
@click.option("--sigma-grid", default="0.02,0.023,0.026,0.029,0.032", show_default=True)
@click.option("--eta0-grid-bps", default="4:16:2", show_default=True)
@click.option("--demand-grid", default="5000,10000,15000,20000,25000", show_default=True,
              help="Per-side demand per day.")
@click.option("--paths", type=int, default=4, show_default=True, help="Paths per grid point.")
@click.option("--n-steps", type=int, help="Simulated steps per path [data length].")
@click.option("--historical", is_flag=True, help="Drive simulations with the observed CEX path.")
@click.option("--refine", is_flag=True, help="Second pass at half spacing around the best point.")
@click.option("--noise-replicates", type=int, default=4, show_default=True,
              help="Re-runs of the best point used to estimate the objective noise floor (0 skips).")
@click.option("--seed", type=int, default=DEFAULT_SEED, show_default=True)
@click.pass_context
def calibrate_cmd(ctx, cex, dex, eta1_bps, sigma_grid, eta0_grid_bps, demand_grid, paths, n_steps,
                  historical, refine, noise_replicates, seed):
    """Fit sigma, eta0 and demand to the observed log price-ratio histogram."""
    if noise_replicates == 1 or noise_replicates < 0:
        raise click.UsageError("--noise-replicates must be 0 or at least 2")
    data = _load_data(cex, dex)
    out = ctx.obj["out"]
    sigmas = parse_axis(sigma_grid)
    eta0s = [bps(v) for v in parse_axis(eta0_grid_bps)]
    demands = parse_axis(demand_grid)
    write_manifest(ctx, out, "calibrate", None, {
        "cex": str(cex), "dex": str(dex), "eta1_bps": eta1_bps, "sigma_grid": sigmas,
        "eta0_grid": eta0s, "demand_grid": demands, "paths": paths, "n_steps": n_steps,
        "historical": historical, "refine": refine, "noise_replicates": noise_replicates, "seed": seed})
    try:
        result = calibrate(data, bps(eta1_bps), sigmas, eta0s, demands, paths, n_steps=n_steps,
                           use_historical=historical, refine=refine, seed=seed,
                           noise_replicates=noise_replicates, workers=ctx.obj["workers"])
    except ValueError as exc:
        raise DataError(str(exc))
    report = result.report()
    report["captured_volume_note"] = "simulated volume excludes noise traders"
    write_json(out / "calibration.json", report)
    write_csv(out / "calibration_histogram.csv", [
        {"bin_left": a, "bin_right": b, "empirical": int(e), "simulated": int(s)}
        for (a, b, e), s in zip(result.empirical.rows(), result.simulated.counts)])
    sigma = "n/a" if math.isnan(result.sigma) else f"{result.sigma:.4f}"
    click.echo(f"sigma={sigma} eta0={result.eta0 * 1e4:.2f}bps delta_bar={result.delta_bar:g} "
               f"objective={result.objective:.5f}")
    if not math.isnan(result.noise_floor):
        click.echo(f"noise floor {result.noise_floor:.5f}; "
                   f"{len(result.indistinguishable())} grid point(s) within it")


@cli.command("backtest")
@click.option("--cex", required=True, type=click.Path(dir_okay=False), help="CSV timestamp,price.")
@click.option("--dex", type=click.Path(dir_okay=False), help="Optional reserves CSV; sets the pool to its average.")
@click.option("--eta1-bps", type=float, default=30.0, show_default=True)
@click.option("--eta0-bps", type=float, default=9.18, show_default=True)
@click.option("--etaA-bps", "etaA_bps", type=float)
@click.option("--etaH-bps", "etaH_bps", type=float, default=0.0)
@click.option("--demand", type=float, default=14704.0, show_default=True, help="Per-side demand per day.")
@click.option("--noise", type=float, default=0.0)
@click.option("--x0", type=float, default=2.3e7, show_default=True)
@click.option("--y0", type=float, default=6904.0, show_default=True)
@click.option("--seed", type=int, default=DEFAULT_SEED, show_default=True)
@click.pass_context
def backtest_cmd(ctx, cex, dex, eta1_bps, eta0_bps, etaA_bps, etaH_bps, demand, noise, x0, y0, seed):
    """Replay a historical CEX price series and write the PnL and ratio series."""
    try:
        path = load_historical(cex)
        pool = _load_data(cex, dex).average_pool() if dex else PoolState(x0, y0)
    except DataError:
        raise
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(str(exc))
    try:
        cfg = SimConfig.for_historical(
            path, fees=FeeSchedule.from_bps(eta0_bps, eta1_bps, etaA_bps, etaH_bps), initial_pool=pool,
            demand_buy=demand, demand_sell=-demand, noise_volume=noise, seed=seed)
    except ValueError as exc:
        raise click.UsageError(str(exc))
    out = ctx.obj["out"]
    write_manifest(ctx, out, "backtest", cfg, {"cex": str(cex), "dex": None if dex is None else str(dex)})
    result = backtest(path, cfg)
    write_csv(out / "backtest.csv", result.rows())
    r = result.result
    b = result.bounds
    write_json(out / "backtest_summary.json", {
        "terminal_hedged_pnl": r.hedged_pnl[-1], "terminal_unhedged_pnl": r.unhedged_pnl[-1],
        "fees_by_class": r.fees_by_class, "volume_by_class": r.volume_by_class,
        "bounds": asdict(b)})
    click.echo(f"hedged PnL {r.hedged_pnl[-1]:.2f}  unhedged PnL {r.unhedged_pnl[-1]:.2f}")


@cli.command("stats")
@click.option("--eta0-bps", type=float, default=20.0, show_default=True)
@click.option("--eta1-bps", type=float, default=15.0, show_default=True)
@click.option("--etaA-bps", "etaA_bps", type=float)
@click.option("--etaH-bps", "etaH_bps", type=float, default=0.0)
@click.option("--x0", type=float, default=3e7, show_default=True)
@click.pass_context
def stats_cmd(ctx, eta0_bps, eta1_bps, etaA_bps, etaH_bps, x0):
    """Region thresholds and the infinite-demand closed form for a fee schedule."""
    try:
        fees = FeeSchedule.from_bps(eta0_bps, eta1_bps, etaA_bps, etaH_bps)
    except ValueError as exc:
        raise click.UsageError(str(exc))
    b = region_bounds(fees)
    best, leading = approx_optimal_fee(fees.eta0, x0)
    report = {
        "bounds": asdict(b),
        "log_bounds": {k: math.log(v) for k, v in asdict(b).items()},
        "buysell_region_empty": not b.buysell_nonempty,
        "infinite_demand_revenue_per_period": infinite_demand_revenue(fees.eta0, fees.eta1, x0),
        "approx_optimal_eta1": best,
        "approx_optimal_eta1_leading_order": leading,
    }
    write_json(ctx.obj["out"] / "region_stats.json", report)
    for name, value in asdict(b).items():
        click.echo(f"{name:12s} {value:.9f}  log {math.log(value):+.3e}")
    click.echo(f"revenue/period (sigma=0, infinite demand): {report['infinite_demand_revenue_per_period']:.4f}")
    click.echo(f"approx optimal eta1: {best * 1e4:.3f} bps (leading order {leading * 1e4:.3f} bps)")


@cli.command("replay")
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False))
@click.pass_context
def replay_cmd(ctx, manifest):
    """Rerun the command recorded in a manifest (output goes to --out)."""
    try:
        record = json.loads(Path(manifest).read_text())
        name, params = record["subcommand"], record["params"]
    except (ValueError, KeyError) as exc:
        raise DataError(f"not a run manifest: {exc}")
    if name not in cli.commands or name == "replay":
        raise DataError(f"manifest names unknown subcommand {name!r}")
    if record.get("workers") and ctx.obj["workers"] != record["workers"]:
        click.echo(f"note: manifest used {record['workers']} workers, replaying with {ctx.obj['workers']}",
                   err=True)
    ctx.invoke(cli.commands[name], **params)


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="cpmmsim", standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_USAGE
    except DataError as exc:
        exc.show()
        return EXIT_DATA
    except click.UsageError as exc:
        exc.show()
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except FloatingPointError as exc:
        click.echo(f"numeric failure: {exc}", err=True)
        return EXIT_NUMERIC
    except OSError as exc:
        click.echo(f"I/O error: {exc}", err=True)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
