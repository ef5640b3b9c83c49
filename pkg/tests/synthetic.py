"""Deterministic synthetic CEX/DEX data for calibration and backtest tests.

No real exchange data ships with the package, so market data is produced by
running the model itself on a generated CEX path and recording the pool.
"""
import numpy as np

from cpmmsim.calibration import backtest, market_data_from_path
from cpmmsim.engine import SimConfig
from cpmmsim.market import FeeSchedule, PoolState
from cpmmsim.prices import PricePath

START = np.datetime64("2025-01-01T00:00")


def cex_path(days, sigma=0.026, s0=3300.0, spike=None, seed=2025):
    """Minute GBM path; ``spike=(first_day, last_day, factor)`` scales sigma on those days."""
    n = int(days * 1440)
    dt = 1 / 1440
    vol = np.full(n, sigma)
    if spike is not None:
        first, last, factor = spike
        vol[(first - 1) * 1440:last * 1440] *= factor
    z = np.random.default_rng(seed).standard_normal(n)
    logs = np.concatenate([[0.0], np.cumsum(-0.5 * vol**2 * dt + vol * np.sqrt(dt) * z)])
    times = START + np.arange(n + 1) * np.timedelta64(1, "m")
    return PricePath(s0 * np.exp(logs), dt, times)


def market(path, eta0, eta1, delta_bar, x0=2.3e7, seed=7):
    """Run the model over ``path`` and return the observed (CEX, reserves) data."""
    pool = PoolState(x0, x0 / path.s0)
    cfg = SimConfig.for_historical(path, fees=FeeSchedule(eta0, eta1), initial_pool=pool,
                                   seed=seed).with_demand(delta_bar)
    result = backtest(path, cfg).result
    return market_data_from_path(result, path.dt, path.times)


def write_csvs(data, folder):
    """CEX and DEX CSV files in the expected ``timestamp,...`` layout."""
    times = data.cex_path.times.astype("datetime64[s]").astype(str)
    cex = folder / "cex.csv"
    dex = folder / "dex.csv"
    cex.write_text("timestamp,price\n" + "".join(
        f"{t}Z,{p!r}\n" for t, p in zip(times, data.cex_path.values.tolist())))
    dex.write_text("timestamp,reserve_x,reserve_y\n" + "".join(
        f"{t}Z,{x!r},{y!r}\n" for t, x, y in zip(times, data.reserve_x.tolist(), data.reserve_y.tolist())))
    return cex, dex
