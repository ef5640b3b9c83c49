"""
Calibrating to a month of prices, then replaying it
===================================================

There is no exchange data bundled here, so we make some: a month of minute
prices with a three-day volatility burst, and a pool driven by the model with
known parameters. Calibration should find those parameters again from the
distribution of the pool/CEX price ratio alone. Then the month is replayed at
the calibrated fee and at a cheaper one.
"""
import numpy as np

from cpmmsim import FeeSchedule, PoolState, PricePath, SimConfig, backtest, bps, calibrate
from cpmmsim import market_data_from_path

rng = np.random.default_rng(42)
n, dt = 31 * 1440, 1 / 1440
vol = np.full(n, 0.026)
vol[17 * 1440:20 * 1440] *= 3
logs = np.concatenate([[0.0], np.cumsum(-0.5 * vol**2 * dt + vol * np.sqrt(dt) * rng.standard_normal(n))])
times = np.datetime64("2025-01-01T00:00") + np.arange(n + 1) * np.timedelta64(1, "m")
cex = PricePath(3300 * np.exp(logs), dt, times)

pool = PoolState(2.3e7, 2.3e7 / 3300)
truth = SimConfig.for_historical(cex, fees=FeeSchedule(bps(9), bps(30)), initial_pool=pool).with_demand(15000)
observed = market_data_from_path(backtest(cex, truth).result, dt, times)

fit = calibrate(observed, bps(30), [0.02, 0.026, 0.032], [bps(v) for v in (5, 9, 13)],
                [7500, 15000, 30000], n_paths=4)
print(f"calibrated sigma {fit.sigma:.3f}, CEX cost {fit.eta0 * 1e4:g} bps, demand {fit.delta_bar:g}/day "
      f"(objective {fit.objective:.4f})")

for fee_bps in (30, 5):
    cfg = SimConfig.for_historical(observed.cex_path, fees=FeeSchedule(fit.eta0, bps(fee_bps)),
                                   initial_pool=observed.average_pool()).with_demand(fit.delta_bar)
    run = backtest(observed.cex_path, cfg)
    pnl = run.result.hedged_pnl
    daily = pnl[::1440]
    print(f"AMM fee {fee_bps:2d} bps: final hedged PnL {pnl[-1]:10.0f}; "
          f"PnL over the burst (days 18-20) {daily[20] - daily[17]:9.0f}")
