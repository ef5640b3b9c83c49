"""Monte Carlo simulation of a constant-product AMM next to a centralised exchange.

Liquidity-provider PnL, fee revenue, region occupancy, optimal AMM fees,
calibration to observed price ratios and historical backtests.
"""
__version__ = "0.1.0"

from .market import (
    FeeSchedule,
    PoolState,
    RegionBounds,
    TradeFill,
    TraderClass,
    apply_trade,
    arb_trade_size,
    bps,
    marginal_lp_pnl,
    marginal_price,
    region_bounds,
    routed_buy_size,
    routed_sell_size,
)
from .prices import GBM, ExpOU, Historical, PricePath, load_historical, sample_exp_ou, sample_gbm
from .engine import DEFAULT_SEED, Ensemble, PathResult, SimConfig, run_batch, run_ensemble, run_path
from .stats import Histogram, SummaryStats, histogram, log_ratio_histogram, occupancy, pnl_histogram, summarize
from .sweep import (
    HALT,
    PnlSurface,
    SweepGrid,
    approx_optimal_fee,
    infinite_demand_revenue,
    optimal_fee,
    regret,
    sweep,
)
from .calibration import MarketData, backtest, calibrate, load_market_data, market_data_from_path
