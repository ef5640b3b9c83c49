"""Fit (sigma, eta0, demand) to an observed log price-ratio distribution, and backtests.

The fit is a plain grid search on the L2 distance between normalised histograms of
the empirical and simulated pre-trade log ratios, with an optional refinement pass
that halves the spacing around the incumbent.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .engine import PathResult, SimConfig, run_batch, run_path
from .market import FeeSchedule, PoolState, RegionBounds, region_bounds
from .prices import GBM, Historical, PricePath, coin_flips, parse_timestamps, regular_grid
from .stats import Histogram, histogram

__all__ = [
    "BacktestResult",
    "CalibrationResult",
    "MarketData",
    "backtest",
    "calibrate",
    "calibration_edges",
    "empirical_log_ratio",
    "histogram_l2",
    "load_market_data",
    "market_data_from_path",
]


@dataclass
class MarketData:
    """Minute-aligned CEX prices and DEX reserves."""

    cex_path: PricePath
    reserve_x: np.ndarray
    reserve_y: np.ndarray

    def __post_init__(self):
        self.reserve_x = np.asarray(self.reserve_x, dtype=float)
        self.reserve_y = np.asarray(self.reserve_y, dtype=float)
        if not (len(self.cex_path) == self.reserve_x.size == self.reserve_y.size):
            raise ValueError("CEX and DEX series must have equal length")
        if np.any(self.reserve_x <= 0) or np.any(self.reserve_y <= 0):
            raise ValueError("reserves must be positive")

    @property
    def dex_price(self) -> np.ndarray:
        return self.reserve_x / self.reserve_y

    def average_pool(self) -> PoolState:
        return PoolState(float(self.reserve_x.mean()), float(self.reserve_y.mean()))


def _read(file, columns: int, what: str) -> pd.DataFrame:
    path = Path(file)
    if not path.exists():
        raise FileNotFoundError(f"{what} file not found: {path}")
    frame = pd.read_csv(path)
    if frame.empty or frame.shape[1] < columns:
        raise ValueError(f"{path}: expected {columns} columns of {what} data")
    return frame


def load_market_data(cex_file, dex_file) -> MarketData:
    """Join a ``timestamp,price`` CSV with a ``timestamp,reserve_x,reserve_y`` CSV.

    Timestamps are rounded to the nearest minute and rows present in only one
    source are dropped.
    """
    cex = _read(cex_file, 2, "CEX price")
    dex = _read(dex_file, 3, "DEX reserve")
    left = pd.DataFrame({"t": parse_timestamps(cex.iloc[:, 0]),
                         "price": pd.to_numeric(cex.iloc[:, 1], errors="coerce")})
    right = pd.DataFrame({"t": parse_timestamps(dex.iloc[:, 0]),
                          "rx": pd.to_numeric(dex.iloc[:, 1], errors="coerce"),
                          "ry": pd.to_numeric(dex.iloc[:, 2], errors="coerce")})
    for frame in (left, right):
        frame["t"] = frame["t"].dt.round("min")
    joined = left.drop_duplicates("t", keep="last").merge(
        right.drop_duplicates("t", keep="last"), on="t", how="inner").sort_values("t")
    if len(joined) < 2:
        raise ValueError("CEX and DEX files share fewer than two timestamps")
    if joined[["price", "rx", "ry"]].isna().any().any():
        raise ValueError("non-numeric price or reserve values")
    times = joined["t"].to_numpy(dtype="datetime64[ns]")
    _, step = regular_grid(times)
    path = PricePath(joined["price"].to_numpy(float), float(step / np.timedelta64(1, "D")), times)
    return MarketData(path, joined["rx"].to_numpy(float), joined["ry"].to_numpy(float))


def market_data_from_path(result: PathResult, dt: float, times=None) -> MarketData:
    """Pair each step's CEX price with the reserves standing just before its trades."""
    path = PricePath(result.cex_price[1:], dt, None if times is None else times[1:])
    return MarketData(path, result.reserve_x[:-1], result.reserve_y[:-1])


def empirical_log_ratio(data: MarketData) -> np.ndarray:
    """Per-row log of DEX marginal price over CEX price."""
    if len(data.cex_path) == 0:
        raise ValueError("empty market data")
    return np.log(data.dex_price / data.cex_path.values)


def histogram_l2(h1: Histogram, h2: Histogram) -> float:
    """L2 distance between two histograms after normalising each to unit mass."""
    if h1.edges.shape != h2.edges.shape or not np.array_equal(h1.edges, h2.edges):
        raise ValueError("histograms must share bin edges")
    if h1.total == 0 or h2.total == 0:
        raise ValueError("cannot normalise an empty histogram")
    return float(np.sqrt(np.sum((h1.probabilities() - h2.probabilities()) ** 2)))


def calibration_edges(samples, n_bins: int = 101, tails: float = 0.1) -> np.ndarray:
    lo, hi = np.percentile(samples, [tails, 100 - tails])
    if not hi > lo:
        raise ValueError("empirical log-ratio distribution is degenerate")
    return np.linspace(lo, hi, n_bins + 1)


@dataclass
class CalibrationResult:
    sigma: float
    eta0: float
    delta_bar: float
    objective: float
    eta1: float
    trace: list = field(default_factory=list)
    edges: np.ndarray | None = None
    simulated: Histogram | None = None
    empirical: Histogram | None = None
    noise_floor: float = math.nan
    replicate_objectives: list = field(default_factory=list)

    def indistinguishable(self) -> list[dict]:
        """Trace points whose objective is within the noise floor of the best one."""
        if math.isnan(self.noise_floor):
            return []
        return [t for t in self.trace if t["objective"] - self.objective <= self.noise_floor]

    def report(self) -> dict:
        floor = None if math.isnan(self.noise_floor) else self.noise_floor
        return {
            "sigma": None if math.isnan(self.sigma) else self.sigma, "eta0": self.eta0, "eta0_bps": self.eta0 * 1e4,
            "delta_bar": self.delta_bar, "eta1": self.eta1, "objective": self.objective,
            "noise_floor": floor, "replicate_objectives": self.replicate_objectives,
            "indistinguishable": self.indistinguishable(), "trace": self.trace,
        }


def _refined(axis: Sequence[float], best: float) -> list[float]:
    axis = sorted(axis)
    if len(axis) < 2:
        return [best]
    gaps = np.diff(axis)
    i = axis.index(best)
    half = min(gaps[j] for j in (i - 1, i) if 0 <= j < gaps.size) / 2
    return [v for v in (best - half, best, best + half) if v > 0]


def calibrate(data: MarketData, fixed_eta1: float, sigma_grid: Sequence[float] | None,
              eta0_grid: Sequence[float], delta_bar_grid: Sequence[float], n_paths: int = 4, *,
              n_steps: int | None = None, use_historical: bool = False, refine: bool = False,
              n_bins: int = 101, seed: int | None = None, noise_replicates: int = 0,
              workers=None) -> CalibrationResult:
    """Grid search for the parameters whose simulated ratio histogram best matches the data.

    The pool is fixed at the period-average reserves. With ``use_historical`` the
    observed CEX path drives every simulation and only ``eta0`` and ``delta_bar``
    are searched. ``n_steps`` (default: data length) sets the simulated horizon
    for the GBM variant.

    With ``noise_replicates > 0`` the winning point is re-simulated under that
    many blocks of fresh paths. The sample standard deviation of those objectives
    is the Monte Carlo noise floor: grid points closer than this to the best
    objective cannot be told apart at the chosen ``n_paths``.
    """
    if noise_replicates == 1 or noise_replicates < 0:
        raise ValueError("noise_replicates must be 0 or at least 2")
    if not eta0_grid or not delta_bar_grid or (not use_historical and not sigma_grid):
        raise ValueError("empty calibration grid")
    samples = empirical_log_ratio(data)
    edges = calibration_edges(samples, n_bins)
    empirical = histogram(samples, n_bins, (edges[0], edges[-1]))
    pool = data.average_pool()
    dt = data.cex_path.dt
    base_kwargs = {"initial_pool": pool}
    if seed is not None:
        base_kwargs["seed"] = seed
    if use_historical:
        base = SimConfig.for_historical(data.cex_path, **base_kwargs)
        sigma_grid = [math.nan]
    else:
        n = n_steps or data.cex_path.n_steps
        base = SimConfig(n_steps=n, horizon=n * dt, initial_cex_price=pool.reserve_x / pool.reserve_y,
                         **base_kwargs)

    trace = []

    def evaluate(sigmas, eta0s, deltas):
        points = [p for p in itertools.product(sigmas, eta0s, deltas)
                  if not any(t["point"] == list(p) for t in trace)]
        if not points:
            return
        configs = []
        for sigma, eta0, delta in points:
            cfg = replace(base, fees=FeeSchedule(eta0, fixed_eta1)).with_demand(delta)
            if not use_historical:
                cfg = replace(cfg, price_model=GBM(sigma))
            configs.append(cfg)
        ensembles = run_batch(configs, n_paths, ratio_edges=edges, workers=workers)
        for point, ens in zip(points, ensembles):
            sim = Histogram(edges, ens.ratio_counts)
            trace.append({"point": list(point), "objective": histogram_l2(sim, empirical),
                          "counts": ens.ratio_counts})

    evaluate(sigma_grid, eta0_grid, delta_bar_grid)
    if refine:
        best = min(trace, key=lambda t: t["objective"])["point"]
        evaluate([math.nan] if use_historical else _refined(sigma_grid, best[0]),
                 _refined(eta0_grid, best[1]), _refined(delta_bar_grid, best[2]))
    best = min(trace, key=lambda t: t["objective"])
    sigma, eta0, delta = best["point"]
    replicates = []
    if noise_replicates:
        cfg = replace(base, fees=FeeSchedule(eta0, fixed_eta1)).with_demand(delta)
        if not use_historical:
            cfg = replace(cfg, price_model=GBM(sigma))
        for k in range(1, noise_replicates + 1):
            # disjoint path indices give fresh, independent random streams
            ens, = run_batch([cfg], n_paths, ratio_edges=edges, workers=workers, first_path=k * n_paths)
            replicates.append(histogram_l2(Histogram(edges, ens.ratio_counts), empirical))
    return CalibrationResult(
        sigma=sigma, eta0=eta0, delta_bar=delta, objective=best["objective"], eta1=fixed_eta1,
        noise_floor=float(np.std(replicates, ddof=1)) if replicates else math.nan,
        replicate_objectives=replicates,
        trace=[{"sigma": None if math.isnan(t["point"][0]) else t["point"][0], "eta0": t["point"][1], "delta_bar": t["point"][2],
                "objective": t["objective"]} for t in trace],
        edges=edges, simulated=Histogram(edges, best["counts"]), empirical=empirical,
    )


@dataclass
class BacktestResult:
    result: PathResult
    bounds: RegionBounds
    times: np.ndarray | None

    def rows(self) -> list[dict]:
        """One row per step: time, cumulative PnL, pre-trade ratio and region flags."""
        b = self.bounds
        r = self.result
        ratio = np.exp(r.log_ratios)
        if self.times is None:
            times = np.arange(len(r.hedged_pnl)).astype(str)
        else:
            times = np.datetime_as_string(np.asarray(self.times, dtype="datetime64[s]"))
        out = []
        for i in range(1, len(r.hedged_pnl)):
            q = ratio[i - 1]
            out.append({
                "time": times[i],
                "unhedged_pnl": float(r.unhedged_pnl[i]),
                "hedged_pnl": float(r.hedged_pnl[i]),
                "ratio": float(q),
                "in_profit": int(b.profit_low <= q < b.profit_high),
                "in_buysell": int(b.sell_bound <= q < b.buy_bound),
                "outside_arb": int(not b.arb_low <= q < b.arb_high),
            })
        return out


def backtest(cex_path: PricePath, config: SimConfig) -> BacktestResult:
    """Replay one historical CEX path; only the buyer/seller order is random (seeded)."""
    cfg = config
    if not (isinstance(cfg.price_model, Historical) and cfg.price_model.path is cex_path):
        cfg = replace(config, n_steps=cex_path.n_steps, horizon=cex_path.n_steps * cex_path.dt,
                      initial_cex_price=cex_path.s0, price_model=Historical(cex_path))
    flags = coin_flips(cfg.seed, [0], cfg.n_steps)[0]
    return BacktestResult(run_path(cfg, cex_path, flags), region_bounds(cfg.fees), cex_path.times)
