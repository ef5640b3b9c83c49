"""Turn-based CEX/DEX simulation.

Each period: the CEX price moves, the arbitrageur trades back to the no-arbitrage
band, fundamental buyers and sellers route their demand in coin-flip order, noise
traders (if any) hit the DEX, and the LP rebalances its CEX hedge.

The kernel works on a ``(configs, paths)`` block at once. Ensembles are cut into
fixed-size chunks of path indices; since every path draws from its own keyed
stream and the chunking does not depend on the worker count, results are
bitwise identical however many processes are used.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .market import (
    FeeSchedule,
    PoolState,
    TradeFill,
    TraderClass,
    _arb_size,
    _routed_size,
    region_bounds,
)
from .prices import GBM, Historical, PriceModel, PricePath, coin_flips, normal_increments, simulate_log_prices

__all__ = [
    "DEFAULT_SEED",
    "CLASSES",
    "Ensemble",
    "PathResult",
    "SimConfig",
    "run_batch",
    "run_ensemble",
    "run_path",
]

DEFAULT_SEED = 20250101
DEFAULT_CHUNK = 500
CLASSES = ("arbitrageur", "fundamental_buy", "fundamental_sell", "noise")
# trade_delta columns: arbitrage, first and second fundamental trade, noise buy, noise sell
_TRADE_SLOTS = (TraderClass.ARBITRAGEUR, None, None, TraderClass.NOISE, TraderClass.NOISE)


@dataclass(frozen=True)
class SimConfig:
    """One market setup.

    Demand and noise volume are rates in Y units per unit time (day); the per-step
    quantities are ``rate * dt``. Noise volume is split evenly into a buy and a sell.
    """

    fees: FeeSchedule = FeeSchedule(0.0020, 0.0015)
    initial_pool: PoolState = PoolState(3e7, 1e4)
    initial_cex_price: float = 3000.0
    n_steps: int = 1440
    horizon: float = 1.0
    demand_buy: float = 5000.0
    demand_sell: float = -5000.0
    noise_volume: float = 0.0
    price_model: PriceModel = GBM(0.04)
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise ValueError("horizon must be positive")
        if not (self.demand_buy >= 0 >= self.demand_sell):
            raise ValueError("need demand_buy >= 0 >= demand_sell")
        if not self.noise_volume >= 0:
            raise ValueError("noise_volume must be nonnegative")
        if not self.initial_cex_price > 0:
            raise ValueError("initial_cex_price must be positive")
        if isinstance(self.price_model, Historical) and self.price_model.path.n_steps != self.n_steps:
            raise ValueError("n_steps must match the historical path length")

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def buy_per_step(self) -> float:
        return self.demand_buy * self.dt

    @property
    def sell_per_step(self) -> float:
        return self.demand_sell * self.dt

    @property
    def noise_per_step(self) -> float:
        return self.noise_volume * self.dt

    def with_fees(self, **changes) -> "SimConfig":
        return replace(self, fees=replace(self.fees, **changes))

    def with_demand(self, rate: float) -> "SimConfig":
        """Symmetric fundamental demand: ``rate`` to buy and ``rate`` to sell per day."""
        return replace(self, demand_buy=rate, demand_sell=-rate)

    @classmethod
    def for_historical(cls, path: PricePath, **kwargs) -> "SimConfig":
        kwargs.setdefault("initial_cex_price", path.s0)
        return cls(n_steps=path.n_steps, horizon=path.n_steps * path.dt,
                   price_model=Historical(path), **kwargs)


@dataclass
class PathResult:
    """Full record of one simulated path (series have ``n_steps + 1`` entries)."""

    cex_price: np.ndarray
    reserve_x: np.ndarray
    reserve_y: np.ndarray
    hedge_value: np.ndarray
    fees_accrued: np.ndarray
    unhedged_pnl: np.ndarray
    hedged_pnl: np.ndarray
    tracking_error: np.ndarray
    log_ratios: np.ndarray
    fees_by_class: dict
    volume_by_class: dict
    trade_delta: np.ndarray
    trade_cash: np.ndarray
    eta1: float

    @property
    def trades(self) -> list[TradeFill]:
        """Nonzero fills in execution order."""
        fills = []
        for step in range(self.trade_delta.shape[0]):
            for slot, cls in enumerate(_TRADE_SLOTS):
                d = self.trade_delta[step, slot]
                if slot in (1, 2):
                    cls = TraderClass.FUNDAMENTAL_BUY if d > 0 else TraderClass.FUNDAMENTAL_SELL
                if d != 0:
                    cash = self.trade_cash[step, slot]
                    fills.append(TradeFill(float(d), float(cash), self.eta1 * abs(float(cash)), cls))
        return fills


@dataclass
class Ensemble:
    """Per-path outcomes of ``M`` paths under one config.

    Region counts are the number of pre-trade ratio samples (``n_steps`` per path)
    falling in each region under the config's own bounds.
    """

    config: SimConfig
    path_ids: np.ndarray
    hedged_pnl: np.ndarray
    unhedged_pnl: np.ndarray
    tracking_error: np.ndarray
    fees: dict
    volume: dict
    region_counts: dict
    arb_lp_pnl: np.ndarray
    band_violations: np.ndarray
    log_ratios: np.ndarray | None = None
    paths: list = field(default_factory=list)
    ratio_edges: np.ndarray | None = None
    ratio_counts: np.ndarray | None = None

    @property
    def n_paths(self) -> int:
        return self.path_ids.size

    @property
    def total_fees(self) -> np.ndarray:
        return sum(self.fees[c] for c in CLASSES)

    @property
    def total_volume(self) -> np.ndarray:
        return sum(self.volume[c] for c in CLASSES)

    def __iter__(self):
        return iter(self.paths)

    def __len__(self):
        return self.n_paths


def _param_block(configs: Sequence[SimConfig]) -> dict:
    col = lambda vals: np.asarray(vals, dtype=float)[:, None]
    return {
        "eta0": col([c.fees.eta0 for c in configs]),
        "eta1": col([c.fees.eta1 for c in configs]),
        "etaA": col([c.fees.etaA for c in configs]),
        "etaH": col([c.fees.etaH for c in configs]),
        "d_buy": col([c.buy_per_step for c in configs]),
        "d_sell": col([c.sell_per_step for c in configs]),
        "noise": col([c.noise_per_step for c in configs]),
    }


def _kernel(prices, model_idx, flips, x0, y0, p, *, record=False, keep_log_ratios=False, ratio_edges=None):
    """Simulate a block of ``K`` configs by ``P`` paths.

    ``prices`` is ``(D, P, N+1)`` with ``model_idx`` (length K) picking the price
    row of each config; ``flips`` is ``(P, N)``; ``p`` holds ``(K, 1)`` parameters.
    With ``ratio_edges`` the pre-trade log ratios are also binned per config,
    out-of-range samples going to the edge bins.
    """
    n = flips.shape[1]
    same_prices = prices.shape[0] == 1
    shape = (model_idx.size, flips.shape[0])
    eta0, eta1, etaA, etaH = p["eta0"], p["eta1"], p["etaA"], p["etaH"]
    d_buy, d_sell, half_noise = p["d_buy"], p["d_sell"], 0.5 * p["noise"]
    has_noise = bool(np.any(half_noise > 0))
    has_hedge_cost = bool(np.any(etaH > 0))

    buy_bound = (1 + eta0) / (1 + eta1)
    sell_bound = (1 - eta0) / (1 - eta1)
    arb_low = (1 - etaA) / (1 + eta1)
    arb_high = (1 + etaA) / (1 - eta1)
    profit_low = (1 + etaH) / (1 + eta1)
    profit_high = (1 - etaH) / (1 - eta1)
    band_tol = 1e-12

    k = x0 * y0
    y = np.full(shape, float(y0))
    x = np.full(shape, k / y0)
    s_prev = prices[:, :, 0][model_idx] if not same_prices else np.broadcast_to(prices[0, :, 0], shape)
    v0 = x + y * s_prev
    hedge = v0.copy()
    hedge_pos = y.copy()
    zeros = lambda: np.zeros(shape)
    fees = {c: zeros() for c in CLASSES}
    vol = {c: zeros() for c in CLASSES}
    n_profit, n_buysell, n_inside = zeros(), zeros(), zeros()
    arb_lp = zeros()
    violations = zeros()

    if keep_log_ratios or record:
        log_ratios = np.empty(shape + (n,))
    if record:
        series = {name: np.empty(shape + (n + 1,)) for name in ("x", "y", "h", "f")}
        series["x"][..., 0], series["y"][..., 0], series["h"][..., 0], series["f"][..., 0] = x, y, hedge, 0.0
        deltas = np.zeros(shape + (n, 5))
        cashes = np.zeros(shape + (n, 5))
    fee_total = zeros()
    if ratio_edges is not None:
        n_bins = ratio_edges.size - 1
        bin_offset = (np.arange(shape[0]) * n_bins)[:, None]
        hist = np.zeros(shape[0] * n_bins, dtype=np.int64)

    def execute(x, y, d):
        y_new = y - d
        cash = d * x / y_new
        return k / y_new, y_new, cash

    for i in range(1, n + 1):
        s = np.broadcast_to(prices[0, :, i], shape) if same_prices else prices[:, :, i][model_idx]

        ratio = (x / y) / s
        n_profit += (ratio >= profit_low) & (ratio < profit_high)
        n_buysell += (ratio >= sell_bound) & (ratio < buy_bound)
        n_inside += (ratio >= arb_low) & (ratio < arb_high)
        if keep_log_ratios or record:
            log_ratios[..., i - 1] = np.log(ratio)
        if ratio_edges is not None:
            b = np.clip(np.searchsorted(ratio_edges, np.log(ratio), side="right") - 1, 0, n_bins - 1)
            hist += np.bincount((b + bin_offset).ravel(), minlength=hist.size)

        d = _arb_size(x, y, s, eta1, etaA)
        arb_lp += np.where(d > 0, d * s * ((1 + eta1) * ratio - (1 + etaH)),
                           d * s * ((1 - eta1) * ratio - (1 - etaH)))
        x, y, cash = execute(x, y, d)
        fee = eta1 * np.abs(cash)
        fees["arbitrageur"] += fee
        vol["arbitrageur"] += np.abs(d)
        fee_total += fee
        if record:
            deltas[..., i - 1, 0], cashes[..., i - 1, 0] = d, cash

        buyer_first = flips[:, i - 1]
        for slot, is_buy in ((0, buyer_first), (1, ~buyer_first)):
            d = _routed_size(x, y, s, is_buy, eta0, eta1, d_buy, d_sell)
            x, y, cash = execute(x, y, d)
            fee = eta1 * np.abs(cash)
            fee_total += fee
            buy_fee = np.where(is_buy, fee, 0.0)
            buy_vol = np.where(is_buy, np.abs(d), 0.0)
            fees["fundamental_buy"] += buy_fee
            fees["fundamental_sell"] += fee - buy_fee
            vol["fundamental_buy"] += buy_vol
            vol["fundamental_sell"] += np.abs(d) - buy_vol
            if record:
                deltas[..., i - 1, 1 + slot], cashes[..., i - 1, 1 + slot] = d, cash

        ratio = (x / y) / s
        violations += (ratio < arb_low * (1 - band_tol)) | (ratio > arb_high * (1 + band_tol))

        if has_noise:
            for slot, d in ((3, np.broadcast_to(half_noise, shape)), (4, np.broadcast_to(-half_noise, shape))):
                x, y, cash = execute(x, y, d)
                fee = eta1 * np.abs(cash)
                fee_total += fee
                fees["noise"] += fee
                vol["noise"] += np.abs(d)
                if record:
                    deltas[..., i - 1, slot], cashes[..., i - 1, slot] = d, cash

        hedge = hedge + hedge_pos * (s - s_prev)
        if has_hedge_cost:
            # rebalancing cost is an LP expense: it widens the tracking error
            hedge = hedge + etaH * s * np.abs(y - hedge_pos)
        hedge_pos = y
        s_prev = s
        if record:
            series["x"][..., i], series["y"][..., i] = x, y
            series["h"][..., i], series["f"][..., i] = hedge, fee_total

    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y)) and np.all(np.isfinite(hedge))):
        raise FloatingPointError("simulation produced non-finite pool or hedge state")

    pool_value = x + y * s_prev
    tracking = hedge - pool_value
    fee_sum = sum(fees[c] for c in CLASSES)  # same order as Ensemble.total_fees
    out = {
        # algebraically unhedged - (hedge - v0); written this way so the identity is exact
        "hedged": fee_sum - tracking,
        "unhedged": pool_value - v0 + fee_sum,
        "tracking": tracking,
        "fees": fees,
        "volume": vol,
        "regions": {"profit": n_profit, "buysell": n_buysell, "inside_arb": n_inside},
        "arb_lp": arb_lp,
        "violations": violations,
    }
    if keep_log_ratios:
        out["log_ratios"] = log_ratios
    if ratio_edges is not None:
        out["ratio_hist"] = hist.reshape(shape[0], n_bins)
    if record:
        out["record"] = (series, v0, log_ratios, deltas, cashes)
    return out


def _distinct_models(configs):
    models, index = [], []
    for c in configs:
        for j, m in enumerate(models):
            if m == c.price_model:
                index.append(j)
                break
        else:
            models.append(c.price_model)
            index.append(len(models) - 1)
    return models, np.asarray(index)


def _check_compatible(configs):
    ref = configs[0]
    for c in configs[1:]:
        if (c.n_steps, c.horizon, c.initial_pool, c.initial_cex_price, c.seed) != (
                ref.n_steps, ref.horizon, ref.initial_pool, ref.initial_cex_price, ref.seed):
            raise ValueError("batched configs may differ only in fees, demand, noise and price model")


def _chunk_prices(models, ref: SimConfig, path_ids):
    n = ref.n_steps
    if all(isinstance(m, Historical) for m in models):
        return np.stack([np.broadcast_to(m.path.values, (path_ids.size, n + 1)) for m in models])
    z = normal_increments(ref.seed, path_ids, n)
    rows = []
    for m in models:
        if isinstance(m, Historical):
            rows.append(np.broadcast_to(m.path.values, (path_ids.size, n + 1)))
        else:
            rows.append(simulate_log_prices(m, ref.initial_cex_price, z, ref.dt))
    return np.stack(rows)


def _run_chunk(configs, path_ids, keep_log_ratios, record, ratio_edges=None):
    ref = configs[0]
    models, model_idx = _distinct_models(configs)
    prices = _chunk_prices(models, ref, path_ids)
    flips = coin_flips(ref.seed, path_ids, ref.n_steps)
    pool = ref.initial_pool
    out = _kernel(prices, model_idx, flips, pool.reserve_x, pool.reserve_y, _param_block(configs),
                  record=record, keep_log_ratios=keep_log_ratios, ratio_edges=ratio_edges)
    if record:
        out["prices"] = prices
        out["model_idx"] = model_idx
    return out


def _path_result(cfg_row, path_row, chunk, eta1):
    series, v0, log_ratios, deltas, cashes = chunk["record"]
    prices = chunk["prices"][chunk["model_idx"][cfg_row], path_row]
    x = series["x"][cfg_row, path_row]
    y = series["y"][cfg_row, path_row]
    h = series["h"][cfg_row, path_row]
    f = series["f"][cfg_row, path_row]
    base = v0[cfg_row, path_row]
    pool_value = x + y * prices
    tracking = h - pool_value
    return PathResult(
        cex_price=np.array(prices), reserve_x=x, reserve_y=y, hedge_value=h, fees_accrued=f,
        unhedged_pnl=pool_value - base + f, hedged_pnl=f - tracking, tracking_error=tracking,
        log_ratios=log_ratios[cfg_row, path_row],
        fees_by_class={c: float(chunk["fees"][c][cfg_row, path_row]) for c in CLASSES},
        volume_by_class={c: float(chunk["volume"][c][cfg_row, path_row]) for c in CLASSES},
        trade_delta=deltas[cfg_row, path_row], trade_cash=cashes[cfg_row, path_row], eta1=eta1,
    )


def default_workers() -> int:
    return os.cpu_count() or 1


def run_batch(configs: Sequence[SimConfig], n_paths: int, *, workers: int | None = None,
              chunk_size: int = DEFAULT_CHUNK, keep_log_ratios: bool = False,
              keep_paths: bool = False, ratio_edges=None, first_path: int = 0) -> list[Ensemble]:
    """Run several configs on common random numbers (same draws and coin flips).

    Configs may differ in fees, demand, noise and price model; everything else
    must match. Returns one :class:`Ensemble` per config. ``ratio_edges`` (log-ratio
    bin edges) makes each ensemble carry a histogram of all pre-trade samples.
    """
    configs = list(configs)
    if not configs:
        raise ValueError("no configs given")
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    _check_compatible(configs)
    ids = np.arange(first_path, first_path + n_paths)
    chunks = [ids[i:i + chunk_size] for i in range(0, n_paths, chunk_size)]
    workers = default_workers() if workers is None else max(1, int(workers))
    if ratio_edges is not None:
        ratio_edges = np.asarray(ratio_edges, dtype=float)
    args = [(configs, c, keep_log_ratios, keep_paths, ratio_edges) for c in chunks]
    if workers == 1 or len(chunks) == 1:
        results = [_run_chunk(*a) for a in args]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_chunk, *zip(*args)))

    cat = lambda get: np.concatenate([get(r) for r in results], axis=1)
    hedged = cat(lambda r: r["hedged"])
    unhedged = cat(lambda r: r["unhedged"])
    tracking = cat(lambda r: r["tracking"])
    arb_lp = cat(lambda r: r["arb_lp"])
    violations = cat(lambda r: r["violations"])
    fees = {c: cat(lambda r: r["fees"][c]) for c in CLASSES}
    vol = {c: cat(lambda r: r["volume"][c]) for c in CLASSES}
    regions = {name: cat(lambda r: r["regions"][name]) for name in ("profit", "buysell", "inside_arb")}
    logs = cat(lambda r: r["log_ratios"]) if keep_log_ratios else None
    hist = sum(r["ratio_hist"] for r in results) if ratio_edges is not None else None

    ensembles = []
    for row, cfg in enumerate(configs):
        paths = []
        if keep_paths:
            for r in results:
                paths.extend(_path_result(row, j, r, cfg.fees.eta1) for j in range(r["hedged"].shape[1]))
        ensembles.append(Ensemble(
            config=cfg, path_ids=ids.copy(), hedged_pnl=hedged[row], unhedged_pnl=unhedged[row],
            tracking_error=tracking[row], fees={c: fees[c][row] for c in CLASSES},
            volume={c: vol[c][row] for c in CLASSES},
            region_counts={k: v[row] for k, v in regions.items()},
            arb_lp_pnl=arb_lp[row], band_violations=violations[row],
            log_ratios=None if logs is None else logs[row], paths=paths,
            ratio_edges=ratio_edges, ratio_counts=None if hist is None else hist[row],
        ))
    return ensembles


def run_ensemble(config: SimConfig, n_paths: int, **kwargs) -> Ensemble:
    """``n_paths`` independent paths; path ``j`` uses the streams keyed on ``(seed, j)``."""
    return run_batch([config], n_paths, **kwargs)[0]


def run_path(config: SimConfig, path: PricePath, order_flags) -> PathResult:
    """Simulate one given price path with the given buyer-first flags."""
    flags = np.asarray(order_flags, dtype=bool)
    if len(path) != config.n_steps + 1:
        raise ValueError(f"path has {len(path)} points, expected {config.n_steps + 1}")
    if flags.shape != (config.n_steps,):
        raise ValueError(f"need {config.n_steps} order flags, got shape {flags.shape}")
    prices = path.values[None, None, :]
    pool = config.initial_pool
    out = _kernel(prices, np.zeros(1, dtype=int), flags[None, :], pool.reserve_x, pool.reserve_y,
                  _param_block([config]), record=True)
    out["prices"] = prices
    out["model_idx"] = np.zeros(1, dtype=int)
    return _path_result(0, 0, out, config.fees.eta1)


def bounds_of(config: SimConfig):
    return region_bounds(config.fees)
