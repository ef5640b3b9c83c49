"""Constant-product pool mechanics, trade sizing and the price-ratio regions.

All functions are pure. The ``*_size`` helpers prefixed with an underscore accept
numpy arrays as well as floats so the simulation kernel can evaluate them for many
paths at once; the public wrappers take a :class:`PoolState`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

__all__ = [
    "FeeSchedule",
    "PoolState",
    "RegionBounds",
    "TradeFill",
    "TraderClass",
    "apply_trade",
    "arb_trade_size",
    "bps",
    "marginal_lp_pnl",
    "marginal_price",
    "region_bounds",
    "routed_buy_size",
    "routed_sell_size",
]


def bps(value: float) -> float:
    """Convert basis points to a decimal fraction."""
    return value * 1e-4


class TraderClass(str, Enum):
    ARBITRAGEUR = "arbitrageur"
    FUNDAMENTAL_BUY = "fundamental_buy"
    FUNDAMENTAL_SELL = "fundamental_sell"
    NOISE = "noise"


@dataclass(frozen=True)
class FeeSchedule:
    """Proportional fees as decimal fractions.

    ``eta0`` is the CEX trading cost paid by fundamental traders, ``eta1`` the AMM
    fee, ``etaA`` the CEX cost faced by arbitrageurs (defaults to ``eta0``) and
    ``etaH`` the LP's hedging cost on the CEX.
    """

    eta0: float
    eta1: float
    etaA: float | None = None
    etaH: float = 0.0

    def __post_init__(self):
        if self.etaA is None:
            object.__setattr__(self, "etaA", self.eta0)
        for name in ("eta0", "eta1", "etaA", "etaH"):
            value = getattr(self, name)
            if not (math.isfinite(value) and 0.0 <= value < 1.0):
                raise ValueError(f"{name} must lie in [0, 1), got {value!r}")

    @classmethod
    def from_bps(cls, eta0, eta1, etaA=None, etaH=0.0) -> "FeeSchedule":
        return cls(bps(eta0), bps(eta1), None if etaA is None else bps(etaA), bps(etaH))


@dataclass(frozen=True)
class PoolState:
    reserve_x: float
    reserve_y: float
    fees_accrued_x: float = 0.0

    def __post_init__(self):
        if not (self.reserve_x > 0 and self.reserve_y > 0):
            raise ValueError("reserves must be strictly positive")
        if not (math.isfinite(self.reserve_x) and math.isfinite(self.reserve_y)):
            raise ValueError("reserves must be finite")

    @property
    def k(self) -> float:
        return self.reserve_x * self.reserve_y


@dataclass(frozen=True)
class RegionBounds:
    """Price-ratio thresholds (AMM price over CEX price)."""

    buy_bound: float
    sell_bound: float
    arb_low: float
    arb_high: float
    profit_low: float
    profit_high: float

    @property
    def buysell_nonempty(self) -> bool:
        return self.sell_bound < self.buy_bound


@dataclass(frozen=True)
class TradeFill:
    delta_y: float
    cash_in_x: float
    fee_x: float
    trader_class: TraderClass


def marginal_price(pool: PoolState) -> float:
    return pool.reserve_x / pool.reserve_y


def apply_trade(pool: PoolState, delta_y: float, fees: FeeSchedule,
                trader_class: TraderClass = TraderClass.FUNDAMENTAL_BUY) -> tuple[PoolState, TradeFill]:
    """Execute ``delta_y`` (positive buys Y from the pool) against the pool.

    The fee is paid into a separate account, so the reserve product is unchanged.
    """
    if not math.isfinite(delta_y):
        raise ValueError(f"trade size must be finite, got {delta_y!r}")
    x, y = pool.reserve_x, pool.reserve_y
    if delta_y >= y:
        raise ValueError(f"trade of {delta_y} would drain reserve_y={y}")
    if delta_y == 0:
        return pool, TradeFill(0.0, 0.0, 0.0, TraderClass(trader_class))
    y_new = y - delta_y
    cash = delta_y * x / y_new
    x_new = (x * y) / y_new
    fee = fees.eta1 * abs(cash)
    new_pool = replace(pool, reserve_x=x_new, reserve_y=y_new,
                       fees_accrued_x=pool.fees_accrued_x + fee)
    return new_pool, TradeFill(delta_y, cash, fee, TraderClass(trader_class))


def region_bounds(fees: FeeSchedule) -> RegionBounds:
    e0, e1, ea, eh = fees.eta0, fees.eta1, fees.etaA, fees.etaH
    return RegionBounds(
        buy_bound=(1 + e0) / (1 + e1),
        sell_bound=(1 - e0) / (1 - e1),
        arb_low=(1 - ea) / (1 + e1),
        arb_high=(1 + ea) / (1 - e1),
        profit_low=(1 + eh) / (1 + e1),
        profit_high=(1 - eh) / (1 - e1),
    )


def _boundary_size(y, ratio, factor):
    # Y * (1 - sqrt(ratio * factor)); expm1 keeps precision when the root is near 1
    return -y * np.expm1(0.5 * np.log(ratio * factor))


def _arb_size(x, y, cex_price, eta1, etaA):
    ratio = (x / y) / cex_price
    sell = _boundary_size(y, ratio, (1 - eta1) / (1 + etaA))
    buy = _boundary_size(y, ratio, (1 + eta1) / (1 - etaA))
    return np.minimum(sell, 0.0) + np.maximum(buy, 0.0)


def _buy_size(x, y, cex_price, eta0, eta1, demand):
    cap = _boundary_size(y, (x / y) / cex_price, (1 + eta1) / (1 + eta0))
    return np.maximum(np.minimum(demand, cap), 0.0)


def _sell_size(x, y, cex_price, eta0, eta1, demand):
    cap = _boundary_size(y, (x / y) / cex_price, (1 - eta1) / (1 - eta0))
    return np.minimum(np.maximum(demand, cap), 0.0)


def _routed_size(x, y, cex_price, is_buy, eta0, eta1, d_buy, d_sell):
    """Buy or sell routed size per element, chosen by the boolean ``is_buy``."""
    factor = np.where(is_buy, (1 + eta1) / (1 + eta0), (1 - eta1) / (1 - eta0))
    cap = _boundary_size(y, (x / y) / cex_price, factor)
    buy = np.maximum(np.minimum(d_buy, cap), 0.0)
    sell = np.minimum(np.maximum(d_sell, cap), 0.0)
    return np.where(is_buy, buy, sell)


def arb_trade_size(pool: PoolState, cex_price: float, fees: FeeSchedule) -> float:
    """Profit-maximising arbitrage quantity on the DEX (negative sells Y to the pool)."""
    return float(_arb_size(pool.reserve_x, pool.reserve_y, cex_price, fees.eta1, fees.etaA))


def routed_buy_size(pool: PoolState, cex_price: float, fees: FeeSchedule, demand: float) -> float:
    """Part of a buy order of ``demand`` Y that an optimal router sends to the DEX."""
    if not demand > 0:
        raise ValueError("buy demand must be positive")
    return float(_buy_size(pool.reserve_x, pool.reserve_y, cex_price, fees.eta0, fees.eta1, demand))


def routed_sell_size(pool: PoolState, cex_price: float, fees: FeeSchedule, demand: float) -> float:
    if not demand < 0:
        raise ValueError("sell demand must be negative")
    return float(_sell_size(pool.reserve_x, pool.reserve_y, cex_price, fees.eta0, fees.eta1, demand))


def marginal_lp_pnl(delta_y: float, cex_price: float, amm_price: float, fees: FeeSchedule) -> float:
    """First-order change in hedged LP PnL from a small DEX trade of ``delta_y``."""
    ratio = amm_price / cex_price
    if delta_y > 0:
        return delta_y * cex_price * ((1 + fees.eta1) * ratio - (1 + fees.etaH))
    if delta_y < 0:
        return delta_y * cex_price * ((1 - fees.eta1) * ratio - (1 - fees.etaH))
    return 0.0
