"""
Pool mechanics and price-ratio regions
======================================

A single constant-product pool, one trade at a time, and the thresholds on the
price ratio (pool price over CEX price) that decide who trades where.
"""
from cpmmsim import FeeSchedule, PoolState, apply_trade, arb_trade_size, marginal_price, region_bounds
from cpmmsim import routed_buy_size

fees = FeeSchedule.from_bps(20, 15)   # CEX cost 20 bps, AMM fee 15 bps
pool = PoolState(3e7, 1e4)            # 3e7 X (USDC) against 1e4 Y (ETH)
print("pool price", marginal_price(pool))

# Buying 100 Y moves the price up; the fee goes to a separate account.
after, fill = apply_trade(pool, 100.0, fees)
print(f"after buying 100 Y: price {marginal_price(after):.2f}, paid {fill.cash_in_x:.2f} X + fee {fill.fee_x:.2f}")
print("product preserved:", after.reserve_x * after.reserve_y, "vs", pool.k)

# The thresholds, as ratios around 1.
b = region_bounds(fees)
for name, value in b.__dict__.items():
    print(f"  {name:12s} {value:.6f}")
print("buyers and sellers can both prefer the pool:", b.buysell_nonempty)

# CEX drops to 2950: the pool is now too expensive and an arbitrageur sells Y into it
# until the ratio sits exactly on the upper no-arbitrage boundary.
delta = arb_trade_size(pool, 2950.0, fees)
moved, _ = apply_trade(pool, delta, fees)
print(f"arbitrage trade {delta:.3f} Y, ratio after {marginal_price(moved) / 2950:.7f} (bound {b.arb_high:.7f})")

# A buyer wanting 3.47 Y (one minute of 5000 Y/day demand) only sends part of it to the
# pool: past the buy threshold the CEX is cheaper.
print("routed to pool:", routed_buy_size(pool, 3000.0, fees, 5000 / 1440))
