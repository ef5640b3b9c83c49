"""
A day of trading, many times over
=================================

Run the baseline market for a few thousand simulated days and look at what the
liquidity provider earns, with and without hedging its ETH inventory on the CEX.
"""
import numpy as np

from cpmmsim import SimConfig, log_ratio_histogram, pnl_histogram, run_ensemble, summarize

config = SimConfig()  # 1440 one-minute steps, sigma 4%/sqrt(day), demand 5000 Y/day each way
ens = run_ensemble(config, 2000, keep_log_ratios=True)
stats = summarize(ens)

print(f"expected hedged PnL   {stats.e_profit:10.2f}  (standard error {stats.stderr_profit:.2f})")
print(f"expected unhedged PnL {stats.e_unhedged:10.2f}")
print(f"expected fees         {stats.e_fees:10.2f}")
print(f"expected volume       {stats.e_volume:10.2f} Y")
print(f"time in profit region {stats.p_profit:.2%}, buy-sell region {stats.p_buysell:.2%}, "
      f"outside no-arbitrage band {stats.p_arb:.2%}")

# Hedging removes nearly all of the price risk; the means agree.
print("std hedged / unhedged:", ens.hedged_pnl.std() / ens.unhedged_pnl.std())

# Who pays the fees?
for cls, fee in stats.fees_by_class.items():
    print(f"  {cls:17s} {fee:10.2f}")

# A coarse text histogram of the pre-trade log price ratio.
h = log_ratio_histogram(ens, 31)
scale = 60 / h.counts.max()
for left, _, count in h.rows():
    print(f"{left:+.5f} {'#' * int(count * scale)}")

# And of terminal hedged PnL.
p = pnl_histogram(ens, 12)
print(np.column_stack([p.centers.round(0), p.counts]))
