"""
Which AMM fee should the pool charge?
=====================================

Sweep the AMM fee against volatility, pick the best fee per volatility, and
measure how much a single fixed fee gives up. All cells share the same random
draws, so differences between fees are not Monte Carlo noise in the prices.
"""
from cpmmsim import SimConfig, SweepGrid, approx_optimal_fee, bps, optimal_fee, regret, sweep
from cpmmsim import infinite_demand_revenue

grid = SweepGrid(
    eta1=[bps(e) for e in range(2, 31, 2)],
    sigma=[0.02, 0.04, 0.06],
    n_paths=300,
)
surface = sweep(grid, SimConfig(), progress=lambda e0, s, d: print(f"  finished sigma={s}"))

for cond in surface.conditions():
    best = optimal_fee(surface, cond)
    label = "halt" if best.halted else f"{best.eta1 * 1e4:g} bps"
    print(f"sigma {cond[1]:.2f}: best fee {label}, E[profit] {best.e_profit:.0f}")

for cond, shortfall in regret(surface, bps(16)).items():
    print(f"regret of a fixed 16 bps fee at sigma {cond[1]:.2f}: {shortfall:.0f}")

# Without volatility and with unlimited demand the fee revenue has a closed form,
# maximised at roughly half the CEX cost.
best, half = approx_optimal_fee(bps(20), x0=3e7)
print(f"closed-form optimum {best * 1e4:.3f} bps (half the CEX cost: {half * 1e4:g} bps)")
print(f"revenue per step at that fee: {infinite_demand_revenue(bps(20), best, 3e7):.2f}")
