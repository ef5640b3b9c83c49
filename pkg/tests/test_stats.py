import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cpmmsim.engine import SimConfig, run_batch, run_ensemble
from cpmmsim.market import FeeSchedule, region_bounds
from cpmmsim.prices import GBM
from cpmmsim.stats import (
    Histogram,
    histogram,
    log_ratio_histogram,
    occupancy,
    pnl_histogram,
    summarize,
)

SHORT = SimConfig(n_steps=360, horizon=360 / 1440)


def test_histogram_single_sample():
    h = histogram([0.0], 10, (-1.0, 1.0))
    assert h.total == 1 and np.count_nonzero(h.counts) == 1
    assert h.mean() == 0.0


def test_histogram_clips_tails_into_edge_bins():
    h = histogram([-5.0, 0.1, 5.0], 4, (-1.0, 1.0))
    assert h.counts.tolist() == [1, 0, 1, 1]


def test_histogram_validation():
    with pytest.raises(ValueError):
        histogram([1.0], 1, (0, 1))
    with pytest.raises(ValueError):
        histogram([1.0], 5, (1, 1))
    with pytest.raises(ValueError):
        Histogram([0, 1, 2], [1])


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=200), st.integers(2, 50))
def test_histogram_conserves_mass(samples, n_bins):
    h = histogram(samples, n_bins, (-3.0, 3.0))
    assert h.total == len(samples)
    assert h.probabilities().sum() == pytest.approx(1.0)
    assert h.mean() == pytest.approx(np.mean(samples), abs=1e-9)


def test_histogram_merge():
    a = histogram([0.1, 0.2], 5, (0, 1))
    b = histogram([0.9], 5, (0, 1))
    m = a.merge(b)
    assert m.total == 3 and m.mean() == pytest.approx(0.4)
    with pytest.raises(ValueError):
        a.merge(histogram([0.1], 4, (0, 1)))


def test_occupancy_uses_closed_open_intervals():
    b = region_bounds(FeeSchedule(0.0020, 0.0015))
    occ = occupancy([b.profit_low, b.profit_high, 1.0, b.arb_high], b)
    assert occ["p_profit"] == 0.5
    assert occ["p_arb"] == 0.25


def test_summarize_matches_direct_occupancy():
    ens = run_ensemble(SHORT, 40, keep_log_ratios=True)
    stats = summarize(ens)
    direct = occupancy(np.exp(ens.log_ratios), region_bounds(SHORT.fees))
    assert stats.p_profit == pytest.approx(direct["p_profit"], abs=1e-12)
    assert stats.p_buysell == pytest.approx(direct["p_buysell"], abs=1e-12)
    assert stats.p_arb == pytest.approx(direct["p_arb"], abs=1e-12)
    assert stats.e_profit == pytest.approx(ens.hedged_pnl.mean())
    assert stats.stderr_profit == pytest.approx(ens.hedged_pnl.std(ddof=1) / math.sqrt(40))
    assert stats.n_paths == 40
    row = stats.as_dict()
    assert {"e_profit", "e_fees", "e_volume", "p_profit", "p_buysell", "p_arb"} <= set(row)
    assert "volume_noise" in row and "fees_arbitrageur" in row


def test_summarize_with_foreign_bounds_needs_log_ratios():
    ens = run_ensemble(SHORT, 5)
    other = region_bounds(FeeSchedule(0.003, 0.001))
    with pytest.raises(ValueError):
        summarize(ens, other)
    ens = run_ensemble(SHORT, 5, keep_log_ratios=True)
    assert 0 <= summarize(ens, other).p_buysell <= 1


def test_buysell_probability_zero_when_fee_exceeds_cex_cost():
    ens = run_ensemble(SHORT.with_fees(eta1=0.0020), 10)
    assert summarize(ens).p_buysell == 0.0


def test_zero_vol_ratio_histogram_lies_in_buysell_band():
    cfg = replace(SHORT, price_model=GBM(0.0))
    ens = run_ensemble(cfg, 3, keep_log_ratios=True)
    b = region_bounds(cfg.fees)
    h = log_ratio_histogram(ens, 201)
    support = h.centers[h.counts > 0]
    width = h.edges[1] - h.edges[0]
    assert support.min() >= math.log(b.sell_bound) - width
    assert support.max() <= math.log(b.buy_bound) + width


def test_ratio_histogram_spreads_with_volatility():
    sigmas = [0.025, 0.0325, 0.04, 0.0475, 0.055]
    batch = run_batch([replace(SHORT, price_model=GBM(s)) for s in sigmas], 100, keep_log_ratios=True)
    rng = (-0.006, 0.006)
    spreads = [log_ratio_histogram(e, 201, rng).std() for e in batch]
    assert all(b > a for a, b in zip(spreads, spreads[1:]))


def test_in_kernel_histogram_matches_samples():
    edges = np.linspace(-0.005, 0.005, 41)
    ens = run_ensemble(SHORT, 20, keep_log_ratios=True, ratio_edges=edges)
    h = histogram(ens.log_ratios, 40, (-0.005, 0.005))
    assert np.array_equal(h.counts, ens.ratio_counts)
    assert log_ratio_histogram(ens, 40, (-0.005, 0.005)).total == 20 * SHORT.n_steps


def test_pnl_histogram_constant_is_single_bin():
    dead = replace(SHORT, price_model=GBM(0.0)).with_demand(0.0)
    h = pnl_histogram(run_ensemble(dead, 5))
    assert np.count_nonzero(h.counts) == 1 and h.total == 5


def test_pnl_means_are_nonmonotone_in_fee():
    cfgs = [SimConfig().with_fees(eta1=e) for e in (0.0005, 0.0015, 0.0025)]
    means = [pnl_histogram(e).mean() for e in run_batch(cfgs, 300)]
    assert means[0] < means[1] > means[2]
