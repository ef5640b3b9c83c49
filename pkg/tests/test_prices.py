import math

import numpy as np
import pytest

from cpmmsim.prices import (
    GBM,
    ExpOU,
    PricePath,
    coin_flips,
    load_historical,
    normal_increments,
    path_rng,
    sample_exp_ou,
    sample_gbm,
    simulate_log_prices,
)


def test_zero_vol_gbm_is_constant():
    p = sample_gbm(3000.0, 0.0)
    assert p.n_steps == 1440 and len(p) == 1441
    assert np.all(p.values == 3000.0)


def test_drift_only_gbm_is_exponential():
    p = sample_gbm(3000.0, 0.0, mu=0.1, n_steps=100, dt=0.01)
    t = np.arange(101) * 0.01
    np.testing.assert_allclose(p.values, 3000.0 * np.exp(0.1 * t), rtol=1e-12)


def test_gbm_terminal_mean_is_martingale():
    n_paths, n_steps, dt = 100_000, 1440, 1 / 1440
    terminal = []
    for start in range(0, n_paths, 10_000):
        z = normal_increments(7, np.arange(start, start + 10_000), n_steps)
        terminal.append(simulate_log_prices(GBM(0.04), 3000.0, z, dt)[:, -1])
    s_t = np.concatenate(terminal)
    se = s_t.std(ddof=1) / math.sqrt(n_paths)
    assert abs(s_t.mean() - 3000.0) < 3 * se


def test_gbm_log_increment_moments():
    z = normal_increments(3, np.arange(2000), 1440)
    logs = np.diff(np.log(simulate_log_prices(GBM(0.04), 3000.0, z, 1 / 1440)), axis=1)
    assert logs.std() == pytest.approx(0.04 / math.sqrt(1440), rel=0.01)


def test_ou_without_reversion_matches_compensated_gbm():
    z = normal_increments(11, np.arange(5), 500)
    ou = simulate_log_prices(ExpOU(0.0, 8.0, 0.04), 3000.0, z, 1 / 1440)
    gbm = simulate_log_prices(GBM(0.04, mu=0.5 * 0.04**2), 3000.0, z, 1 / 1440)
    np.testing.assert_allclose(ou, gbm, rtol=1e-12)


def test_ou_fixed_point_is_constant():
    p = sample_exp_ou(3000.0, kappa=5.0, theta=math.log(3000.0), sigma=0.0)
    np.testing.assert_allclose(p.values, 3000.0, rtol=1e-14)


def test_ou_reversion_reduces_terminal_dispersion():
    z = normal_increments(5, np.arange(4000), 1440)
    theta = math.log(3000.0)
    free = np.log(simulate_log_prices(ExpOU(0.0, theta, 0.04), 3000.0, z, 1 / 1440)[:, -1])
    tied = np.log(simulate_log_prices(ExpOU(50.0, theta, 0.04), 3000.0, z, 1 / 1440)[:, -1])
    assert tied.std() < free.std()
    # stationary OU std is sigma / sqrt(2 kappa)
    assert tied.std() == pytest.approx(0.04 / math.sqrt(100.0), rel=0.1)


def test_ou_rejects_unstable_step():
    with pytest.raises(ValueError):
        sample_exp_ou(3000.0, kappa=2000.0, theta=8.0, sigma=0.04)


def test_model_validation():
    with pytest.raises(ValueError):
        GBM(-0.1)
    with pytest.raises(ValueError):
        GBM(math.nan)
    with pytest.raises(ValueError):
        ExpOU(-1.0, 0.0, 0.1)
    with pytest.raises(ValueError):
        PricePath(np.array([1.0, -2.0]), 1.0)


def test_streams_are_keyed_and_independent():
    a = path_rng(1, 0).standard_normal(5)
    assert np.array_equal(a, path_rng(1, 0).standard_normal(5))
    assert not np.array_equal(a, path_rng(1, 1).standard_normal(5))
    assert not np.array_equal(a, path_rng(2, 0).standard_normal(5))
    # selecting a subset of paths does not change any path's draws
    full = normal_increments(9, np.arange(10), 20)
    np.testing.assert_array_equal(normal_increments(9, [3, 7], 20), full[[3, 7]])


def test_coin_flips_are_fair():
    flips = coin_flips(4, np.arange(100), 1000)
    assert flips.dtype == bool
    assert abs(flips.mean() - 0.5) < 4 * 0.5 / math.sqrt(flips.size)


def _write(tmp_path, text, name="p.csv"):
    f = tmp_path / name
    f.write_text(text)
    return f


def test_load_minimal_file(tmp_path):
    f = _write(tmp_path, "timestamp,price\n2025-01-01T00:00:00Z,3000\n2025-01-01T00:01:00Z,3010\n")
    p = load_historical(f)
    np.testing.assert_array_equal(p.values, [3000.0, 3010.0])
    assert p.dt == pytest.approx(1 / 1440)


def test_load_forward_fills_gap(tmp_path):
    base = 1735689600000  # 2025-01-01 in milliseconds
    rows = [(base, 3000), (base + 60_000, 3001), (base + 180_000, 3003), (base + 240_000, 3004)]
    f = _write(tmp_path, "ts,close\n" + "".join(f"{t},{v}\n" for t, v in rows))
    p = load_historical(f)
    np.testing.assert_array_equal(p.values, [3000, 3001, 3001, 3003, 3004])
    assert p.times[0] == np.datetime64("2025-01-01T00:00")


@pytest.mark.parametrize("scale", [1, 1000, 1_000_000])
def test_numeric_timestamp_units(tmp_path, scale):
    base = 1735689600
    f = _write(tmp_path, "t,p\n" + "".join(f"{(base + 60 * i) * scale},{3000 + i}\n" for i in range(3)))
    p = load_historical(f)
    assert p.times[0] == np.datetime64("2025-01-01T00:00")
    assert p.dt == pytest.approx(1 / 1440)


@pytest.mark.parametrize("body", [
    "t,p\n",
    "t,p\n2025-01-01T00:00:00Z,3000\n",
    "t,p\n2025-01-01T00:00:00Z,3000\n2025-01-01T00:01:00Z,-1\n",
    "t,p\n2025-01-01T00:01:00Z,3000\n2025-01-01T00:00:00Z,3001\n",
])
def test_load_rejects_bad_files(tmp_path, body):
    with pytest.raises(ValueError):
        load_historical(_write(tmp_path, body))


def test_month_of_minutes_has_expected_length(tmp_path):
    start = np.datetime64("2025-01-01T00:00")
    times = start + np.arange(31 * 1440) * np.timedelta64(1, "m")
    lines = [f"{t}Z,{3000 + (i % 7)}" for i, t in enumerate(times.astype(str))]
    p = load_historical(_write(tmp_path, "t,p\n" + "\n".join(lines) + "\n"))
    assert len(p) == 44_640
