"""Ensemble summaries: expected PnL/fees/volume, region occupancy, histograms."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .engine import CLASSES, Ensemble, PathResult
from .market import RegionBounds, region_bounds

__all__ = [
    "Histogram",
    "SummaryStats",
    "histogram",
    "log_ratio_histogram",
    "occupancy",
    "pnl_histogram",
    "summarize",
]


@dataclass
class SummaryStats:
    e_profit: float
    e_fees: float
    e_volume: float
    p_profit: float
    p_buysell: float
    p_arb: float
    stderr_profit: float
    e_unhedged: float
    e_volume_fundamental: float
    n_paths: int
    volume_by_class: dict = field(default_factory=dict)
    fees_by_class: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        out = asdict(self)
        for key in ("volume_by_class", "fees_by_class"):
            for cls, value in out.pop(key).items():
                out[f"{key.split('_by_')[0]}_{cls}"] = value
        return out


@dataclass
class Histogram:
    """Uniform-bin histogram. ``sample_sum`` keeps the exact mean of binned data."""

    edges: np.ndarray
    counts: np.ndarray
    sample_sum: float = math.nan

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=float)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.edges.size != self.counts.size + 1:
            raise ValueError("need len(edges) == len(counts) + 1")
        if np.any(np.diff(self.edges) <= 0):
            raise ValueError("bin edges must be strictly increasing")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    def probabilities(self) -> np.ndarray:
        return self.counts / self.total

    def mean(self) -> float:
        if math.isfinite(self.sample_sum):
            return self.sample_sum / self.total
        return float(np.dot(self.probabilities(), self.centers))

    def std(self) -> float:
        p = self.probabilities()
        c = self.centers
        mu = float(np.dot(p, c))
        return math.sqrt(float(np.dot(p, (c - mu) ** 2)))

    def merge(self, other: "Histogram") -> "Histogram":
        if not np.array_equal(self.edges, other.edges):
            raise ValueError("cannot merge histograms with different bins")
        return Histogram(self.edges, self.counts + other.counts, self.sample_sum + other.sample_sum)

    def rows(self):
        """``(bin_left, bin_right, count)`` tuples."""
        return list(zip(self.edges[:-1].tolist(), self.edges[1:].tolist(), self.counts.tolist()))


def histogram(samples, n_bins: int, value_range: tuple[float, float]) -> Histogram:
    """Bin ``samples`` uniformly; values outside the range land in the edge bins."""
    if n_bins < 2:
        raise ValueError("n_bins must be >= 2")
    lo, hi = value_range
    if not (math.isfinite(lo) and math.isfinite(hi) and hi > lo):
        raise ValueError(f"degenerate histogram range {value_range!r}")
    samples = np.asarray(samples, dtype=float).ravel()
    edges = np.linspace(lo, hi, n_bins + 1)
    idx = np.clip(np.searchsorted(edges, samples, side="right") - 1, 0, n_bins - 1)
    return Histogram(edges, np.bincount(idx, minlength=n_bins), float(samples.sum()))


def occupancy(ratios, bounds: RegionBounds) -> dict:
    """Fractions of price-ratio samples in each region, using ``[low, high)`` membership."""
    r = np.asarray(ratios, dtype=float).ravel()
    inside = np.mean((r >= bounds.arb_low) & (r < bounds.arb_high))
    return {
        "p_profit": float(np.mean((r >= bounds.profit_low) & (r < bounds.profit_high))),
        "p_buysell": float(np.mean((r >= bounds.sell_bound) & (r < bounds.buy_bound))),
        "p_arb": float(1.0 - inside),
    }


def summarize(results: Ensemble, bounds: RegionBounds | None = None) -> SummaryStats:
    """Means over paths, occupancy over all (path, step) pre-trade samples.

    Occupancy comes from counts collected during the run; passing ``bounds``
    different from the run's own fees requires the ensemble to carry its log ratios.
    """
    if results.n_paths == 0:
        raise ValueError("empty ensemble")
    own = region_bounds(results.config.fees)
    if bounds is None or bounds == own:
        n_samples = results.n_paths * results.config.n_steps
        occ = {
            "p_profit": results.region_counts["profit"].sum() / n_samples,
            "p_buysell": results.region_counts["buysell"].sum() / n_samples,
            "p_arb": 1.0 - results.region_counts["inside_arb"].sum() / n_samples,
        }
    elif results.log_ratios is not None:
        occ = occupancy(np.exp(results.log_ratios), bounds)
    else:
        raise ValueError("foreign bounds need an ensemble run with keep_log_ratios=True")

    m = results.n_paths
    hedged = results.hedged_pnl
    stderr = float(hedged.std(ddof=1) / math.sqrt(m)) if m > 1 else math.nan
    volume = {c: float(results.volume[c].mean()) for c in CLASSES}
    fees = {c: float(results.fees[c].mean()) for c in CLASSES}
    return SummaryStats(
        e_profit=float(hedged.mean()),
        e_fees=float(results.total_fees.mean()),
        e_volume=float(results.total_volume.mean()),
        p_profit=float(occ["p_profit"]),
        p_buysell=float(occ["p_buysell"]),
        p_arb=float(occ["p_arb"]),
        stderr_profit=stderr,
        e_unhedged=float(results.unhedged_pnl.mean()),
        e_volume_fundamental=volume["fundamental_buy"] + volume["fundamental_sell"],
        n_paths=m,
        volume_by_class=volume,
        fees_by_class=fees,
    )


def default_ratio_range(bounds: RegionBounds, scale: float = 1.5) -> tuple[float, float]:
    half = max(abs(math.log(bounds.arb_low)), abs(math.log(bounds.arb_high)))
    half = half if half > 0 else 1e-3
    return -scale * half, scale * half


def _log_ratio_samples(results):
    if isinstance(results, Ensemble):
        if results.log_ratios is None:
            raise ValueError("ensemble was run without keep_log_ratios=True")
        return results.log_ratios
    if isinstance(results, PathResult):
        return results.log_ratios
    if isinstance(results, (list, tuple)) and results and isinstance(results[0], PathResult):
        return np.concatenate([r.log_ratios for r in results])
    return np.asarray(results, dtype=float)


def log_ratio_histogram(results, n_bins: int = 201, value_range=None) -> Histogram:
    """Histogram of pre-trade log price ratios.

    ``results`` is an ensemble kept with log ratios, path results, or raw samples.
    The default range spans 1.5 times the no-arbitrage half-width (needs an ensemble).
    """
    if value_range is None:
        if not isinstance(results, Ensemble):
            raise ValueError("value_range is required unless an ensemble is given")
        value_range = default_ratio_range(region_bounds(results.config.fees))
    if isinstance(results, Ensemble) and results.log_ratios is None and results.ratio_counts is not None:
        edges = np.linspace(value_range[0], value_range[1], n_bins + 1)
        if np.allclose(edges, results.ratio_edges, rtol=0, atol=1e-15):
            return Histogram(results.ratio_edges, results.ratio_counts)
    return histogram(_log_ratio_samples(results), n_bins, value_range)


def pnl_histogram(results, n_bins: int = 50, value_range=None) -> Histogram:
    """Histogram of terminal hedged PnL."""
    if isinstance(results, Ensemble):
        values = results.hedged_pnl
    else:
        values = np.asarray([r.hedged_pnl[-1] for r in results], dtype=float)
    if values.size == 0:
        raise ValueError("no PnL values")
    if value_range is None:
        lo, hi = float(values.min()), float(values.max())
        if hi <= lo:
            lo, hi = lo - 0.5, lo + 0.5
            n_bins = max(n_bins, 2)
        value_range = (lo, hi)
    return histogram(values, n_bins, value_range)
