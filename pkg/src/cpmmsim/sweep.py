"""Parameter sweeps, optimal AMM fees, regret, and the infinite-demand closed form."""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .engine import SimConfig, run_batch
from .prices import GBM
from .stats import SummaryStats, summarize

__all__ = [
    "HALT",
    "OptimalFeeResult",
    "PnlSurface",
    "SweepGrid",
    "approx_optimal_fee",
    "infinite_demand_revenue",
    "optimal_fee",
    "regret",
    "sweep",
]

HALT = math.inf


@dataclass(frozen=True)
class SweepGrid:
    """Axes to sweep. ``None`` keeps the base config's value.

    ``total_demand`` is buy plus sell demand per day, split evenly between the two.
    """

    eta1: Sequence[float] | None = None
    sigma: Sequence[float] | None = None
    total_demand: Sequence[float] | None = None
    eta0: Sequence[float] | None = None
    n_paths: int = 5000

    def __post_init__(self):
        for name in ("eta1", "sigma", "total_demand", "eta0"):
            axis = getattr(self, name)
            if axis is None:
                continue
            axis = tuple(float(v) for v in axis)
            if not axis:
                raise ValueError(f"axis {name} is empty")
            if any(b <= a for a, b in zip(axis, axis[1:])):
                raise ValueError(f"axis {name} must be strictly increasing")
            object.__setattr__(self, name, axis)
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")

    def resolved(self, base: SimConfig) -> dict:
        if not isinstance(base.price_model, GBM):
            if self.sigma is not None:
                raise ValueError("a sigma axis needs a GBM base price model")
        sigma = self.sigma or (base.price_model.sigma if isinstance(base.price_model, GBM) else math.nan,)
        return {
            "eta0": self.eta0 or (base.fees.eta0,),
            "sigma": sigma,
            "total_demand": self.total_demand or (base.demand_buy - base.demand_sell,),
            "eta1": self.eta1 or (base.fees.eta1,),
        }


def cell_config(base: SimConfig, eta0, sigma, total_demand, eta1) -> SimConfig:
    cfg = base.with_fees(eta0=eta0, eta1=eta1, etaA=eta0 if base.fees.etaA == base.fees.eta0 else base.fees.etaA)
    cfg = cfg.with_demand(total_demand / 2)
    if isinstance(base.price_model, GBM) and not math.isnan(sigma):
        cfg = replace(cfg, price_model=GBM(sigma, base.price_model.mu))
    return cfg


@dataclass
class SurfaceCell:
    eta0: float
    sigma: float
    total_demand: float
    eta1: float
    stats: SummaryStats

    @property
    def e_profit(self) -> float:
        return self.stats.e_profit

    @property
    def stderr(self) -> float:
        return self.stats.stderr_profit

    def key(self):
        return (self.eta0, self.sigma, self.total_demand, self.eta1)

    def row(self) -> dict:
        return {"eta0": self.eta0, "sigma": self.sigma, "total_demand": self.total_demand,
                "eta1": self.eta1, **self.stats.as_dict()}


@dataclass
class PnlSurface:
    axes: dict
    cells: dict = field(default_factory=dict)

    def __post_init__(self):
        expected = len(list(itertools.product(*self.axes.values())))
        if self.cells and len(self.cells) != expected:
            raise ValueError(f"surface has {len(self.cells)} cells, grid needs {expected}")

    def __getitem__(self, key) -> SurfaceCell:
        return self.cells[tuple(key)]

    def conditions(self):
        """All (eta0, sigma, total_demand) triples."""
        return list(itertools.product(self.axes["eta0"], self.axes["sigma"], self.axes["total_demand"]))

    def profile(self, condition) -> tuple[np.ndarray, np.ndarray]:
        eta1 = np.asarray(self.axes["eta1"])
        profit = np.asarray([self.cells[(*condition, e)].e_profit for e in eta1])
        return eta1, profit

    def rows(self) -> list[dict]:
        return [self.cells[k].row() for k in sorted(self.cells)]


@dataclass(frozen=True)
class OptimalFeeResult:
    eta0: float
    sigma: float
    total_demand: float
    eta1: float
    e_profit: float

    @property
    def halted(self) -> bool:
        return self.eta1 == HALT


def _group_key(eta0, sigma, demand):
    return json.dumps([eta0, sigma, demand])


def sweep(grid: SweepGrid, base_config: SimConfig, *, workers=None, manifest: Path | None = None,
          progress=None) -> PnlSurface:
    """Simulate every grid cell on common random numbers.

    All cells reuse the base seed, so cells differing only in ``eta1`` (or any other
    axis) see the same price draws and coin flips. With ``manifest`` set, each
    finished condition is appended there as a JSON line and skipped on a rerun.
    """
    axes = grid.resolved(base_config)
    done = {}
    if manifest is not None and Path(manifest).exists():
        for line in Path(manifest).read_text().splitlines():
            if line.strip():
                entry = json.loads(line)
                done[entry["group"]] = entry["cells"]

    cells = {}
    for eta0, sigma, demand in itertools.product(axes["eta0"], axes["sigma"], axes["total_demand"]):
        key = _group_key(eta0, sigma, demand)
        if key in done:
            for rec in done[key]:
                stats = SummaryStats(**rec["stats"])
                cells[(eta0, sigma, demand, rec["eta1"])] = SurfaceCell(eta0, sigma, demand, rec["eta1"], stats)
            continue
        configs = [cell_config(base_config, eta0, sigma, demand, e) for e in axes["eta1"]]
        ensembles = run_batch(configs, grid.n_paths, workers=workers)
        group = []
        for e1, ens in zip(axes["eta1"], ensembles):
            stats = summarize(ens)
            cells[(eta0, sigma, demand, e1)] = SurfaceCell(eta0, sigma, demand, e1, stats)
            group.append({"eta1": e1, "stats": stats.__dict__})
        if manifest is not None:
            with open(manifest, "a") as fh:
                fh.write(json.dumps({"group": key, "cells": group}) + "\n")
        if progress is not None:
            progress(eta0, sigma, demand)
    return PnlSurface(axes, cells)


def optimal_fee(surface: PnlSurface, cell) -> OptimalFeeResult:
    """Best ``eta1`` on the grid for one (eta0, sigma, total_demand) condition.

    Returns ``HALT`` (+inf) when expected PnL is negative for every fee, since then
    the LP prefers to stop trading. Ties go to the larger fee.
    """
    eta1, profit = surface.profile(cell)
    best = float(profit.max())
    if best < 0:
        return OptimalFeeResult(*cell, HALT, 0.0)
    idx = int(np.flatnonzero(profit == best)[-1])
    return OptimalFeeResult(*cell, float(eta1[idx]), best)


def regret(surface: PnlSurface, fixed_eta1: float) -> dict:
    """Shortfall of a constant fee against the per-condition optimum (0 when halting)."""
    if not any(math.isclose(fixed_eta1, e, rel_tol=0, abs_tol=1e-12) for e in surface.axes["eta1"]):
        raise ValueError(f"eta1={fixed_eta1} is not on the surface's eta1 axis")
    fixed = min(surface.axes["eta1"], key=lambda e: abs(e - fixed_eta1))
    out = {}
    for cond in surface.conditions():
        best = optimal_fee(surface, cond).e_profit
        out[cond] = max(best - surface[(*cond, fixed)].e_profit, 0.0)
    return out


def infinite_demand_revenue(eta0: float, eta1: float, x0: float):
    """Per-period fee revenue when demand saturates both boundaries and sigma = 0.

    Works elementwise on arrays.
    """
    eta0 = np.asarray(eta0, dtype=float)
    eta1 = np.asarray(eta1, dtype=float)
    up = np.sqrt((1 + eta0) * (1 - eta1) / ((1 + eta1) * (1 - eta0)))
    down = np.sqrt((1 - eta0) * (1 + eta1) / ((1 - eta1) * (1 + eta0)))
    out = 0.75 * x0 * eta1 * (up - down)
    return float(out) if out.ndim == 0 else out


def approx_optimal_fee(eta0: float, x0: float = 1.0) -> tuple[float, float]:
    """Maximiser of :func:`infinite_demand_revenue` over ``(0, eta0)`` and ``eta0 / 2``."""
    if eta0 < 0:
        raise ValueError("eta0 must be nonnegative")
    if eta0 == 0:
        return 0.0, 0.0
    res = minimize_scalar(lambda e: -infinite_demand_revenue(eta0, e, x0), bounds=(0.0, eta0),
                          method="bounded", options={"xatol": 1e-10})
    return float(res.x), eta0 / 2
