"""CEX price paths: simulated (GBM, exponential OU) or loaded from CSV.

Time is measured in days; ``sigma`` is quoted per square-root day.

Random draws come from counter-based Philox streams keyed on ``(seed, path)``, so
path ``j`` is the same no matter how the ensemble is split across workers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
import pandas as pd

__all__ = [
    "GBM",
    "ExpOU",
    "Historical",
    "PriceModel",
    "PricePath",
    "coin_flips",
    "load_historical",
    "normal_increments",
    "path_rng",
    "sample_exp_ou",
    "sample_gbm",
    "simulate_log_prices",
]

_PRICE_STREAM = 0
_FLIP_STREAM = 1


@dataclass(frozen=True)
class GBM:
    sigma: float
    mu: float = 0.0

    def __post_init__(self):
        _check_finite(sigma=self.sigma, mu=self.mu)
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")


@dataclass(frozen=True)
class ExpOU:
    kappa: float
    theta: float
    sigma: float

    def __post_init__(self):
        _check_finite(kappa=self.kappa, theta=self.theta, sigma=self.sigma)
        if self.sigma < 0 or self.kappa < 0:
            raise ValueError("sigma and kappa must be nonnegative")


@dataclass(frozen=True)
class Historical:
    path: "PricePath"


PriceModel = Union[GBM, ExpOU, Historical]


@dataclass(frozen=True)
class PricePath:
    values: np.ndarray
    dt: float
    times: np.ndarray | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1 or values.size < 2:
            raise ValueError("a price path needs at least two points")
        if not np.all(np.isfinite(values)) or np.any(values <= 0):
            raise ValueError("prices must be finite and strictly positive")
        object.__setattr__(self, "values", values)

    @property
    def s0(self) -> float:
        return float(self.values[0])

    @property
    def n_steps(self) -> int:
        return self.values.size - 1

    def __len__(self):
        return self.values.size


def _check_finite(**params):
    for name, value in params.items():
        if not math.isfinite(value):
            raise ValueError(f"{name} must be finite, got {value!r}")


def path_rng(seed: int, path: int, stream: int = _PRICE_STREAM) -> np.random.Generator:
    """Generator for one (seed, path, stream) triple.

    The key fixes (seed, path); the stream index lives in the high counter word,
    so streams never overlap for any realistic number of draws.
    """
    bitgen = np.random.Philox(key=np.array([path, seed], dtype=np.uint64),
                              counter=np.array([0, 0, 0, stream], dtype=np.uint64))
    return np.random.Generator(bitgen)


def normal_increments(seed: int, paths, n_steps: int) -> np.ndarray:
    """Standard normal draws of shape ``(len(paths), n_steps)``."""
    paths = np.atleast_1d(paths)
    out = np.empty((paths.size, n_steps))
    for row, j in enumerate(paths):
        out[row] = path_rng(seed, int(j), _PRICE_STREAM).standard_normal(n_steps)
    return out


def coin_flips(seed: int, paths, n_steps: int) -> np.ndarray:
    """Buyer-first flags, one fair coin per (path, step)."""
    paths = np.atleast_1d(paths)
    out = np.empty((paths.size, n_steps), dtype=bool)
    for row, j in enumerate(paths):
        out[row] = path_rng(seed, int(j), _FLIP_STREAM).random(n_steps) < 0.5
    return out


def simulate_log_prices(model: PriceModel, s0: float, z: np.ndarray, dt: float) -> np.ndarray:
    """Turn normal draws ``z[..., n_steps]`` into prices ``[..., n_steps + 1]``.

    Model parameters may be numpy arrays broadcasting against the leading axes of
    ``z`` (used to evaluate several volatilities on the same draws).
    """
    if isinstance(model, GBM):
        sigma = np.asarray(model.sigma, dtype=float)[..., None]
        mu = np.asarray(model.mu, dtype=float)[..., None]
        steps = (mu - 0.5 * sigma**2) * dt + sigma * math.sqrt(dt) * z
        logs = np.cumsum(steps, axis=-1)
    elif isinstance(model, ExpOU):
        kappa = float(model.kappa)
        if kappa * dt >= 1:
            raise ValueError(f"kappa*dt = {kappa * dt} >= 1 makes the Euler scheme unstable")
        noise = model.sigma * math.sqrt(dt) * z
        ell = np.full(z.shape[:-1], math.log(s0))
        logs = np.empty_like(z)
        for i in range(z.shape[-1]):
            ell = ell + kappa * (model.theta - ell) * dt + noise[..., i]
            logs[..., i] = ell
        logs -= math.log(s0)
    else:
        raise TypeError(f"cannot simulate {type(model).__name__}")
    out = np.empty(logs.shape[:-1] + (logs.shape[-1] + 1,))
    out[..., 0] = s0
    out[..., 1:] = s0 * np.exp(logs)
    return out


def sample_gbm(s0, sigma, mu=0.0, n_steps=1440, dt=1 / 1440, seed=0, path=0) -> PricePath:
    _check_finite(s0=s0, dt=dt)
    if s0 <= 0 or n_steps < 1:
        raise ValueError("need s0 > 0 and n_steps >= 1")
    z = normal_increments(seed, [path], n_steps)[0]
    return PricePath(simulate_log_prices(GBM(sigma, mu), s0, z, dt), dt)


def sample_exp_ou(s0, kappa, theta, sigma, n_steps=1440, dt=1 / 1440, seed=0, path=0) -> PricePath:
    _check_finite(s0=s0, dt=dt)
    if s0 <= 0 or n_steps < 1:
        raise ValueError("need s0 > 0 and n_steps >= 1")
    z = normal_increments(seed, [path], n_steps)[0]
    return PricePath(simulate_log_prices(ExpOU(kappa, theta, sigma), s0, z, dt), dt)


def parse_timestamps(column: pd.Series) -> np.ndarray:
    """Unix seconds/milliseconds/microseconds or ISO-8601 strings to datetime64[ns]."""
    numeric = pd.to_numeric(column, errors="coerce")
    if numeric.notna().all():
        top = float(numeric.abs().max())
        unit = "us" if top > 1e14 else "ms" if top > 1e11 else "s"
        stamps = pd.to_datetime(numeric.astype("int64"), unit=unit)
    else:
        stamps = pd.to_datetime(column, utc=True, format="ISO8601").dt.tz_localize(None)
    return stamps.to_numpy(dtype="datetime64[ns]")


def regular_grid(times: np.ndarray) -> tuple[np.ndarray, np.timedelta64]:
    """Uniform grid spanning ``times`` at the modal spacing."""
    gaps = np.diff(times)
    values, counts = np.unique(gaps, return_counts=True)
    step = values[np.argmax(counts)]
    n = int((times[-1] - times[0]) // step)
    return times[0] + step * np.arange(n + 1), step


def forward_fill(times: np.ndarray, values: np.ndarray, grid: np.ndarray) -> np.ndarray:
    idx = np.searchsorted(times, grid, side="right") - 1
    return values[idx]


def load_historical(file) -> PricePath:
    """Read a ``timestamp,price`` CSV onto a uniform grid.

    Missing grid points carry the last observed price forward; ``dt`` is the modal
    timestamp spacing in days.
    """
    frame = pd.read_csv(Path(file))
    if frame.empty:
        raise ValueError(f"{file}: no price rows")
    if frame.shape[1] < 2:
        raise ValueError(f"{file}: expected columns (timestamp, price)")
    times = parse_timestamps(frame.iloc[:, 0])
    prices = pd.to_numeric(frame.iloc[:, 1], errors="coerce").to_numpy(dtype=float)
    if not np.all(np.isfinite(prices)) or np.any(prices <= 0):
        raise ValueError(f"{file}: prices must be positive numbers")
    if len(times) < 2:
        raise ValueError(f"{file}: need at least two rows")
    if np.any(np.diff(times) <= np.timedelta64(0)):
        raise ValueError(f"{file}: timestamps must be strictly increasing")
    grid, step = regular_grid(times)
    dt = step / np.timedelta64(1, "D")
    return PricePath(forward_fill(times, prices, grid), float(dt), grid)
