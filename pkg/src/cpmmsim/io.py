"""Atomic CSV/JSON output and config-file loading."""
from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import asdict
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .engine import SimConfig
from .prices import GBM, ExpOU, Historical


def atomic_write_text(path, text: str) -> Path:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return _plain(obj.item())
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


def write_json(path, obj) -> Path:
    return atomic_write_text(path, json.dumps(_plain(obj), indent=2, sort_keys=False) + "\n")


def write_csv(path, rows: list[dict], fieldnames=None) -> Path:
    if fieldnames is None:
        fieldnames = list(rows[0]) if rows else []
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fieldnames, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _plain(v) for k, v in row.items()})
    return atomic_write_text(path, buf.getvalue())


def write_histogram(path, hist) -> Path:
    rows = [{"bin_left": a, "bin_right": b, "count": c} for a, b, c in hist.rows()]
    return write_csv(path, rows, ["bin_left", "bin_right", "count"])


def load_config_file(path) -> dict:
    """Flat key-value config from JSON or TOML (chosen by extension)."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".toml":
        return tomllib.loads(text)
    return json.loads(text)


def config_to_dict(cfg: SimConfig) -> dict:
    """Snapshot of a config, suitable for a run manifest."""
    out = {
        "fees": asdict(cfg.fees),
        "initial_pool": asdict(cfg.initial_pool),
        "initial_cex_price": cfg.initial_cex_price,
        "n_steps": cfg.n_steps,
        "horizon": cfg.horizon,
        "demand_buy": cfg.demand_buy,
        "demand_sell": cfg.demand_sell,
        "noise_volume": cfg.noise_volume,
        "seed": cfg.seed,
    }
    model = cfg.price_model
    if isinstance(model, GBM):
        out["price_model"] = {"type": "gbm", "sigma": model.sigma, "mu": model.mu}
    elif isinstance(model, ExpOU):
        out["price_model"] = {"type": "exp_ou", "kappa": model.kappa, "theta": model.theta,
                              "sigma": model.sigma}
    elif isinstance(model, Historical):
        out["price_model"] = {"type": "historical", "n_points": len(model.path), "dt": model.path.dt}
    return out
