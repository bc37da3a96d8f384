"""Seeded synthetic datasets for tests, demos and qualitative experiments."""

from __future__ import annotations

import numpy as np

from .data import LongFrame


def random_walk(n_series: int = 5, length: int = 400, drift: float | tuple[float, float] = (-0.2, 0.2),
                sigma: float = 1.0, level: float = 100.0, seed: int = 0, start: int | str = "2000-01-03",
                frequency: str | int = "D") -> LongFrame:
    """Aligned random walks with per-series drift drawn from ``drift`` (or fixed)."""
    rng = np.random.default_rng(seed)
    values = {}
    for i in range(n_series):
        mu = rng.uniform(*drift) if isinstance(drift, tuple) else drift
        values[f"rw{i}"] = level + np.cumsum(mu + sigma * rng.standard_normal(length))
    return LongFrame.from_arrays(values, start, frequency)


def ar1(coef: float = 0.8, x0: float = 10.0, length: int = 200, noise: float = 0.0, seed: int = 0,
        series_id: str = "ar") -> LongFrame:
    """``x[t] = coef * x[t-1] + noise * e[t]`` starting at ``x0``, on plain integer timestamps."""
    rng = np.random.default_rng(seed)
    x = np.empty(length)
    x[0] = x0
    for t in range(1, length):
        x[t] = coef * x[t - 1] + noise * rng.standard_normal()
    return LongFrame.from_arrays({series_id: x}, 0, 1)


def seasonal(n_series: int = 7, length: int = 300, period: int = 7, amplitude: float = 5.0,
             sigma: float = 1.0, trend: float = 0.05, seed: int = 0, start: int | str = "2000-01-03",
             frequency: str | int = "D") -> LongFrame:
    """Aligned series mixing a seasonal cycle, a linear trend, AR(1) noise and a shared factor."""
    rng = np.random.default_rng(seed)
    t = np.arange(length)
    common = np.cumsum(0.3 * rng.standard_normal(length))
    values = {}
    for i in range(n_series):
        phase = rng.uniform(0, 2 * np.pi)
        e = np.zeros(length)
        shocks = sigma * rng.standard_normal(length)
        for k in range(1, length):
            e[k] = 0.6 * e[k - 1] + shocks[k]
        level = 50 + 10 * i
        values[f"ch{i}"] = (level + trend * t + amplitude * np.sin(2 * np.pi * t / period + phase)
                            + rng.uniform(0.5, 1.5) * common + e)
    return LongFrame.from_arrays(values, start, frequency)
