"""Seeded synthetic OHLCV histories for tests and demos."""

from __future__ import annotations

import numpy as np

from .market_data import PriceSeries


def _business_days(start: str, n: int) -> np.ndarray:
    days = np.arange(np.datetime64(start, "D"), np.datetime64(start, "D") + int(n * 1.5) + 10)
    return days[np.is_busday(days)][:n]


def series_from_closes(closes, ticker: str = "SYN", start: str = "2005-01-03",
                       seed: int = 0, spread: float = 0.01) -> PriceSeries:
    """Wrap a close path into bars with a random intraday range around it."""
    rng = np.random.default_rng(seed)
    close = np.asarray(closes, dtype=np.float64)
    n = close.size
    open_ = np.empty(n)
    open_[0] = close[0]
    open_[1:] = close[:-1]
    top = np.maximum(open_, close)
    bottom = np.minimum(open_, close)
    high = top * (1.0 + spread * rng.random(n))
    low = bottom * (1.0 - spread * rng.random(n))
    volume = np.round(rng.lognormal(13.0, 0.4, n))
    return PriceSeries(ticker, _business_days(start, n), open_, high, low, close, volume)


def geometric_random_walk(n: int, seed: int = 0, start_price: float = 100.0, sigma: float = 0.015,
                          drift: float = 0.0, ticker: str = "GRW", start: str = "2005-01-03") -> PriceSeries:
    rng = np.random.default_rng(seed)
    logret = drift + sigma * rng.standard_normal(n)
    logret[0] = 0.0
    return series_from_closes(start_price * np.exp(np.cumsum(logret)), ticker, start, seed + 1)


def regime_walk(n: int, seed: int = 0, start_price: float = 100.0, sigma: float = 0.01,
                trend: float = 0.012, mean_length: float = 12.0, ticker: str = "REG",
                start: str = "2005-01-03") -> PriceSeries:
    """Random walk whose drift switches between up, down and flat regimes.

    Regime lengths are geometric with the given mean; the strong trends push
    short-horizon oscillators (RSI etc.) into their extreme zones often.
    """
    rng = np.random.default_rng(seed)
    drift = np.empty(n)
    i = 0
    while i < n:
        length = int(rng.geometric(1.0 / mean_length))
        drift[i:i + length] = rng.choice([-trend, 0.0, trend])
        i += length
    logret = drift + sigma * rng.standard_normal(n)
    logret[0] = 0.0
    return series_from_closes(start_price * np.exp(np.cumsum(logret)), ticker, start, seed + 1)
