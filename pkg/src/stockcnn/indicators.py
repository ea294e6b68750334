"""Technical indicators on trailing windows and the 15x15 stock image.

Every indicator value at day ``d`` with period ``l`` is a function of a fixed
number of bars ending at ``d`` (its *lookback*).  Recursive indicators (EMA and
friends, ADX) are warmed up inside that window from a simple-average seed, so
older history never leaks into the value and images are shift-equivariant.

All kernels take 2-D window arrays of shape ``(n_days, lookback)`` and return
``(n_days,)``, which lets one code path serve both single-day queries and
whole-history image construction.

Definitions (``c``/``h``/``lo``/``v`` = close/high/low/volume, ``l`` = period):

==========  ==============================================================
RSI         100 - 100/(1 + mean gain/mean loss) over the last ``l`` changes
Williams%R  -100 (max h - c_d) / (max h - min lo) over ``l`` bars
SMA         mean of the last ``l`` closes
EMA         alpha = 2/(l+1), seeded with an SMA, warmed over ``4l`` bars
WMA         linear weights 1..l (newest heaviest)
HMA         WMA(2 WMA(c, l//2) - WMA(c, l), floor(sqrt(l)))
TEMA        3 e1 - 3 e2 + e3 with e_k the k-fold EMA, over ``6l`` bars
CCI         (tp_d - SMA(tp)) / (0.015 mean|tp - SMA(tp)|), tp = (h+lo+c)/3
CMO         100 (sum up - sum down)/(sum up + sum down) over ``l`` changes
ROC         100 (c_d - c_{d-l}) / c_{d-l}
MACD        EMA(c, l) - EMA(c, 2l), both over ``8l`` bars
PPO         100 (EMA(c, l) - EMA(c, 2l)) / EMA(c, 2l)
CMF         sum(mfm * v) / sum(v), mfm = ((c - lo) - (h - c)) / (h - lo)
ADX         Wilder-smoothed DX over ``4l + 1`` bars
PSAR        parabolic SAR (step 0.02, cap 0.2) started fresh ``l`` bars back
==========  ==============================================================

Denominators below 1e-12 in magnitude yield the indicator's degenerate value:
RSI 100, Williams %R -50, CCI 0, CMO 0, CMF 0, DI/DX 0.
"""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .market_data import InsufficientDataError, PriceSeries

PERIODS = tuple(range(6, 21))
DENOM_EPS = 1e-12
EMA_WARMUP = 4
PSAR_STEP = 0.02
PSAR_MAX = 0.2


class Indicator(str, Enum):
    RSI = "rsi"
    WILLIAMS_R = "williams_r"
    SMA = "sma"
    EMA = "ema"
    WMA = "wma"
    HMA = "hma"
    TEMA = "tema"
    CCI = "cci"
    CMO = "cmo"
    ROC = "roc"
    MACD = "macd"
    PPO = "ppo"
    CMF = "cmf"
    ADX = "adx"
    PSAR = "psar"


DEFAULT_ORDER: tuple[Indicator, ...] = tuple(Indicator)


def _guarded(num, den, fallback):
    den = np.asarray(den, dtype=np.float64)
    small = np.abs(den) < DENOM_EPS
    return np.where(small, fallback, num / np.where(small, 1.0, den))


def _wma_path(x: np.ndarray, l: int) -> np.ndarray:
    w = np.arange(1, l + 1, dtype=np.float64)
    return sliding_window_view(x, l, axis=-1) @ w / w.sum()


def _ema_path(x: np.ndarray, l: int) -> np.ndarray:
    """EMA over the last axis, seeded with the mean of the first ``l`` values.

    Returns the values from position ``l - 1`` on (length ``W - l + 1``).
    """
    alpha = 2.0 / (l + 1.0)
    out = np.empty(x.shape[:-1] + (x.shape[-1] - l + 1,))
    e = x[..., :l].mean(axis=-1)
    out[..., 0] = e
    for k, t in enumerate(range(l, x.shape[-1]), start=1):
        e = alpha * x[..., t] + (1.0 - alpha) * e
        out[..., k] = e
    return out


def _wilder_path(x: np.ndarray, l: int, *, mean_seed: bool) -> np.ndarray:
    """Wilder smoothing; sum-seeded (for TR/DM) or mean-seeded (for ADX)."""
    out = np.empty(x.shape[:-1] + (x.shape[-1] - l + 1,))
    s = x[..., :l].sum(axis=-1)
    if mean_seed:
        s = s / l
    out[..., 0] = s
    for k, t in enumerate(range(l, x.shape[-1]), start=1):
        if mean_seed:
            s = (s * (l - 1) + x[..., t]) / l
        else:
            s = s - s / l + x[..., t]
        out[..., k] = s
    return out


@dataclass(frozen=True)
class Windows:
    high: np.ndarray
    low: np.ndarray
    close: np.ndarray
    volume: np.ndarray


def _rsi(w: Windows, l: int):
    diff = np.diff(w.close, axis=-1)
    gain = np.clip(diff, 0.0, None).mean(axis=-1)
    loss = np.clip(-diff, 0.0, None).mean(axis=-1)
    rsi = _guarded(100.0 * gain, gain + loss, 100.0)
    return np.where(loss < DENOM_EPS, 100.0, rsi)


def _williams_r(w: Windows, l: int):
    hh = w.high.max(axis=-1)
    ll = w.low.min(axis=-1)
    return _guarded(-100.0 * (hh - w.close[..., -1]), hh - ll, -50.0)


def _sma(w: Windows, l: int):
    return w.close.mean(axis=-1)


def _ema(w: Windows, l: int):
    return _ema_path(w.close, l)[..., -1]


def _wma(w: Windows, l: int):
    return _wma_path(w.close, l)[..., -1]


def _hma(w: Windows, l: int):
    sq = int(math.isqrt(l))
    raw = 2.0 * _wma_path(w.close, l // 2)[..., -sq:] - _wma_path(w.close, l)[..., -sq:]
    return _wma_path(raw, sq)[..., -1]


def _tema(w: Windows, l: int):
    e1 = _ema_path(w.close, l)
    e2 = _ema_path(e1, l)
    e3 = _ema_path(e2, l)
    return 3.0 * e1[..., -1] - 3.0 * e2[..., -1] + e3[..., -1]


def _cci(w: Windows, l: int):
    tp = (w.high + w.low + w.close) / 3.0
    mean = tp.mean(axis=-1)
    md = np.abs(tp - mean[..., None]).mean(axis=-1)
    return _guarded(tp[..., -1] - mean, 0.015 * md, 0.0)


def _cmo(w: Windows, l: int):
    diff = np.diff(w.close, axis=-1)
    up = np.clip(diff, 0.0, None).sum(axis=-1)
    down = np.clip(-diff, 0.0, None).sum(axis=-1)
    return _guarded(100.0 * (up - down), up + down, 0.0)


def _roc(w: Windows, l: int):
    return 100.0 * (w.close[..., -1] - w.close[..., 0]) / w.close[..., 0]


def _fast_slow(w: Windows, l: int):
    return _ema_path(w.close, l)[..., -1], _ema_path(w.close, 2 * l)[..., -1]


def _macd(w: Windows, l: int):
    fast, slow = _fast_slow(w, l)
    return fast - slow


def _ppo(w: Windows, l: int):
    fast, slow = _fast_slow(w, l)
    return _guarded(100.0 * (fast - slow), slow, 0.0)


def _cmf(w: Windows, l: int):
    mfm = _guarded((w.close - w.low) - (w.high - w.close), w.high - w.low, 0.0)
    return _guarded((mfm * w.volume).sum(axis=-1), w.volume.sum(axis=-1), 0.0)


def _adx(w: Windows, l: int):
    h, lo, c = w.high, w.low, w.close
    up = h[..., 1:] - h[..., :-1]
    dn = lo[..., :-1] - lo[..., 1:]
    plus_dm = np.where((up > dn) & (up > 0), up, 0.0)
    minus_dm = np.where((dn > up) & (dn > 0), dn, 0.0)
    tr = np.maximum.reduce([
        h[..., 1:] - lo[..., 1:],
        np.abs(h[..., 1:] - c[..., :-1]),
        np.abs(lo[..., 1:] - c[..., :-1]),
    ])
    str_ = _wilder_path(tr, l, mean_seed=False)
    plus_di = _guarded(100.0 * _wilder_path(plus_dm, l, mean_seed=False), str_, 0.0)
    minus_di = _guarded(100.0 * _wilder_path(minus_dm, l, mean_seed=False), str_, 0.0)
    dx = _guarded(100.0 * np.abs(plus_di - minus_di), plus_di + minus_di, 0.0)
    return _wilder_path(dx, l, mean_seed=True)[..., -1]


def _psar(w: Windows, l: int):
    h, lo, c = w.high, w.low, w.close
    up = c[..., 1] >= c[..., 0]
    sar = np.where(up, lo[..., 0], h[..., 0])
    ep = np.where(up, h[..., 0], lo[..., 0])
    af = np.full(sar.shape, PSAR_STEP)
    for t in range(1, h.shape[-1]):
        nxt = sar + af * (ep - sar)
        prev_lo = lo[..., t - 1] if t < 2 else np.minimum(lo[..., t - 1], lo[..., t - 2])
        prev_hi = h[..., t - 1] if t < 2 else np.maximum(h[..., t - 1], h[..., t - 2])
        nxt = np.where(up, np.minimum(nxt, prev_lo), np.maximum(nxt, prev_hi))

        flip = np.where(up, lo[..., t] < nxt, h[..., t] > nxt)
        new_ep_up = np.where(h[..., t] > ep, h[..., t], ep)
        new_ep_dn = np.where(lo[..., t] < ep, lo[..., t], ep)
        extended = np.where(up, h[..., t] > ep, lo[..., t] < ep)

        sar = np.where(flip, ep, nxt)
        ep_next = np.where(up, new_ep_up, new_ep_dn)
        ep = np.where(flip, np.where(up, lo[..., t], h[..., t]), ep_next)
        af = np.where(flip, PSAR_STEP, np.where(extended, np.minimum(af + PSAR_STEP, PSAR_MAX), af))
        up = np.where(flip, ~up, up)
    return sar


_KERNELS: dict[Indicator, tuple[Callable[[int], int], Callable[[Windows, int], np.ndarray]]] = {
    Indicator.RSI: (lambda l: l + 1, _rsi),
    Indicator.WILLIAMS_R: (lambda l: l, _williams_r),
    Indicator.SMA: (lambda l: l, _sma),
    Indicator.EMA: (lambda l: EMA_WARMUP * l, _ema),
    Indicator.WMA: (lambda l: l, _wma),
    Indicator.HMA: (lambda l: l + math.isqrt(l) - 1, _hma),
    Indicator.TEMA: (lambda l: 6 * l, _tema),
    Indicator.CCI: (lambda l: l, _cci),
    Indicator.CMO: (lambda l: l + 1, _cmo),
    Indicator.ROC: (lambda l: l + 1, _roc),
    Indicator.MACD: (lambda l: EMA_WARMUP * 2 * l, _macd),
    Indicator.PPO: (lambda l: EMA_WARMUP * 2 * l, _ppo),
    Indicator.CMF: (lambda l: l, _cmf),
    Indicator.ADX: (lambda l: EMA_WARMUP * l + 1, _adx),
    Indicator.PSAR: (lambda l: l, _psar),
}


def lookback(indicator, l: int) -> int:
    """Number of bars, ending at the evaluation day, the indicator reads."""
    ind = Indicator(indicator)
    if l < 1 or (ind in (Indicator.HMA, Indicator.PSAR) and l < 2):
        raise ValueError(f"period {l} too short for {ind.value}")
    return _KERNELS[ind][0](l)


def max_lookback(order: Sequence = DEFAULT_ORDER, periods: Sequence[int] = PERIODS) -> int:
    return max(lookback(ind, l) for ind in order for l in periods)


def _windows(series: PriceSeries, idx: np.ndarray, width: int) -> Windows:
    idx = np.asarray(idx, dtype=np.intp)
    if idx.size and idx.min() < width - 1:
        first = int(idx.min())
        raise InsufficientDataError(
            f"{series.ticker}: need {width} bars ending at {series.dates[first]}, "
            f"only {first + 1} available"
        )
    if idx.size and idx.max() >= len(series):
        raise IndexError("bar index out of range")
    start = idx - width + 1

    def cut(col):
        return sliding_window_view(col, width)[start] if idx.size else np.empty((0, width))

    return Windows(cut(series.high), cut(series.low), cut(series.close), cut(series.volume))


def indicator_values(indicator, series: PriceSeries, l: int, idx) -> np.ndarray:
    """Indicator with period ``l`` at each bar index in ``idx``."""
    ind = Indicator(indicator)
    width = lookback(ind, l)
    w = _windows(series, np.atleast_1d(idx), width)
    return np.asarray(_KERNELS[ind][1](w, l), dtype=np.float64)


def compute_indicator(indicator, series: PriceSeries, d, l: int) -> float:
    try:
        ind = Indicator(indicator)
    except ValueError:
        raise ValueError(f"unknown indicator {indicator!r}") from None
    return float(indicator_values(ind, series, l, [series.index_of(d)])[0])


def sma(series: PriceSeries, d, l: int) -> float:
    """Mean of the ``l`` closes ending at ``d``."""
    i = series.index_of(d)
    if l < 1:
        raise ValueError("window length must be >= 1")
    if i + 1 < l:
        raise InsufficientDataError(f"{series.ticker}: {i + 1} bars at {d}, need {l}")
    return float(np.mean(series.close[i - l + 1 : i + 1]))


@dataclass
class StockImage:
    date: dt.date
    values: np.ndarray
    label: int | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(PERIODS), len(PERIODS)):
            raise ValueError(f"image must be 15x15, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"non-finite entry in image for {self.date}")


def build_images(series: PriceSeries, idx, order: Sequence = DEFAULT_ORDER,
                 periods: Sequence[int] = PERIODS) -> np.ndarray:
    """Stack of raw images, shape ``(len(idx), len(order), len(periods))``."""
    if len(order) != len(periods):
        raise ValueError("image must be square: one period per indicator row")
    idx = np.atleast_1d(np.asarray(idx, dtype=np.intp))
    out = np.empty((idx.size, len(order), len(periods)))
    for r, ind in enumerate(order):
        for j, l in enumerate(periods):
            out[:, r, j] = indicator_values(ind, series, l, idx)
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{series.ticker}: non-finite indicator value")
    return out


def build_image(series: PriceSeries, d, order: Sequence = DEFAULT_ORDER) -> StockImage:
    i = series.index_of(d)
    values = build_images(series, [i], order)[0]
    return StockImage(series.dates[i].item(), values)
