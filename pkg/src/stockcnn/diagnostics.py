"""Heterogeneity and burstiness diagnostics for stock images."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .indicators import Indicator, indicator_values
from .market_data import InsufficientDataError, PriceSeries

DEFAULT_BINS = 256
CHI_SQUARE_FLOOR = 0.01


def entropy(matrix, bins: int = DEFAULT_BINS) -> float:
    """Shannon entropy (bits) of the histogram of all entries on [0, 1]."""
    if bins < 1:
        raise ValueError("bins must be >= 1")
    x = np.asarray(matrix, dtype=np.float64).ravel()
    counts, _ = np.histogram(x, bins=bins, range=(0.0, 1.0))
    p = counts[counts > 0] / x.size
    return float(-(p * np.log2(p)).sum()) + 0.0


# -- chi-square ----------------------------------------------------------------

def _gamma_series(a: float, x: float) -> float:
    term = total = 1.0 / a
    ap = a
    for _ in range(10_000):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * 1e-16:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_continued_fraction(a: float, x: float) -> float:
    # Modified Lentz evaluation of the upper incomplete gamma fraction.
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 10_000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        d = tiny if abs(d) < tiny else d
        c = b + an / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def regularized_gamma_p(a: float, x: float) -> float:
    """Lower regularized incomplete gamma P(a, x)."""
    if a <= 0:
        raise ValueError("a must be positive")
    if x <= 0:
        return 0.0
    if x < a + 1.0:
        return _gamma_series(a, x)
    return 1.0 - _gamma_continued_fraction(a, x)


def chi2_cdf(x: float, dof: int) -> float:
    return regularized_gamma_p(dof / 2.0, x / 2.0)


def chi2_critical_value(dof: int, alpha: float, tol: float = 1e-12) -> float:
    """Upper-tail critical value: the x with P(chi2_dof > x) = alpha, by bisection."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    target = 1.0 - alpha
    lo, hi = 0.0, max(1.0, float(dof))
    while chi2_cdf(hi, dof) < target:
        hi *= 2.0
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if chi2_cdf(mid, dof) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class ChiSquareReport:
    statistics: np.ndarray
    dof: int
    critical_value: float
    alpha: float

    @property
    def rejected(self) -> np.ndarray:
        return self.statistics > self.critical_value


def scale_for_chi_square(matrix, floor: float = CHI_SQUARE_FLOOR) -> np.ndarray:
    """Affinely map the matrix onto [floor, 1] so expected values are positive."""
    x = np.asarray(matrix, dtype=np.float64)
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.ones_like(x)
    return floor + (1.0 - floor) * (x - lo) / (hi - lo)


def chi_square_rows(matrix, alpha: float = 0.01, raw: bool = False) -> ChiSquareReport:
    """Compare rows 2..n against row 1 taken as the expected values.

    By default the matrix is first rescaled to [0.01, 1]; ``raw=True`` divides
    by the unscaled first row, with zero entries nudged to +-1e-12.
    """
    x = np.asarray(matrix, dtype=np.float64)
    if not raw:
        x = scale_for_chi_square(x)
    expected = x[0]
    expected = np.where(np.abs(expected) < 1e-12, np.copysign(1e-12, expected), expected)
    stats = ((x[1:] - expected) ** 2 / expected).sum(axis=1)
    dof = x.shape[1] - 1
    return ChiSquareReport(stats, dof, chi2_critical_value(dof, alpha), alpha)


# -- burstiness ----------------------------------------------------------------

@dataclass(frozen=True)
class BurstinessExport:
    dates: list
    values: np.ndarray
    bin_edges: np.ndarray
    counts: np.ndarray

    def timeseries_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["date", "value"])
        for d, v in zip(self.dates, self.values):
            w.writerow([d.isoformat(), repr(float(v))])
        return out.getvalue()

    def histogram_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["bin_low", "bin_high", "count"])
        for lo, hi, n in zip(self.bin_edges[:-1], self.bin_edges[1:], self.counts):
            w.writerow([repr(float(lo)), repr(float(hi)), int(n)])
        return out.getvalue()


def burstiness_export(series: PriceSeries, indicator, l: int, start, end,
                      bins: int = 30) -> BurstinessExport:
    """Daily values of one indicator over a date range plus their histogram."""
    lo = int(np.searchsorted(series.dates, np.datetime64(start, "D"), side="left"))
    hi = int(np.searchsorted(series.dates, np.datetime64(end, "D"), side="right"))
    if hi <= lo:
        raise InsufficientDataError(f"{series.ticker}: no bars in {start}..{end}")
    idx = np.arange(lo, hi)
    values = indicator_values(Indicator(indicator), series, l, idx)
    vmin, vmax = values.min(), values.max()
    if vmin == vmax:
        edges = np.array([vmin, vmax])
        counts = np.array([values.size])
    else:
        counts, edges = np.histogram(values, bins=bins, range=(vmin, vmax))
    return BurstinessExport([series.dates[i].item() for i in idx], values, edges, counts)
