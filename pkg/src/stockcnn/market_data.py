"""OHLCV price histories: parsing, validation and train/test partitioning."""

from __future__ import annotations

import csv
import datetime as dt
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

CSV_HEADER = ("date", "open", "high", "low", "close", "volume")


class MarketDataError(ValueError):
    """Raised for malformed or inconsistent price data."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InsufficientDataError(ValueError):
    """Raised when a series does not cover a requested range or lookback."""


@dataclass(frozen=True)
class PriceBar:
    date: dt.date
    open: float
    high: float
    low: float
    close: float
    volume: float

    def violations(self) -> list[str]:
        problems = []
        for name in ("open", "high", "low", "close"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                problems.append(f"{name} must be a positive finite price, got {value!r}")
        if not np.isfinite(self.volume) or self.volume < 0:
            problems.append(f"volume must be non-negative, got {self.volume!r}")
        if self.low > min(self.open, self.close):
            problems.append(f"low {self.low} exceeds min(open, close)")
        if self.high < max(self.open, self.close):
            problems.append(f"high {self.high} below max(open, close)")
        if self.high < self.low:
            problems.append(f"high {self.high} < low {self.low}")
        return problems


@dataclass(frozen=True, eq=False)
class PriceSeries:
    """Column-oriented daily bars for one ticker, sorted by date.

    Columns are float64 arrays; ``dates`` is ``datetime64[D]``.  Indicator code
    works on positional (bar-index) windows, so the dates present in the data
    are the trading calendar.
    """

    ticker: str
    dates: np.ndarray
    open: np.ndarray
    high: np.ndarray
    low: np.ndarray
    close: np.ndarray
    volume: np.ndarray

    def __post_init__(self):
        n = len(self.dates)
        for name in ("open", "high", "low", "close", "volume"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != (n,):
                raise MarketDataError(f"column {name} has shape {arr.shape}, expected ({n},)")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        dates = np.asarray(self.dates, dtype="datetime64[D]")
        if n > 1 and not np.all(np.diff(dates) > np.timedelta64(0, "D")):
            raise MarketDataError("dates must be strictly increasing")
        dates.setflags(write=False)
        object.__setattr__(self, "dates", dates)

    @classmethod
    def from_bars(cls, ticker: str, bars: Iterable[PriceBar]) -> "PriceSeries":
        bars = list(bars)
        return cls(
            ticker=ticker,
            dates=np.array([b.date for b in bars], dtype="datetime64[D]"),
            open=np.array([b.open for b in bars], dtype=np.float64),
            high=np.array([b.high for b in bars], dtype=np.float64),
            low=np.array([b.low for b in bars], dtype=np.float64),
            close=np.array([b.close for b in bars], dtype=np.float64),
            volume=np.array([b.volume for b in bars], dtype=np.float64),
        )

    def __len__(self) -> int:
        return len(self.dates)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PriceSeries):
            return NotImplemented
        return self.ticker == other.ticker and all(
            np.array_equal(getattr(self, c), getattr(other, c))
            for c in ("dates",) + CSV_HEADER[1:]
        )

    @property
    def bars(self) -> list[PriceBar]:
        return list(self.iter_bars())

    def iter_bars(self) -> Iterator[PriceBar]:
        for i in range(len(self)):
            yield PriceBar(
                self.dates[i].item(),
                float(self.open[i]),
                float(self.high[i]),
                float(self.low[i]),
                float(self.close[i]),
                float(self.volume[i]),
            )

    def index_of(self, date) -> int:
        """Bar index of ``date``; raises KeyError if it is not a trading day."""
        d = np.datetime64(date, "D")
        i = int(np.searchsorted(self.dates, d))
        if i >= len(self) or self.dates[i] != d:
            raise KeyError(f"{self.ticker}: no bar on {d}")
        return i

    def slice(self, start: int, stop: int) -> "PriceSeries":
        return PriceSeries(
            self.ticker,
            self.dates[start:stop],
            self.open[start:stop],
            self.high[start:stop],
            self.low[start:stop],
            self.close[start:stop],
            self.volume[start:stop],
        )

    def between(self, start, end) -> "PriceSeries":
        """Bars with ``start <= date <= end``."""
        lo = int(np.searchsorted(self.dates, np.datetime64(start, "D"), side="left"))
        hi = int(np.searchsorted(self.dates, np.datetime64(end, "D"), side="right"))
        return self.slice(lo, hi)


@dataclass(frozen=True)
class SplitSpec:
    train_start: dt.date
    train_end: dt.date
    test_start: dt.date
    test_end: dt.date

    def __post_init__(self):
        for name in ("train_start", "train_end", "test_start", "test_end"):
            value = getattr(self, name)
            if isinstance(value, str):
                object.__setattr__(self, name, dt.date.fromisoformat(value))
        if self.train_start > self.train_end:
            raise ValueError("empty training range")
        if self.test_start > self.test_end:
            raise ValueError("empty testing range")
        if self.train_end >= self.test_start:
            raise ValueError(
                f"train_end {self.train_end} must precede test_start {self.test_start}"
            )

    @classmethod
    def paper_default(cls) -> "SplitSpec":
        """2005-2015 for training, 2016-2021 for testing."""
        return cls(
            dt.date(2005, 1, 1), dt.date(2015, 12, 31),
            dt.date(2016, 1, 1), dt.date(2021, 12, 31),
        )


def _parse_float(text: str, field: str, line: int) -> float:
    try:
        return float(text)
    except ValueError:
        raise MarketDataError(f"cannot parse {field} {text!r}", line) from None


def parse_ohlcv_csv(text, ticker: str = "") -> PriceSeries:
    """Parse ``date,open,high,low,close,volume`` CSV text into a sorted series.

    ``text`` may be a string or a readable text stream.  Line numbers in
    errors are 1-based and count the header.
    """
    stream = io.StringIO(text) if isinstance(text, str) else text
    reader = csv.reader(stream)
    header = None
    for row in reader:
        if row and any(cell.strip() for cell in row):
            header = tuple(cell.strip().lower() for cell in row)
            break
    if header is None:
        raise MarketDataError("empty file")
    if header != CSV_HEADER:
        raise MarketDataError(
            f"expected header {','.join(CSV_HEADER)}, got {','.join(header)}",
            reader.line_num,
        )

    bars: list[PriceBar] = []
    seen: dict[dt.date, int] = {}
    for row in reader:
        line = reader.line_num
        if not row or not any(cell.strip() for cell in row):
            continue
        if len(row) != len(CSV_HEADER):
            raise MarketDataError(f"expected {len(CSV_HEADER)} fields, got {len(row)}", line)
        try:
            date = dt.date.fromisoformat(row[0].strip())
        except ValueError:
            raise MarketDataError(f"invalid ISO date {row[0]!r}", line) from None
        values = [_parse_float(cell.strip(), CSV_HEADER[k + 1], line) for k, cell in enumerate(row[1:])]
        bar = PriceBar(date, *values)
        problems = bar.violations()
        if problems:
            raise MarketDataError("; ".join(problems), line)
        if date in seen:
            raise MarketDataError(f"duplicate date {date} (first seen on line {seen[date]})", line)
        seen[date] = line
        bars.append(bar)

    if not bars:
        raise MarketDataError("empty file: no data rows")
    bars.sort(key=lambda b: b.date)
    return PriceSeries.from_bars(ticker, bars)


def serialize_ohlcv_csv(series: PriceSeries) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for bar in series.iter_bars():
        writer.writerow([bar.date.isoformat()] + [repr(getattr(bar, c)) for c in CSV_HEADER[1:]])
    return out.getvalue()


def read_ohlcv_file(path) -> PriceSeries:
    """Load one ticker file; the file name stem is the ticker symbol."""
    path = Path(path)
    with path.open(newline="") as fh:
        return parse_ohlcv_csv(fh, ticker=path.stem)


def write_ohlcv_file(series: PriceSeries, path) -> None:
    Path(path).write_text(serialize_ohlcv_csv(series))


def split_series(series: PriceSeries, spec: SplitSpec) -> tuple[PriceSeries, PriceSeries]:
    if len(series) == 0:
        raise InsufficientDataError("empty series")
    train = series.between(spec.train_start, spec.train_end)
    test = series.between(spec.test_start, spec.test_end)
    if len(train) == 0:
        raise InsufficientDataError(
            f"{series.ticker}: no bars in training range {spec.train_start}..{spec.train_end}"
        )
    if len(test) == 0:
        raise InsufficientDataError(
            f"{series.ticker}: no bars in testing range {spec.test_start}..{spec.test_end}"
        )
    return train, test
