"""Quartile labeling, image normalization and dataset files."""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .indicators import DEFAULT_ORDER, PERIODS, Indicator, build_images, max_lookback
from .market_data import InsufficientDataError, PriceSeries, SplitSpec

SCHEMA = "stockcnn.dataset"
SCHEMA_VERSION = 1
DEFAULT_EPSILON = 1e-8
LABEL_WINDOW = 20


class Label(IntEnum):
    BUY = 0
    SELL = 1
    HOLD = 2


class LabelDirection(str, Enum):
    """Where the 20-day quartile window sits relative to the labeled day."""

    FORWARD = "forward"      # d .. d+19
    TRAILING = "trailing"    # d-19 .. d
    CENTERED = "centered"    # d-10 .. d+9


def _window_offset(direction, window: int) -> int:
    """Bar offset of the window's first day relative to the labeled day."""
    direction = LabelDirection(direction)
    if direction is LabelDirection.FORWARD:
        return 0
    if direction is LabelDirection.TRAILING:
        return -(window - 1)
    return -(window // 2)


def quartile_labels(closes: np.ndarray, position: int | np.ndarray) -> np.ndarray:
    """Label rows of ``closes`` (shape ``(n, window)``) by the close at ``position``.

    Buy below the first quartile, Sell above the third, Hold otherwise;
    quartiles use linear interpolation between order statistics.
    """
    closes = np.atleast_2d(closes)
    q1, q3 = np.percentile(closes, [25.0, 75.0], axis=-1, method="linear")
    p = closes[np.arange(closes.shape[0]), position]
    return np.where(p < q1, Label.BUY, np.where(p > q3, Label.SELL, Label.HOLD)).astype(np.int64)


def label_day(series: PriceSeries, d, window: int = LABEL_WINDOW,
              direction=LabelDirection.FORWARD) -> Label:
    i = series.index_of(d)
    start = i + _window_offset(direction, window)
    if start < 0 or start + window > len(series):
        raise InsufficientDataError(
            f"{series.ticker}: {window}-day {LabelDirection(direction).value} label window "
            f"for {d} is outside the series"
        )
    closes = series.close[start : start + window]
    return Label(int(quartile_labels(closes, i - start)[0]))


# -- normalization -----------------------------------------------------------

def _minmax(x: np.ndarray, axis) -> np.ndarray:
    lo = x.min(axis=axis, keepdims=True)
    span = x.max(axis=axis, keepdims=True) - lo
    flat = span == 0
    return np.where(flat, 0.5, (x - lo) / np.where(flat, 1.0, span))


def minmax_normalize(matrix) -> np.ndarray:
    """Min-max over the whole matrix; a constant matrix maps to 0.5."""
    return _minmax(np.asarray(matrix, dtype=np.float64), axis=None)


def rowwise_normalize(matrix, g: Callable[[np.ndarray], np.ndarray] | None = None) -> np.ndarray:
    """Min-max of ``g(row)`` for each row independently (works on stacks too)."""
    x = np.asarray(matrix, dtype=np.float64)
    if g is not None:
        x = g(x)
    return _minmax(x, axis=-1)


def log_rowwise_normalize(matrix, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    return rowwise_normalize(matrix, lambda x: np.log(np.abs(x) + epsilon))


class NormKind(str, Enum):
    GLOBAL_MINMAX = "global_minmax"
    ROW_MINMAX = "row_minmax"
    LOG_ROW_MINMAX = "log_row_minmax"


@dataclass(frozen=True)
class NormalizationMode:
    kind: NormKind = NormKind.LOG_ROW_MINMAX
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        object.__setattr__(self, "kind", NormKind(self.kind))
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")

    def apply(self, images: np.ndarray) -> np.ndarray:
        """Normalize one image or a stack of shape ``(n, 15, 15)``; per image."""
        x = np.asarray(images, dtype=np.float64)
        if self.kind is NormKind.GLOBAL_MINMAX:
            return _minmax(x, axis=(-2, -1))
        if self.kind is NormKind.ROW_MINMAX:
            return rowwise_normalize(x)
        return log_rowwise_normalize(x, self.epsilon)


# -- datasets ----------------------------------------------------------------

@dataclass(eq=False)
class Dataset:
    ticker: str
    mode: NormalizationMode
    split: str
    dates: list[dt.date]
    images: np.ndarray
    labels: np.ndarray
    indicator_order: tuple[str, ...] = tuple(i.value for i in DEFAULT_ORDER)
    periods: tuple[int, ...] = PERIODS
    label_window: int = LABEL_WINDOW
    label_direction: str = LabelDirection.FORWARD.value
    close: np.ndarray | None = field(default=None)

    def __post_init__(self):
        if self.split not in ("train", "test"):
            raise ValueError(f"split must be 'train' or 'test', got {self.split!r}")
        n = len(self.dates)
        self.images = np.asarray(self.images, dtype=np.float64).reshape(n, len(self.indicator_order), len(self.periods))
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(n)
        if self.close is not None:
            self.close = np.asarray(self.close, dtype=np.float64).reshape(n)
        if n and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise ValueError("normalized entries must lie in [0, 1]")
        if n and not np.isin(self.labels, list(Label)).all():
            raise ValueError("labels must be 0, 1 or 2")

    def __len__(self) -> int:
        return len(self.dates)

    def label_counts(self) -> dict[str, int]:
        return {lab.name: int(np.sum(self.labels == lab)) for lab in Label}

    def items(self):
        for k in range(len(self)):
            yield self.dates[k], self.images[k], int(self.labels[k])

    def subset(self, index) -> "Dataset":
        index = np.asarray(index, dtype=np.intp)
        return Dataset(
            self.ticker, self.mode, self.split, [self.dates[k] for k in index],
            self.images[index], self.labels[index], self.indicator_order, self.periods,
            self.label_window, self.label_direction,
            None if self.close is None else self.close[index],
        )


def eligible_indices(series: PriceSeries, start, end, order=DEFAULT_ORDER,
                     window: int = LABEL_WINDOW, direction=LabelDirection.FORWARD) -> np.ndarray:
    """Bar indices in ``[start, end]`` with full feature lookback and label window."""
    lo = int(np.searchsorted(series.dates, np.datetime64(start, "D"), side="left"))
    hi = int(np.searchsorted(series.dates, np.datetime64(end, "D"), side="right"))
    offset = _window_offset(direction, window)
    first = max(lo, max_lookback(order) - 1, -offset)
    last = min(hi, len(series) - (offset + window) + 1)
    return np.arange(first, max(first, last), dtype=np.intp)


def build_split(series: PriceSeries, start, end, mode: NormalizationMode, split: str,
                order: Sequence = DEFAULT_ORDER, window: int = LABEL_WINDOW,
                direction=LabelDirection.FORWARD) -> Dataset:
    idx = eligible_indices(series, start, end, order, window, direction)
    if idx.size == 0:
        raise InsufficientDataError(
            f"{series.ticker}: no eligible {split} days in {start}..{end} "
            f"(need {max_lookback(order)} bars of history and a {window}-day label window)"
        )
    raw = build_images(series, idx, order)
    offset = _window_offset(direction, window)
    closes = sliding_window_view(series.close, window)[idx + offset]
    labels = quartile_labels(closes, np.full(idx.size, -offset))
    return Dataset(
        ticker=series.ticker,
        mode=mode,
        split=split,
        dates=[series.dates[i].item() for i in idx],
        images=mode.apply(raw),
        labels=labels,
        indicator_order=tuple(Indicator(i).value for i in order),
        label_window=window,
        label_direction=LabelDirection(direction).value,
        close=series.close[idx],
    )


def build_dataset(series: PriceSeries, spec: SplitSpec, mode: NormalizationMode,
                  order: Sequence = DEFAULT_ORDER, window: int = LABEL_WINDOW,
                  direction=LabelDirection.FORWARD) -> tuple[Dataset, Dataset]:
    train = build_split(series, spec.train_start, spec.train_end, mode, "train", order, window, direction)
    test = build_split(series, spec.test_start, spec.test_end, mode, "test", order, window, direction)
    return train, test


class DatasetFormatError(ValueError):
    pass


def save_dataset(dataset: Dataset, path) -> None:
    """Write a JSON-lines file: one header record, then one record per day."""
    header = {
        "schema": SCHEMA,
        "version": SCHEMA_VERSION,
        "ticker": dataset.ticker,
        "split": dataset.split,
        "mode": dataset.mode.kind.value,
        "epsilon": dataset.mode.epsilon,
        "indicator_order": list(dataset.indicator_order),
        "periods": list(dataset.periods),
        "label_window": dataset.label_window,
        "label_direction": dataset.label_direction,
        "count": len(dataset),
    }
    with Path(path).open("w") as fh:
        fh.write(json.dumps(header) + "\n")
        for k, (date, matrix, label) in enumerate(dataset.items()):
            rec = {"date": date.isoformat(), "label": label, "matrix": matrix.tolist()}
            if dataset.close is not None:
                rec["close"] = float(dataset.close[k])
            fh.write(json.dumps(rec) + "\n")


def load_dataset(path, indicator_order: Sequence | None = DEFAULT_ORDER) -> Dataset:
    """Read a dataset file.

    When ``indicator_order`` is given, the file's row order must match it.
    """
    with Path(path).open() as fh:
        lines = [ln for ln in fh if ln.strip()]
    if not lines:
        raise DatasetFormatError(f"{path}: empty file")
    header = json.loads(lines[0])
    if header.get("schema") != SCHEMA or header.get("version") != SCHEMA_VERSION:
        raise DatasetFormatError(
            f"{path}: unsupported schema {header.get('schema')!r} v{header.get('version')!r}"
        )
    if indicator_order is not None:
        expected = [Indicator(i).value for i in indicator_order]
        if header["indicator_order"] != expected:
            raise DatasetFormatError(
                f"{path}: indicator row order {header['indicator_order']} != expected {expected}"
            )
    records = [json.loads(ln) for ln in lines[1:]]
    if len(records) != header["count"]:
        raise DatasetFormatError(f"{path}: header says {header['count']} records, found {len(records)}")
    has_close = bool(records) and all("close" in r for r in records)
    return Dataset(
        ticker=header["ticker"],
        mode=NormalizationMode(header["mode"], header["epsilon"]),
        split=header["split"],
        dates=[dt.date.fromisoformat(r["date"]) for r in records],
        images=np.array([r["matrix"] for r in records], dtype=np.float64),
        labels=np.array([r["label"] for r in records], dtype=np.int64),
        indicator_order=tuple(header["indicator_order"]),
        periods=tuple(header["periods"]),
        label_window=header["label_window"],
        label_direction=header["label_direction"],
        close=np.array([r["close"] for r in records]) if has_close else None,
    )
