"""Trading simulation from predicted labels, and classification metrics."""

from __future__ import annotations

import csv
import datetime as dt
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .dataset import Label
from .market_data import PriceSeries

INITIAL_CASH = 10_000.0
INITIAL_STOCK_VALUE = 10_000.0
TRADE_FRACTION = 0.5

CLASS_NAMES = ("Buy", "Sell", "Hold")


@dataclass(frozen=True)
class Portfolio:
    cash: float
    shares: float

    def __post_init__(self):
        if self.cash < 0 or self.shares < 0:
            raise ValueError(f"negative holdings: cash={self.cash}, shares={self.shares}")

    def value(self, price: float) -> float:
        return self.cash + self.shares * price


@dataclass(frozen=True)
class DailyRecord:
    date: object
    action: str
    price: float
    cash: float
    shares: float
    total: float


@dataclass
class BacktestResult:
    ticker: str
    records: list[DailyRecord]
    initial_value: float
    trade_count: int

    @property
    def final_value(self) -> float:
        return self.records[-1].total if self.records else self.initial_value

    @property
    def final_return(self) -> float:
        """Total-period return on the starting capital."""
        return (self.final_value - self.initial_value) / self.initial_value

    def trajectory_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["date", "action", "price", "cash", "shares", "total"])
        for r in self.records:
            w.writerow([r.date.isoformat(), r.action, repr(r.price), repr(r.cash), repr(r.shares), repr(r.total)])
        return out.getvalue()

    @classmethod
    def from_trajectory_csv(cls, ticker: str, text: str, initial_value: float, trade_count: int) -> "BacktestResult":
        records = [
            DailyRecord(dt.date.fromisoformat(row["date"]), row["action"], float(row["price"]),
                        float(row["cash"]), float(row["shares"]), float(row["total"]))
            for row in csv.DictReader(io.StringIO(text))
        ]
        return cls(ticker, records, initial_value, trade_count)


def _execute(p: Portfolio, action: int, price: float, fee: float) -> tuple[Portfolio, bool]:
    if action == Label.BUY:
        spend = TRADE_FRACTION * p.cash
        if spend <= 0:
            return p, False
        return Portfolio(p.cash - spend, p.shares + spend * (1.0 - fee) / price), True
    if action == Label.SELL:
        sold = TRADE_FRACTION * p.shares
        if sold <= 0:
            return p, False
        return Portfolio(p.cash + sold * price * (1.0 - fee), p.shares - sold), True
    if action == Label.HOLD:
        return p, False
    raise ValueError(f"unknown action {action!r}")


def simulate(predictions, series: PriceSeries, initial_cash: float = INITIAL_CASH,
             initial_stock_value: float = INITIAL_STOCK_VALUE, fee: float = 0.0) -> BacktestResult:
    """Replay ``(date, label)`` predictions at each day's close.

    Buy spends half the cash, Sell sells half the shares, Hold does nothing.
    The starting stock position is bought at the first prediction day's close.
    ``fee`` is a proportional cost on traded value (0 by default).
    """
    predictions = list(predictions)
    if not 0.0 <= fee < 1.0:
        raise ValueError("fee must lie in [0, 1)")
    if not predictions:
        return BacktestResult(series.ticker, [], initial_cash + initial_stock_value, 0)
    prices = []
    for date, _ in predictions:
        try:
            prices.append(float(series.close[series.index_of(date)]))
        except KeyError:
            raise KeyError(f"{series.ticker}: no close price for prediction date {date}") from None

    p = Portfolio(initial_cash, initial_stock_value / prices[0])
    initial_value = initial_cash + initial_stock_value
    records = []
    trades = 0
    for (date, action), price in zip(predictions, prices):
        p, traded = _execute(p, int(action), price, fee)
        trades += traded
        records.append(DailyRecord(date, Label(int(action)).name, price, p.cash, p.shares, p.value(price)))
    return BacktestResult(series.ticker, records, initial_value, trades)


# -- metrics -----------------------------------------------------------------


@dataclass
class ClassificationMetrics:
    confusion: np.ndarray           # rows = actual, cols = predicted
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    accuracy: float

    def rows(self):
        for k, name in enumerate(CLASS_NAMES):
            yield name, float(self.precision[k]), float(self.recall[k]), float(self.f1[k])

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "confusion": self.confusion.tolist(),
            "classes": {name: {"precision": p, "recall": r, "f1": f} for name, p, r, f in self.rows()},
        }


def f1_score(precision, recall):
    precision = np.asarray(precision, dtype=np.float64)
    recall = np.asarray(recall, dtype=np.float64)
    den = precision + recall
    return np.where(den > 0, 2.0 * precision * recall / np.where(den > 0, den, 1.0), 0.0)


def compute_metrics(predicted, actual, n_classes: int = 3) -> ClassificationMetrics:
    predicted = np.asarray(predicted, dtype=np.int64)
    actual = np.asarray(actual, dtype=np.int64)
    if predicted.shape != actual.shape:
        raise ValueError(f"length mismatch: {predicted.shape} vs {actual.shape}")
    if predicted.size == 0:
        raise ValueError("no labels to score")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (actual, predicted), 1)
    tp = np.diag(cm).astype(np.float64)
    pred_tot = cm.sum(axis=0)
    act_tot = cm.sum(axis=1)
    precision = np.where(pred_tot > 0, tp / np.maximum(pred_tot, 1), 0.0)
    recall = np.where(act_tot > 0, tp / np.maximum(act_tot, 1), 0.0)
    return ClassificationMetrics(cm, precision, recall, f1_score(precision, recall),
                                 float(tp.sum() / predicted.size))


# -- reporting -----------------------------------------------------------------


@dataclass
class VariantResult:
    """One model variant's outcome on one ticker."""

    ticker: str
    variant: str
    metrics: ClassificationMetrics
    backtest: BacktestResult


@dataclass
class Report:
    variants: list[str]
    summary: list[dict] = field(default_factory=list)
    assets: list[dict] = field(default_factory=list)

    def summary_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        header = ["ticker"]
        for v in self.variants:
            header += [f"{v}_accuracy", f"{v}_return"]
        w.writerow(header)
        for row in self.summary:
            line = [row["ticker"]]
            for v in self.variants:
                cell = row.get(v)
                line += ["", ""] if cell is None else [repr(cell["accuracy"]), repr(cell["return"])]
            w.writerow(line)
        return out.getvalue()

    def assets_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["ticker", "variant", "date", "total"])
        for a in self.assets:
            w.writerow([a["ticker"], a["variant"], a["date"], repr(a["total"])])
        return out.getvalue()

    def to_json(self) -> str:
        return json.dumps({"variants": self.variants, "summary": self.summary,
                           "return_basis": "total test period"}, indent=2)


def report(results: list[VariantResult]) -> Report:
    """Per-ticker accuracy/return table and per-day total-asset series."""
    if not results:
        raise ValueError("no results to report")
    variants = list(dict.fromkeys(r.variant for r in results))
    tickers = list(dict.fromkeys(r.ticker for r in results))
    rep = Report(variants)
    for t in tickers:
        row = {"ticker": t}
        for r in results:
            if r.ticker == t:
                row[r.variant] = {"accuracy": r.metrics.accuracy, "return": r.backtest.final_return}
        rep.summary.append(row)
    for r in results:
        for rec in r.backtest.records:
            rep.assets.append({"ticker": r.ticker, "variant": r.variant,
                               "date": rec.date.isoformat(), "total": rec.total})
    return rep


def metrics_csv(metrics: ClassificationMetrics) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["class", "precision", "recall", "F1"])
    for name, p, r, f in metrics.rows():
        w.writerow([name, repr(p), repr(r), repr(f)])
    return out.getvalue()
