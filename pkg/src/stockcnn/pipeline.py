"""The experiment pipeline, one function per CLI subcommand.

Every stage reads its inputs from and writes its outputs to ticker-scoped
paths under ``output_dir``::

    <out>/ingest_report.json
    <out>/<TICKER>/diagnostics/{entropy,chi_square}.csv, burst_<ind>_{series,histogram}.csv
    <out>/<TICKER>/datasets/<mode>/{train,test}.jsonl
    <out>/<TICKER>/models/<variant>.npz, <variant>_history.json
    <out>/<TICKER>/eval/<variant>_{metrics.csv,metrics.json,predictions.csv}
    <out>/<TICKER>/backtest/<variant>_{trajectory.csv,result.json}
    <out>/report/{summary.csv,metrics.csv,assets.csv,report.json}

Each function returns a JSON-serializable summary.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from pathlib import Path

import numpy as np

from .backtest import BacktestResult, VariantResult, compute_metrics, metrics_csv, report, simulate
from .baselines import LinearModel, fit_lasso
from .config import RunConfig, Variant
from .dataset import NormKind, build_dataset, eligible_indices, load_dataset, save_dataset
from .diagnostics import burstiness_export, chi_square_rows, entropy
from .indicators import Indicator, build_images, lookback
from .market_data import InsufficientDataError, MarketDataError, read_ohlcv_file
from .nn import CnnModel, train

log = logging.getLogger(__name__)


class MissingArtifactError(FileNotFoundError):
    """A stage's input file does not exist; names the command that makes it."""

    def __init__(self, path: Path, produced_by: str):
        self.path = Path(path)
        self.produced_by = produced_by
        super().__init__(f"missing {self.path}; produce it with `{produced_by}`")


def _require(path: Path, produced_by: str) -> Path:
    if not path.exists():
        raise MissingArtifactError(path, produced_by)
    return path


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _write_json(path: Path, obj) -> None:
    _write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


# -- paths -------------------------------------------------------------------

def price_path(cfg: RunConfig, ticker: str) -> Path:
    return cfg.data_dir / f"{ticker}.csv"


def dataset_path(cfg: RunConfig, ticker: str, mode, split: str) -> Path:
    return cfg.output_dir / ticker / "datasets" / NormKind(mode).value / f"{split}.jsonl"


def model_path(cfg: RunConfig, ticker: str, variant: Variant) -> Path:
    return cfg.output_dir / ticker / "models" / f"{variant.name}.npz"


def eval_path(cfg: RunConfig, ticker: str, variant: Variant, what: str) -> Path:
    return cfg.output_dir / ticker / "eval" / f"{variant.name}_{what}"


def backtest_path(cfg: RunConfig, ticker: str, variant: Variant, what: str) -> Path:
    return cfg.output_dir / ticker / "backtest" / f"{variant.name}_{what}"


def _series(cfg: RunConfig, ticker: str):
    return read_ohlcv_file(_require(price_path(cfg, ticker), f"place {ticker}.csv in {cfg.data_dir}"))


def _tickers(cfg: RunConfig) -> list[str]:
    tickers = cfg.resolve_tickers()
    if not tickers:
        raise InsufficientDataError(f"no <TICKER>.csv files found in {cfg.data_dir}")
    for t in tickers:
        _require(price_path(cfg, t), f"place {t}.csv in {cfg.data_dir}")
    return tickers


# -- ingest --------------------------------------------------------------------

def ingest(paths, output_dir: Path | None = None) -> dict:
    """Validate OHLCV files; a bad file is reported and the others still run."""
    files: list[Path] = []
    for p in map(Path, paths):
        files.extend(sorted(p.glob("*.csv")) if p.is_dir() else [p])
    if not files:
        raise InsufficientDataError(f"no CSV inputs found in {', '.join(map(str, paths)) or '(nothing)'}")
    entries = []
    for f in files:
        entry = {"file": str(f), "ticker": f.stem}
        try:
            s = read_ohlcv_file(f)
        except MarketDataError as exc:
            entry.update(ok=False, rows=None, violations=[{"line": exc.line, "message": str(exc)}])
        except OSError as exc:
            entry.update(ok=False, rows=None, violations=[{"line": None, "message": f"unreadable: {exc.strerror}"}])
        else:
            entry.update(ok=True, rows=len(s), first_date=s.dates[0].item().isoformat(),
                         last_date=s.dates[-1].item().isoformat(), violations=[])
        entries.append(entry)
    result = {"files": entries, "valid": sum(e["ok"] for e in entries), "invalid": sum(not e["ok"] for e in entries)}
    if output_dir is not None:
        _write_json(Path(output_dir) / "ingest_report.json", result)
    return result


# -- diagnose ------------------------------------------------------------------

def _csv(header, rows) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return out.getvalue()


def diagnose(cfg: RunConfig) -> dict:
    """Entropy per normalization, row chi-square and burstiness exports on the test range."""
    dg = cfg.diagnose
    summary = {}
    for ticker in _tickers(cfg):
        series = _series(cfg, ticker)
        out = cfg.output_dir / ticker / "diagnostics"
        idx = eligible_indices(series, cfg.split.test_start, cfg.split.test_end, cfg.indicators, window=1)
        if idx.size == 0:
            raise InsufficientDataError(f"{ticker}: no test-range day has enough history for an image")
        raw = build_images(series, idx, cfg.indicators)
        kinds = list(NormKind)
        ent = {k: [entropy(m, dg.entropy_bins) for m in cfg.mode(k).apply(raw)] for k in kinds}
        rows = [[series.dates[i].item().isoformat()] + [repr(ent[k][n]) for k in kinds] for n, i in enumerate(idx)]
        _write(out / "entropy.csv", _csv(["date"] + [k.value for k in kinds], rows))

        chi = chi_square_rows(raw[-1], dg.alpha, raw=dg.chi_square_raw)
        rows = [[r + 2, cfg.indicators[r + 1].value, repr(float(s)), repr(chi.critical_value), bool(rej)]
                for r, (s, rej) in enumerate(zip(chi.statistics, chi.rejected))]
        _write(out / "chi_square.csv", _csv(["row", "indicator", "statistic", "critical_value", "rejected"], rows))

        last = int(idx[-1])
        for name in dg.burst_indicators:
            ind = Indicator(name)
            first = max(last - dg.burst_days + 1, lookback(ind, dg.burst_period) - 1)
            ex = burstiness_export(series, ind, dg.burst_period, series.dates[first].item(),
                                   series.dates[last].item(), bins=dg.histogram_bins)
            _write(out / f"burst_{ind.value}_series.csv", ex.timeseries_csv())
            _write(out / f"burst_{ind.value}_histogram.csv", ex.histogram_csv())

        summary[ticker] = {
            "days": int(idx.size),
            "mean_entropy": {k.value: float(np.mean(ent[k])) for k in kinds},
            "chi_square_date": series.dates[last].item().isoformat(),
            "chi_square_rejected": int(chi.rejected.sum()),
            "critical_value": chi.critical_value,
        }
    return summary


# -- build-dataset -----------------------------------------------------------

def build_datasets(cfg: RunConfig, modes=None) -> dict:
    modes = [NormKind(m) for m in modes] if modes else cfg.modes
    tickers = _tickers(cfg)
    summary = {}
    for ticker in tickers:
        series = _series(cfg, ticker)
        summary[ticker] = {}
        for kind in modes:
            train_ds, test_ds = build_dataset(series, cfg.split, cfg.mode(kind), cfg.indicators,
                                              cfg.label_window, cfg.label_direction)
            for ds in (train_ds, test_ds):
                path = dataset_path(cfg, ticker, kind, ds.split)
                path.parent.mkdir(parents=True, exist_ok=True)
                save_dataset(ds, path)
            summary[ticker][kind.value] = {"train": train_ds.label_counts(), "test": test_ds.label_counts()}
            log.info("%s %s: train %s test %s", ticker, kind.value, train_ds.label_counts(), test_ds.label_counts())
    return summary


def _load_split(cfg: RunConfig, ticker: str, variant: Variant, split: str):
    path = _require(dataset_path(cfg, ticker, variant.norm, split), "stockcnn build-dataset")
    return load_dataset(path, cfg.indicators)


# -- train / evaluate --------------------------------------------------------

def train_models(cfg: RunConfig) -> dict:
    tickers = _tickers(cfg)
    for t in tickers:                       # check every prerequisite before training anything
        for v in cfg.variants:
            _require(dataset_path(cfg, t, v.norm, "train"), "stockcnn build-dataset")
    summary = {}
    for ticker in tickers:
        summary[ticker] = {}
        for v in cfg.variants:
            ds = _load_split(cfg, ticker, v, "train")
            path = model_path(cfg, ticker, v)
            path.parent.mkdir(parents=True, exist_ok=True)
            if v.model == "cnn":
                model, hist = train(CnnModel.initialize(cfg.seed), ds, cfg.train)
                model.save(path, cfg.train, {"ticker": ticker, "variant": v.name, "best_epoch": hist.best_epoch})
                _write_json(path.with_name(f"{v.name}_history.json"), hist.__dict__)
                summary[ticker][v.name] = {"epochs": len(hist.train_loss), "best_epoch": hist.best_epoch + 1,
                                           "train_loss": hist.train_loss[hist.best_epoch]}
            else:
                model = fit_lasso(ds, cfg.lasso_lambda, cfg.lasso)
                model.save(path)
                summary[ticker][v.name] = {"nonzero_weights": int(np.count_nonzero(model.weights)),
                                           "iterations": [len(h) - 1 for h in model.objective_history]}
    return summary


def _load_model(cfg: RunConfig, ticker: str, v: Variant):
    path = _require(model_path(cfg, ticker, v), "stockcnn train")
    return CnnModel.load(path) if v.model == "cnn" else LinearModel.load(path)


def _predict(model, images) -> np.ndarray:
    if isinstance(model, CnnModel):
        return np.concatenate([np.atleast_1d(model.predict(images[s:s + 512]))
                               for s in range(0, len(images), 512)]) if len(images) else np.empty(0, int)
    return model.predict(images.reshape(len(images), -1))


def evaluate(cfg: RunConfig) -> dict:
    tickers = _tickers(cfg)
    for t in tickers:
        for v in cfg.variants:
            _require(model_path(cfg, t, v), "stockcnn train")
            _require(dataset_path(cfg, t, v.norm, "test"), "stockcnn build-dataset")
    summary = {}
    for ticker in tickers:
        summary[ticker] = {}
        for v in cfg.variants:
            ds = _load_split(cfg, ticker, v, "test")
            pred = _predict(_load_model(cfg, ticker, v), ds.images)
            m = compute_metrics(pred, ds.labels)
            _write(eval_path(cfg, ticker, v, "metrics.csv"), metrics_csv(m))
            _write_json(eval_path(cfg, ticker, v, "metrics.json"), m.to_dict())
            rows = [[d.isoformat(), int(p), int(a)] for d, p, a in zip(ds.dates, pred, ds.labels)]
            _write(eval_path(cfg, ticker, v, "predictions.csv"), _csv(["date", "predicted", "actual"], rows))
            summary[ticker][v.name] = {"accuracy": m.accuracy}
    return summary


# -- backtest / report ---------------------------------------------------------

def backtest(cfg: RunConfig) -> dict:
    tickers = _tickers(cfg)
    for t in tickers:
        for v in cfg.variants:
            _require(model_path(cfg, t, v), "stockcnn train")
            _require(dataset_path(cfg, t, v.norm, "test"), "stockcnn build-dataset")
    summary = {}
    for ticker in tickers:
        series = _series(cfg, ticker)
        summary[ticker] = {}
        for v in cfg.variants:
            ds = _load_split(cfg, ticker, v, "test")
            pred = _predict(_load_model(cfg, ticker, v), ds.images)
            result = simulate(list(zip(ds.dates, pred)), series)
            _write(backtest_path(cfg, ticker, v, "trajectory.csv"), result.trajectory_csv())
            info = {"final_value": result.final_value, "final_return": result.final_return,
                    "initial_value": result.initial_value, "trade_count": result.trade_count,
                    "return_basis": "total test period"}
            _write_json(backtest_path(cfg, ticker, v, "result.json"), info)
            summary[ticker][v.name] = {"final_return": result.final_return, "trade_count": result.trade_count}
    return summary


def make_report(cfg: RunConfig) -> dict:
    tickers = _tickers(cfg)
    needed = []
    for t in tickers:
        for v in cfg.variants:
            needed.append((t, v, _require(eval_path(cfg, t, v, "predictions.csv"), "stockcnn evaluate"),
                           _require(backtest_path(cfg, t, v, "result.json"), "stockcnn backtest"),
                           _require(backtest_path(cfg, t, v, "trajectory.csv"), "stockcnn backtest")))
    results, metric_rows = [], []
    for t, v, pred_path, res_path, traj_path in needed:
        rows = list(csv.DictReader(io.StringIO(pred_path.read_text())))
        m = compute_metrics([int(r["predicted"]) for r in rows], [int(r["actual"]) for r in rows])
        info = json.loads(res_path.read_text())
        bt = BacktestResult.from_trajectory_csv(t, traj_path.read_text(), info["initial_value"], info["trade_count"])
        results.append(VariantResult(t, v.name, m, bt))
        metric_rows += [[t, v.name, name, repr(p), repr(r), repr(f)] for name, p, r, f in m.rows()]
    rep = report(results)
    out = cfg.output_dir / "report"
    _write(out / "summary.csv", rep.summary_csv())
    _write(out / "assets.csv", rep.assets_csv())
    _write(out / "metrics.csv", _csv(["ticker", "variant", "class", "precision", "recall", "F1"], metric_rows))
    _write(out / "report.json", rep.to_json() + "\n")
    return {"summary": rep.summary, "files": [str(out / n) for n in
                                             ("summary.csv", "metrics.csv", "assets.csv", "report.json")]}
