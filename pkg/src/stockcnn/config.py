"""Run configuration: a versioned YAML document plus dotted-key overrides.

Schema (version 1; every key except ``version`` is optional)::

    version: 1
    data_dir: data                # <TICKER>.csv files
    output_dir: out
    tickers: [AAPL, MSFT]         # default: every CSV in data_dir
    seed: 0
    split: {train_start: 2005-01-01, train_end: 2015-12-31,
            test_start: 2016-01-01, test_end: 2021-12-31}
    dataset: {epsilon: 1.0e-8, label_window: 20, label_direction: forward,
              indicators: [rsi, williams_r, ...]}
    variants: [cnn_log_row_minmax, cnn_global_minmax, lasso_log_row_minmax]
    train: {learning_rate: 0.001, batch_size: 32, max_epochs: 200, optimizer: adam,
            patience: 20, validation_fraction: 0.1, class_weighting: false, dtype: float32}
    baseline: {lambda: 0.01, tol: 1.0e-8, max_iter: 10000}
    diagnose: {entropy_bins: 256, alpha: 0.01, chi_square_raw: false,
               burst_indicators: [rsi, williams_r, ema], burst_period: 14,
               burst_days: 447, histogram_bins: 30}
"""

from __future__ import annotations

import copy
import datetime as dt
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .baselines import LassoConfig
from .dataset import LabelDirection, NormalizationMode, NormKind
from .indicators import DEFAULT_ORDER, PERIODS, Indicator
from .market_data import SplitSpec
from .nn import TrainConfig

CONFIG_VERSION = 1
MODELS = ("cnn", "lasso")
DEFAULT_VARIANTS = ("cnn_log_row_minmax", "cnn_global_minmax", "lasso_log_row_minmax")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Variant:
    """A model family paired with the normalization its dataset uses."""

    name: str
    model: str
    norm: NormKind

    @classmethod
    def parse(cls, name: str) -> "Variant":
        model, _, norm = name.partition("_")
        if model not in MODELS:
            raise ConfigError(f"variant {name!r}: model must be one of {MODELS}")
        try:
            kind = NormKind(norm)
        except ValueError:
            raise ConfigError(f"variant {name!r}: normalization must be one of "
                              f"{[k.value for k in NormKind]}") from None
        return cls(name, model, kind)


@dataclass
class DiagnoseConfig:
    entropy_bins: int = 256
    alpha: float = 0.01
    chi_square_raw: bool = False
    burst_indicators: tuple[str, ...] = ("rsi", "williams_r", "ema")
    burst_period: int = 14
    burst_days: int = 447
    histogram_bins: int = 30


@dataclass
class RunConfig:
    data_dir: Path = Path("data")
    output_dir: Path = Path("out")
    tickers: list[str] | None = None
    seed: int = 0
    split: SplitSpec = field(default_factory=SplitSpec.paper_default)
    epsilon: float = 1e-8
    label_window: int = 20
    label_direction: str = LabelDirection.FORWARD.value
    indicators: tuple[Indicator, ...] = DEFAULT_ORDER
    variants: tuple[Variant, ...] = tuple(Variant.parse(v) for v in DEFAULT_VARIANTS)
    train: TrainConfig = field(default_factory=TrainConfig)
    lasso_lambda: float = 0.01
    lasso: LassoConfig = field(default_factory=LassoConfig)
    diagnose: DiagnoseConfig = field(default_factory=DiagnoseConfig)

    def mode(self, kind) -> NormalizationMode:
        return NormalizationMode(NormKind(kind), self.epsilon)

    @property
    def modes(self) -> list[NormKind]:
        return list(dict.fromkeys(v.norm for v in self.variants))

    def resolve_tickers(self) -> list[str]:
        if self.tickers:
            return list(self.tickers)
        if not self.data_dir.is_dir():
            raise ConfigError(f"data directory {self.data_dir} does not exist")
        return sorted(p.stem for p in self.data_dir.glob("*.csv"))


def _set_dotted(doc: dict, key: str, value) -> None:
    parts = key.split(".")
    node = doc
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {key!r}: {p!r} is not a section")
    node[parts[-1]] = value


def parse_override(text: str) -> tuple[str, object]:
    """``key.path=value`` with the value read as YAML (so numbers stay numbers)."""
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    return key.strip(), yaml.safe_load(raw) if raw.strip() else None


def _date(value, key: str) -> dt.date:
    if isinstance(value, dt.date):
        return value
    try:
        return dt.date.fromisoformat(str(value))
    except ValueError:
        raise ConfigError(f"{key}: {value!r} is not an ISO date") from None


def _section(doc: dict, name: str, allowed) -> dict:
    sec = doc.get(name) or {}
    if not isinstance(sec, dict):
        raise ConfigError(f"{name} must be a mapping")
    unknown = set(sec) - set(allowed)
    if unknown:
        raise ConfigError(f"{name}: unknown keys {sorted(unknown)}")
    return sec


def from_dict(doc: dict | None, overrides: dict | None = None) -> RunConfig:
    """Validate a config document (with dotted overrides applied) into a RunConfig."""
    doc = copy.deepcopy(doc or {})
    for k, v in (overrides or {}).items():
        _set_dotted(doc, k, v)
    version = doc.pop("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"config version {version!r} is not supported (expected {CONFIG_VERSION})")
    top = {"data_dir", "output_dir", "tickers", "seed", "split", "dataset", "variants", "train",
           "baseline", "diagnose"}
    unknown = set(doc) - top
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")

    cfg = RunConfig()
    if "data_dir" in doc:
        cfg.data_dir = Path(doc["data_dir"])
    if "output_dir" in doc:
        cfg.output_dir = Path(doc["output_dir"])
    if doc.get("tickers") is not None:
        tickers = doc["tickers"]
        if isinstance(tickers, str):
            tickers = [t for t in tickers.split(",") if t]
        cfg.tickers = [str(t) for t in tickers]
    cfg.seed = int(doc.get("seed", 0))

    split = _section(doc, "split", ("train_start", "train_end", "test_start", "test_end"))
    default = SplitSpec.paper_default()
    try:
        cfg.split = SplitSpec(*(_date(split.get(k, getattr(default, k)), f"split.{k}")
                                for k in ("train_start", "train_end", "test_start", "test_end")))
    except ValueError as exc:
        raise ConfigError(f"split: {exc}") from None

    ds = _section(doc, "dataset", ("epsilon", "label_window", "label_direction", "indicators"))
    cfg.epsilon = float(ds.get("epsilon", cfg.epsilon))
    cfg.label_window = int(ds.get("label_window", cfg.label_window))
    try:
        cfg.label_direction = LabelDirection(ds.get("label_direction", cfg.label_direction)).value
        if "indicators" in ds:
            cfg.indicators = tuple(Indicator(i) for i in ds["indicators"])
        NormalizationMode(epsilon=cfg.epsilon)
    except ValueError as exc:
        raise ConfigError(f"dataset: {exc}") from None
    if cfg.label_window < 2:
        raise ConfigError("dataset.label_window must be at least 2")
    if len(set(cfg.indicators)) != len(PERIODS) or len(cfg.indicators) != len(PERIODS):
        raise ConfigError(f"dataset.indicators must list {len(PERIODS)} distinct indicators, "
                          f"one row per period {PERIODS[0]}..{PERIODS[-1]}")

    if "variants" in doc:
        names = doc["variants"]
        if isinstance(names, str):
            names = [v for v in names.split(",") if v]
        if not names:
            raise ConfigError("variants must not be empty")
        cfg.variants = tuple(Variant.parse(str(v)) for v in names)

    tr = _section(doc, "train", [f.name for f in fields(TrainConfig) if f.name != "seed"])
    try:
        cfg.train = TrainConfig(**tr, seed=cfg.seed)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"train: {exc}") from None

    bl = _section(doc, "baseline", ("lambda", "tol", "max_iter"))
    cfg.lasso_lambda = float(bl.get("lambda", cfg.lasso_lambda))
    if cfg.lasso_lambda < 0:
        raise ConfigError("baseline.lambda must be non-negative")
    cfg.lasso = LassoConfig(tol=float(bl.get("tol", 1e-8)), max_iter=int(bl.get("max_iter", 10_000)),
                            seed=cfg.seed)

    dg = _section(doc, "diagnose", [f.name for f in fields(DiagnoseConfig)])
    cfg.diagnose = DiagnoseConfig(**{**cfg.diagnose.__dict__, **dg})
    cfg.diagnose.burst_indicators = tuple(cfg.diagnose.burst_indicators)
    try:
        for ind in cfg.diagnose.burst_indicators:
            Indicator(ind)
    except ValueError as exc:
        raise ConfigError(f"diagnose: {exc}") from None
    if not 0 < cfg.diagnose.alpha < 1 or cfg.diagnose.entropy_bins < 1 or cfg.diagnose.histogram_bins < 1:
        raise ConfigError("diagnose: alpha must lie in (0, 1) and bin counts must be positive")
    return cfg


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    doc = {}
    if path is not None:
        try:
            doc = yaml.safe_load(Path(path).read_text()) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"config {path} must hold a mapping")
    return from_dict(doc, overrides)
