"""Stock-price images from technical indicators, a numpy CNN classifier and a trading backtest."""

__version__ = "0.1.0"
