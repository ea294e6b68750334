import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stockcnn.market_data import (
    InsufficientDataError,
    MarketDataError,
    PriceSeries,
    SplitSpec,
    parse_ohlcv_csv,
    read_ohlcv_file,
    serialize_ohlcv_csv,
    split_series,
    write_ohlcv_file,
)
from stockcnn.synthetic import geometric_random_walk

HEADER = "date,open,high,low,close,volume\n"


def test_single_row():
    s = parse_ohlcv_csv(HEADER + "2019-03-20,100,101,99,100.5,1000\n")
    assert len(s) == 1
    assert s.close[0] == 100.5
    assert s.bars[0].date == dt.date(2019, 3, 20)


def test_rows_out_of_order_are_sorted():
    text = HEADER + "2019-03-21,1,2,1,1,5\n2019-03-19,1,2,1,1,5\n2019-03-20,1,2,1,1,5\n"
    s = parse_ohlcv_csv(text)
    assert [b.date.day for b in s.bars] == [19, 20, 21]


def test_high_below_low_names_line():
    text = HEADER + "2019-03-20,100,101,99,100.5,1000\n2019-03-21,100,98,99,100,1000\n"
    with pytest.raises(MarketDataError) as err:
        parse_ohlcv_csv(text)
    assert err.value.line == 3
    assert "line 3" in str(err.value)


@pytest.mark.parametrize("row", [
    "2019-03-20,0,1,0,1,10",          # zero price
    "2019-03-20,1,2,1,1,-1",          # negative volume
    "2019-03-20,1,2,1.5,1,10",        # low above open
    "2019-03-20,1,x,1,1,10",          # unparsable
    "20/03/2019,1,2,1,1,10",          # not ISO
    "2019-03-20,1,2,1,1",             # short row
])
def test_bad_rows_rejected(row):
    with pytest.raises(MarketDataError):
        parse_ohlcv_csv(HEADER + row + "\n")


def test_duplicate_date_rejected():
    text = HEADER + "2019-03-20,1,2,1,1,5\n2019-03-20,1,2,1,1,5\n"
    with pytest.raises(MarketDataError, match="duplicate"):
        parse_ohlcv_csv(text)


@pytest.mark.parametrize("text", ["", HEADER, "\n\n"])
def test_empty_file(text):
    with pytest.raises(MarketDataError, match="empty"):
        parse_ohlcv_csv(text)


def test_wrong_header():
    with pytest.raises(MarketDataError, match="header"):
        parse_ohlcv_csv("day,o,h,l,c,v\n2019-03-20,1,2,1,1,5\n")


def test_series_rejects_unsorted_dates():
    with pytest.raises(MarketDataError):
        PriceSeries("X", np.array(["2020-01-02", "2020-01-01"], dtype="datetime64[D]"),
                    [1, 1], [1, 1], [1, 1], [1, 1], [1, 1])


def test_file_stem_is_ticker(tmp_path):
    s = geometric_random_walk(30, seed=3)
    write_ohlcv_file(s, tmp_path / "MSFT.csv")
    loaded = read_ohlcv_file(tmp_path / "MSFT.csv")
    assert loaded.ticker == "MSFT"
    assert np.array_equal(loaded.close, s.close)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 200), st.integers(0, 10_000))
def test_parse_serialize_roundtrip(n, seed):
    s = geometric_random_walk(n, seed=seed, ticker="T")
    assert parse_ohlcv_csv(serialize_ohlcv_csv(s), ticker="T") == s


class TestSplit:
    def series(self):
        closes = np.arange(1, 11, dtype=float)
        dates = np.arange(np.datetime64("2020-01-01"), np.datetime64("2020-01-11"))
        return PriceSeries("X", dates, closes, closes, closes, closes, np.ones(10))

    def test_partition_sizes(self):
        s = self.series()
        spec = SplitSpec("2020-01-02", "2020-01-05", "2020-01-06", "2020-01-09")
        train, test = split_series(s, spec)
        assert len(train) == 4 and len(test) == 4
        assert len(train) + len(test) == 8      # 2020-01-01 and -10 are out of range
        assert set(train.dates.tolist()).isdisjoint(test.dates.tolist())

    def test_overlapping_spec_rejected(self):
        with pytest.raises(ValueError):
            SplitSpec("2020-01-01", "2020-01-06", "2020-01-06", "2020-01-09")

    def test_empty_partition(self):
        spec = SplitSpec("2019-01-01", "2019-06-01", "2020-01-06", "2020-01-09")
        with pytest.raises(InsufficientDataError):
            split_series(self.series(), spec)

    def test_paper_split(self):
        s = geometric_random_walk(17 * 262, seed=1, start="2005-01-03")
        assert s.dates[-1] >= np.datetime64("2021-12-01")
        train, test = split_series(s, SplitSpec.paper_default())
        assert train.dates[0] >= np.datetime64("2005-01-01")
        assert train.dates[-1] <= np.datetime64("2015-12-31")
        assert test.dates[0] >= np.datetime64("2016-01-01")
        assert test.dates[-1] <= np.datetime64("2021-12-31")
        in_range = (s.dates >= np.datetime64("2005-01-01")) & (s.dates <= np.datetime64("2021-12-31"))
        assert len(train) + len(test) == in_range.sum()
        assert SplitSpec.paper_default().train_end == dt.date(2015, 12, 31)
        assert SplitSpec.paper_default().test_start == dt.date(2016, 1, 1)
