import numpy as np
import pandas as pd
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from seasonload.ingestion import Dataset
from seasonload.preprocessing import (
    OutlierRule, build_days, normalize_day, normalize_days, preprocess, read_days, remove_outlier_days, write_days,
)


def make_dataset(days: dict[tuple[str, str], list[float]], hours: dict | None = None) -> Dataset:
    rows = []
    for (cid, date), vals in days.items():
        hrs = (hours or {}).get((cid, date), range(len(vals)))
        rows += [(cid, np.datetime64(date), h, v) for h, v in zip(hrs, vals)]
    return Dataset.from_frame(pd.DataFrame(rows, columns=["consumer", "date", "hour", "load_kwh"]))


def test_full_day_gives_one_vector():
    ds = make_dataset({("A", "2015-01-01"): list(np.arange(24.0))})
    days, seen, incomplete = build_days(ds)
    assert (len(days), seen, incomplete) == (1, 1, 0)
    assert days.values[0].tolist() == list(range(24))


def test_incomplete_day_dropped():
    ds = make_dataset({("A", "2015-01-01"): [1.0] * 23})
    days, seen, incomplete = build_days(ds)
    assert (len(days), seen, incomplete) == (0, 1, 1)


def test_two_days_in_date_order():
    ds = make_dataset({("A", "2015-01-02"): [2.0] * 24, ("A", "2015-01-01"): [1.0] * 24})
    days, _, _ = build_days(ds)
    assert days.date.astype(str).tolist() == ["2015-01-01", "2015-01-02"]
    assert days.values[:, 0].tolist() == [1.0, 2.0]


def test_hours_placed_by_hour_not_order():
    vals = list(np.arange(24.0))
    ds = make_dataset({("A", "2015-01-01"): vals[::-1]}, {("A", "2015-01-01"): range(23, -1, -1)})
    days, _, _ = build_days(ds)
    assert days.values[0].tolist() == vals


def _batch(rows):
    ds = make_dataset({("A", f"2015-01-{i + 1:02d}"): r for i, r in enumerate(rows)})
    return build_days(ds)[0]


def test_negative_day_dropped():
    kept, keep = remove_outlier_days(_batch([[1.0] * 23 + [-0.1], [1.0] * 24]))
    assert keep.tolist() == [False, True]


def test_finite_within_cap_retained():
    kept, keep = remove_outlier_days(_batch([[1.0] * 23 + [9.0], [1.0] * 24]))
    assert keep.all()


def test_cap_exceeded_dropped():
    kept, keep = remove_outlier_days(_batch([[1.0] * 23 + [25.0], [1.0] * 24, [1.0] * 24]))
    assert keep.tolist() == [False, True, True]


def test_cap_is_configurable():
    _, keep = remove_outlier_days(_batch([[1.0] * 23 + [25.0], [1.0] * 24]), OutlierRule(cap_multiplier=30))
    assert keep.all()


def test_normalize_examples():
    assert normalize_day(np.arange(24.0)).tolist() == [t / 23 for t in range(24)]
    assert normalize_day(np.full(24, 3.0)).tolist() == [0.5] * 24
    raw = np.full(24, 3.0)
    raw[0], raw[1], raw[2] = 2.0, 6.0, 4.0
    assert normalize_day(raw)[2] == 0.5


def test_normalize_days_matches_single():
    rng = np.random.default_rng(1)
    vals = rng.random((50, 24)) * 5
    vals[7] = 2.0
    out, const = normalize_days(vals)
    assert const.tolist() == [i == 7 for i in range(50)]
    for row, raw in zip(out, vals):
        assert np.array_equal(row, normalize_day(raw))


finite_day = arrays(np.float64, 24, elements=st.floats(0, 1e4, allow_nan=False, allow_infinity=False,
                                                     allow_subnormal=False))


@settings(max_examples=300, deadline=None)
@given(finite_day, st.floats(1e-3, 1e3))
def test_scale_invariance(raw, c):
    assert np.allclose(normalize_day(c * raw), normalize_day(raw), rtol=0, atol=1e-9) or \
        np.ptp(raw) < 1e-9 * max(raw.max(), 1)


@settings(max_examples=300, deadline=None)
@given(finite_day, st.sampled_from([0.125, 0.5, 2.0, 8.0, 1024.0]))
def test_power_of_two_scale_is_exact(raw, c):
    assert np.array_equal(normalize_day(c * raw), normalize_day(raw))


@settings(max_examples=300, deadline=None)
@given(finite_day, st.floats(0, 1e3))
def test_shift_invariance(raw, c):
    if np.ptp(raw) < 1e-3:
        return  # rounding of raw + c dominates a vanishing range
    assert np.allclose(normalize_day(raw + c), normalize_day(raw), rtol=0, atol=1e-9)


@settings(max_examples=300, deadline=None)
@given(finite_day)
def test_output_bounds(raw):
    out = normalize_day(raw)
    assert out.min() >= 0 and out.max() <= 1
    if raw.max() > raw.min():
        assert out.min() == 0 and out.max() == 1
    else:
        assert (out == 0.5).all()


def test_preprocess_accounting_and_constant_days():
    days = {("A", f"2015-01-{d:02d}"): [1.0 + (h % 3) for h in range(24)] for d in range(1, 8)}
    days[("A", "2015-01-08")] = [3.0] * 24                     # constant
    days[("A", "2015-01-09")] = [1.0] * 20                     # incomplete
    days[("A", "2015-01-10")] = [1.0] * 23 + [-1.0]            # negative
    days[("B", "2015-01-01")] = [1.0] * 22                     # B has nothing left
    out, report = preprocess(make_dataset(days))
    assert report.days_total == 11
    assert report.days_dropped_incomplete == 2
    assert report.days_dropped_outlier == 1
    assert report.days_constant == 1
    assert report.retained_by_consumer == {"A": 8, "B": 0}
    assert report.consumers_without_days == ["B"]
    assert report.days_total == report.days_retained + report.days_dropped_incomplete + report.days_dropped_outlier
    assert len(out) == 8 and out.values.min() >= 0 and out.values.max() <= 1
    assert (out.values[7] == 0.5).all()


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 5), st.integers(18, 24),
                          st.floats(-1, 50, allow_nan=False)), min_size=1, max_size=25))
def test_accounting_property(spec):
    days = {}
    for cid, day, n, v in spec:
        key = (f"C{cid}", f"2015-02-{day + 1:02d}")
        days[key] = [abs(v) + h * 0.01 for h in range(n - 1)] + [v]
    _, report = preprocess(make_dataset(days))
    report.check()
    assert report.days_total == len(days)


def test_days_round_trip(tmp_path):
    batch = _batch([list(np.random.default_rng(3).random(24)) for _ in range(3)])
    write_days(batch, tmp_path / "d.jsonl")
    back = read_days(tmp_path / "d.jsonl")
    assert np.array_equal(back.values, batch.values)
    assert np.array_equal(back.date, batch.date)
    assert back.consumer.tolist() == batch.consumer.tolist()
