"""Per consumer-day assembly, outlier filtering and min-max normalization."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .errors import ConfigError, DataError
from .ingestion import Dataset

log = logging.getLogger(__name__)

HOURS = 24


@dataclass
class DayBatch:
    """Consumer-days stacked row-wise: ``values`` has shape (n_days, 24)."""

    consumer: np.ndarray
    date: np.ndarray
    values: np.ndarray

    def __len__(self) -> int:
        return len(self.values)

    def subset(self, mask: np.ndarray) -> "DayBatch":
        return DayBatch(self.consumer[mask], self.date[mask], self.values[mask])

    def consumer_slices(self) -> dict[str, slice]:
        """Contiguous row range per consumer (rows are sorted by consumer)."""
        out: dict[str, slice] = {}
        n = len(self)
        if n == 0:
            return out
        change = np.flatnonzero(self.consumer[1:] != self.consumer[:-1]) + 1
        starts = [0, *change.tolist()]
        ends = [*change.tolist(), n]
        for a, b in zip(starts, ends):
            out[str(self.consumer[a])] = slice(a, b)
        return out


@dataclass(frozen=True)
class OutlierRule:
    cap_multiplier: float = 10.0
    drop_negative: bool = True

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any] | None) -> "OutlierRule":
        if not payload:
            return cls()
        try:
            rule = cls(**payload)
        except TypeError as exc:
            raise ConfigError(f"bad outlier rule: {exc}") from exc
        if rule.cap_multiplier <= 0:
            raise ConfigError("cap_multiplier must be positive")
        return rule


@dataclass
class PreprocessReport:
    days_total: int = 0
    days_dropped_incomplete: int = 0
    days_dropped_outlier: int = 0
    days_constant: int = 0
    retained_by_consumer: dict[str, int] = field(default_factory=dict)
    consumers_without_days: list[str] = field(default_factory=list)

    @property
    def days_retained(self) -> int:
        return sum(self.retained_by_consumer.values())

    def check(self) -> None:
        if self.days_total != self.days_retained + self.days_dropped_incomplete + self.days_dropped_outlier:
            raise AssertionError("preprocess accounting mismatch")

    def to_dict(self) -> dict[str, Any]:
        return {
            "days_total": self.days_total,
            "days_retained": self.days_retained,
            "days_dropped_incomplete": self.days_dropped_incomplete,
            "days_dropped_outlier": self.days_dropped_outlier,
            "days_constant": self.days_constant,
            "retained_by_consumer": dict(sorted(self.retained_by_consumer.items())),
            "consumers_without_days": sorted(self.consumers_without_days),
        }


def build_days(dataset: Dataset) -> tuple[DayBatch, int, int]:
    """Stack complete days. Returns (days, n_days_seen, n_incomplete)."""
    n = len(dataset)
    if n == 0:
        empty = DayBatch(np.array([], dtype=object), np.array([], dtype="datetime64[D]"),
                         np.zeros((0, HOURS)))
        return empty, 0, 0
    new_day = np.ones(n, dtype=bool)
    new_day[1:] = (dataset.consumer[1:] != dataset.consumer[:-1]) | (dataset.date[1:] != dataset.date[:-1])
    starts = np.flatnonzero(new_day)
    counts = np.diff(np.append(starts, n))
    # (consumer, date, hour) is unique after ingestion, so 24 rows means every hour is present
    full = counts == HOURS
    day_id = np.cumsum(new_day) - 1
    values = np.full((len(starts), HOURS), np.nan)
    values[day_id, dataset.hour] = dataset.load_kwh
    days = DayBatch(dataset.consumer[starts[full]], dataset.date[starts[full]], values[full])
    return days, len(starts), int((~full).sum())


def normalize_day(raw: np.ndarray) -> np.ndarray:
    lo, hi = raw.min(), raw.max()
    if hi == lo:
        return np.full(raw.shape, 0.5)
    return (raw - lo) / (hi - lo)


def normalize_days(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise normalize_day. Returns (normalized, constant_mask)."""
    lo = values.min(axis=1, keepdims=True)
    hi = values.max(axis=1, keepdims=True)
    span = hi - lo
    constant = span[:, 0] == 0
    out = np.empty_like(values)
    out[~constant] = (values[~constant] - lo[~constant]) / span[~constant]
    out[constant] = 0.5
    return out, constant


def remove_outlier_days(days: DayBatch, rule: OutlierRule = OutlierRule()) -> tuple[DayBatch, np.ndarray]:
    """Drop days with negative, non-finite, or implausibly large readings.

    The cap is ``rule.cap_multiplier`` times the consumer's median positive
    hourly load over all of their complete days. Returns the kept days and the
    boolean keep-mask over the input.
    """
    keep = np.ones(len(days), dtype=bool)
    for cid, sl in days.consumer_slices().items():
        block = days.values[sl]
        bad = ~np.isfinite(block).all(axis=1)
        if rule.drop_negative:
            bad |= (block < 0).any(axis=1)
        positive = block[np.isfinite(block) & (block > 0)]
        if positive.size:
            cap = rule.cap_multiplier * np.median(positive)
            bad |= (block > cap).any(axis=1)
        keep[sl] = ~bad
    return days.subset(keep), keep


def preprocess(dataset: Dataset, rule: OutlierRule = OutlierRule()) -> tuple[DayBatch, PreprocessReport]:
    raw_days, n_seen, n_incomplete = build_days(dataset)
    kept, keep = remove_outlier_days(raw_days, rule)
    normalized, constant = normalize_days(kept.values)
    days = DayBatch(kept.consumer, kept.date, normalized)

    report = PreprocessReport(
        days_total=n_seen,
        days_dropped_incomplete=n_incomplete,
        days_dropped_outlier=int((~keep).sum()),
        days_constant=int(constant.sum()),
    )
    for cid in dataset.consumers:
        report.retained_by_consumer[cid] = 0
    for cid, sl in days.consumer_slices().items():
        report.retained_by_consumer[cid] = sl.stop - sl.start
    report.consumers_without_days = [c for c, k in report.retained_by_consumer.items() if k == 0]
    for cid in report.consumers_without_days:
        log.warning("consumer %s has no retained days; excluded downstream", cid)
    report.check()
    return days, report


DAYS_FILE = "days.jsonl"
REPORT_FILE = "preprocess_report.json"


def write_days(days: DayBatch, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for c, d, v in zip(days.consumer, days.date, days.values.tolist()):
            fh.write(json.dumps({"consumer": c, "date": str(d), "values": v}, separators=(",", ":")) + "\n")


def read_days(path: str | Path) -> DayBatch:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing {path}")
    consumers, dates, values = [], [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            consumers.append(rec["consumer"])
            dates.append(rec["date"])
            values.append(rec["values"])
    return DayBatch(
        np.array(consumers, dtype=object),
        np.array(dates, dtype="datetime64[D]"),
        np.array(values, dtype=np.float64).reshape(-1, HOURS),
    )
