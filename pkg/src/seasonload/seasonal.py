"""Seasonal cluster-occupancy distributions and base-K relative entropy between adjacent seasons."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .ingestion import SEASON_NAMES, SeasonConfig, seasons_of

log = logging.getLogger(__name__)

DEFAULT_SMOOTHING = 0.5
DEFAULT_MIN_DAYS = 14


@dataclass(frozen=True)
class SeasonChange:
    source: int
    target: int

    def __post_init__(self) -> None:
        if (self.source, self.target) not in {(1, 2), (2, 3), (3, 4), (4, 1)}:
            raise ValueError(f"not an adjacent season change: {self.source}->{self.target}")

    @property
    def name(self) -> str:
        return f"{SEASON_NAMES[self.source]}_to_{SEASON_NAMES[self.target]}"

    @classmethod
    def from_name(cls, name: str) -> "SeasonChange":
        for c in SEASON_CHANGES:
            if c.name == name:
                return c
        raise ValueError(f"unknown season change {name!r}")


SEASON_CHANGES = (SeasonChange(1, 2), SeasonChange(2, 3), SeasonChange(3, 4), SeasonChange(4, 1))


@dataclass
class SeasonDistribution:
    consumer: str
    season: int
    probs: np.ndarray
    day_count: int
    counts: np.ndarray | None = None


@dataclass(frozen=True)
class EntropyRecord:
    consumer: str
    change: SeasonChange
    re: float


def occupancy(counts: np.ndarray, smoothing: float = DEFAULT_SMOOTHING) -> np.ndarray:
    counts = np.asarray(counts, dtype=np.float64)
    if smoothing < 0:
        raise ConfigError("smoothing must be >= 0")
    total = counts.sum() + smoothing * len(counts)
    if total <= 0:
        raise DataError("no days to form a distribution")
    return (counts + smoothing) / total


def season_distribution(clusters: np.ndarray, K: int, consumer: str = "", season: int = 0,
                        smoothing: float = DEFAULT_SMOOTHING,
                        min_days: int = DEFAULT_MIN_DAYS) -> SeasonDistribution | None:
    """Occupancy of clusters 1..K among ``clusters`` (the consumer's days in one season, pooled
    over years). ``None`` when fewer than ``min_days`` days are available."""
    clusters = np.asarray(clusters, dtype=np.int64)
    if len(clusters) < max(min_days, 1):
        return None
    if clusters.min() < 1 or clusters.max() > K:
        raise DataError(f"cluster labels outside 1..{K}")
    counts = np.bincount(clusters - 1, minlength=K)
    return SeasonDistribution(consumer, season, occupancy(counts, smoothing), len(clusters), counts)


def relative_entropy(p_from: np.ndarray, p_to: np.ndarray, K: int | None = None) -> float:
    """sum_k p_to[k] * log_K(p_to[k] / p_from[k]), weighted by the destination season.

    Terms with p_to[k] == 0 contribute 0; a zero in p_from under positive p_to gives inf.
    """
    p_from = np.asarray(p_from, dtype=np.float64)
    p_to = np.asarray(p_to, dtype=np.float64)
    if p_from.shape != p_to.shape:
        raise DataError(f"distributions over different K: {p_from.shape} vs {p_to.shape}")
    K = len(p_to) if K is None else K
    if K != len(p_to):
        raise DataError(f"K={K} does not match distribution length {len(p_to)}")
    if K < 2:
        raise DataError("relative entropy in base K needs K >= 2")
    mask = p_to > 0
    if np.any(p_from[mask] == 0):
        return math.inf
    terms = p_to[mask] * np.log(p_to[mask] / p_from[mask])
    return max(0.0, float(terms.sum()) / math.log(K))


def reference_pair(K: int, delta: float = 0.25) -> tuple[np.ndarray, np.ndarray]:
    """Uniform distribution and a copy with a fraction ``delta`` of every other cluster's mass moved
    onto cluster 1."""
    p = np.full(K, 1.0 / K)
    q = np.full(K, (1.0 - delta) / K)
    q[0] = 1.0 / K + delta * (K - 1) / K
    return p, q


@dataclass
class EntropyTable:
    K: int
    distributions: list[SeasonDistribution]
    records: list[EntropyRecord]
    insufficient: list[tuple[str, int, int]] = field(default_factory=list)  # consumer, season, days
    skipped: dict[str, int] = field(default_factory=dict)  # change name -> consumers skipped

    def by_change(self) -> dict[SeasonChange, list[EntropyRecord]]:
        out: dict[SeasonChange, list[EntropyRecord]] = {c: [] for c in SEASON_CHANGES}
        for r in self.records:
            out[r.change].append(r)
        return out

    @property
    def diagnostic_count(self) -> int:
        return sum(self.skipped.values())


def entropy_table(consumers: np.ndarray, dates: np.ndarray, clusters: np.ndarray, K: int,
                  seasons: SeasonConfig | None = None, smoothing: float = DEFAULT_SMOOTHING,
                  min_days: int = DEFAULT_MIN_DAYS) -> EntropyTable:
    """One record per consumer and adjacent season change where both seasons are eligible.

    Inputs are aligned per day and sorted by consumer.
    """
    season = seasons_of(dates, seasons)
    table = EntropyTable(K, [], [], skipped={c.name: 0 for c in SEASON_CHANGES})
    n = len(consumers)
    if n == 0:
        return table
    change_at = np.flatnonzero(consumers[1:] != consumers[:-1]) + 1
    bounds = zip([0, *change_at.tolist()], [*change_at.tolist(), n])
    for a, b in bounds:
        cid = str(consumers[a])
        dists: dict[int, SeasonDistribution] = {}
        for s in (1, 2, 3, 4):
            picked = clusters[a:b][season[a:b] == s]
            d = season_distribution(picked, K, cid, s, smoothing, min_days)
            if d is None:
                table.insufficient.append((cid, s, len(picked)))
            else:
                dists[s] = d
                table.distributions.append(d)
        for change in SEASON_CHANGES:
            if change.source in dists and change.target in dists:
                re = relative_entropy(dists[change.source].probs, dists[change.target].probs, K)
                table.records.append(EntropyRecord(cid, change, re))
            else:
                table.skipped[change.name] += 1
    if table.diagnostic_count:
        log.info("%d consumer/season-change pairs skipped for lack of days", table.diagnostic_count)
    return table


def boxplot_stats(values: Sequence[float]) -> dict[str, Any] | None:
    """Tukey box plot: whiskers at the most extreme points within 1.5 IQR of the quartiles."""
    x = np.sort(np.asarray([v for v in values if math.isfinite(v)], dtype=np.float64))
    if len(x) == 0:
        return None
    q1, med, q3 = (float(v) for v in np.percentile(x, [25, 50, 75]))
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = x[(x >= lo_fence) & (x <= hi_fence)]
    return {
        "n": int(len(x)),
        "min": float(inside.min()),
        "q1": q1,
        "median": med,
        "q3": q3,
        "max": float(inside.max()),
        "outliers": [float(v) for v in x if v < lo_fence or v > hi_fence],
    }


def boxplots_by_change(records: Iterable[EntropyRecord]) -> dict[str, dict[str, Any]]:
    grouped: dict[str, list[float]] = {c.name: [] for c in SEASON_CHANGES}
    for r in records:
        grouped[r.change.name].append(r.re)
    out = {}
    for name, vals in grouped.items():
        stats = boxplot_stats(vals)
        if stats is None:
            log.warning("no relative-entropy records for %s; omitted from box plot", name)
            continue
        out[name] = stats
    return out


DISTRIBUTIONS_FILE = "season_distributions.csv"
ENTROPY_FILE = "entropy.csv"
BOXPLOT_FILE = "entropy_boxplot.json"


def _fmt(x: float) -> str:
    return "inf" if math.isinf(x) else repr(float(x))


def write_entropy_outputs(directory: str | Path, table: EntropyTable, smoothing: float,
                          min_days: int) -> None:
    directory = Path(directory)
    with open(directory / DISTRIBUTIONS_FILE, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["consumer", "season", "day_count", *(f"p{k}" for k in range(1, table.K + 1))])
        for d in table.distributions:
            w.writerow([d.consumer, d.season, d.day_count, *map(_fmt, d.probs)])
    with open(directory / ENTROPY_FILE, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["consumer", "change", "re"])
        for r in table.records:
            w.writerow([r.consumer, r.change.name, _fmt(r.re)])
    payload = {
        "K": table.K,
        "smoothing": smoothing,
        "min_days": min_days,
        "skipped_by_change": table.skipped,
        "insufficient_consumer_seasons": len(table.insufficient),
        "boxplot": boxplots_by_change(table.records),
    }
    with open(directory / BOXPLOT_FILE, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=1, allow_nan=False)
        fh.write("\n")


def read_entropy_csv(path: str | Path) -> list[EntropyRecord]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing {path}")
    with open(path, encoding="utf-8", newline="") as fh:
        return [EntropyRecord(row["consumer"], SeasonChange.from_name(row["change"]), float(row["re"]))
                for row in csv.DictReader(fh)]
