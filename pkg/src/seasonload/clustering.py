"""Two-stage K-Medoids load-pattern extraction with silhouette model selection.

Stage 1 reduces every consumer to at most four typical load profiles (TLPs),
stage 2 clusters the pooled TLPs into K representative patterns, and each
original day inherits the final cluster of the TLP it was assigned to.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .errors import ConfigError, DataError, DegenerateInputError, InvariantError
from .parallel import pmap
from .preprocessing import DayBatch

METRICS = {"euclidean": "euclidean", "manhattan": "cityblock"}
STAGE1_K = 4


def distance_matrix(points: np.ndarray, metric: str = "euclidean") -> np.ndarray:
    if metric not in METRICS:
        raise ConfigError(f"unknown metric {metric!r}; expected one of {sorted(METRICS)}")
    points = np.asarray(points, dtype=np.float64)
    if len(points) == 1:
        return np.zeros((1, 1))
    return squareform(pdist(points, METRICS[metric]))


@dataclass
class KMedoidsResult:
    medoids: np.ndarray
    labels: np.ndarray
    cost: float
    cost_history: list[float] = field(default_factory=list)
    n_iter: int = 0


def park_jun_init(dist: np.ndarray, k: int) -> np.ndarray:
    """The k most central points by normalized distance sum, skipping duplicates while possible."""
    row_sum = dist.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        scaled = np.where(row_sum[:, None] > 0, dist / row_sum[:, None], 0.0)
    order = np.argsort(scaled.sum(axis=0), kind="stable")
    chosen: list[int] = []
    for j in order:
        if not chosen or dist[j, chosen].min() > 0:
            chosen.append(int(j))
            if len(chosen) == k:
                return np.array(chosen)
    for j in order:  # fewer distinct points than k
        if j not in chosen:
            chosen.append(int(j))
            if len(chosen) == k:
                break
    return np.array(chosen)


def plusplus_init(dist: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(dist)
    chosen = [int(rng.integers(n))]
    closest = dist[chosen[0]].copy()
    while len(chosen) < k:
        weights = closest ** 2
        total = weights.sum()
        if total <= 0:
            rest = [j for j in range(n) if j not in chosen]
            chosen.append(rest[int(rng.integers(len(rest)))])
        else:
            chosen.append(int(rng.choice(n, p=weights / total)))
        closest = np.minimum(closest, dist[chosen[-1]])
    return np.array(chosen)


def _assign(dist: np.ndarray, medoids: np.ndarray) -> np.ndarray:
    labels = np.argmin(dist[:, medoids], axis=1)  # argmin: ties -> lowest medoid index
    labels[medoids] = np.arange(len(medoids))
    return labels


def _cost(dist: np.ndarray, medoids: np.ndarray, labels: np.ndarray) -> float:
    return float(dist[np.arange(len(dist)), medoids[labels]].sum())


def alternate(dist: np.ndarray, medoids: np.ndarray, max_iter: int = 100) -> KMedoidsResult:
    """Park-Jun alternation from the given initial medoids."""
    medoids = np.asarray(medoids, dtype=np.intp).copy()
    labels = _assign(dist, medoids)
    history = [_cost(dist, medoids, labels)]
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        for j in range(len(medoids)):
            members = np.flatnonzero(labels == j)
            within = dist[np.ix_(members, members)].sum(axis=1)
            medoids[j] = members[np.argmin(within)]  # members ascending: ties -> lowest point index
        new_labels = _assign(dist, medoids)
        history.append(_cost(dist, medoids, new_labels))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return KMedoidsResult(medoids, labels, history[-1], history, n_iter)


def kmedoids_from_distances(dist: np.ndarray, k: int, seed: int = 0, max_iter: int = 100,
                            n_init: int = 10) -> KMedoidsResult:
    n = len(dist)
    if n == 0:
        raise DataError("kmedoids: empty input")
    if k < 1 or k > n:
        raise DataError(f"kmedoids: k={k} invalid for {n} points")
    if max_iter < 1:
        raise ConfigError("max_iter must be >= 1")
    best = alternate(dist, park_jun_init(dist, k), max_iter)
    rng = np.random.default_rng(seed)
    for _ in range(1, n_init):
        run = alternate(dist, plusplus_init(dist, k, rng), max_iter)
        if run.cost < best.cost:
            best = run
    return best


def kmedoids(points: np.ndarray, k: int, metric: str = "euclidean", seed: int = 0,
             max_iter: int = 100, n_init: int = 10) -> KMedoidsResult:
    """K-Medoids on the rows of ``points``.

    The first run starts from the Park-Jun initialization; ``n_init - 1``
    further runs start from seeded k-medoids++ draws and the lowest-cost run
    wins (earliest on ties).
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or len(points) == 0:
        raise DataError("kmedoids: empty input")
    return kmedoids_from_distances(distance_matrix(points, metric), k, seed, max_iter, n_init)


def silhouette_from_distances(dist: np.ndarray, labels: np.ndarray) -> float:
    return float(silhouette_samples(dist, labels).mean())


def silhouette_samples(dist: np.ndarray, labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels)
    clusters = np.unique(labels)
    if len(clusters) < 2:
        raise DataError("silhouette undefined for a single cluster")
    n = len(labels)
    sums = np.empty((n, len(clusters)))
    sizes = np.empty(len(clusters))
    for c_idx, c in enumerate(clusters):
        members = labels == c
        sums[:, c_idx] = dist[:, members].sum(axis=1)
        sizes[c_idx] = members.sum()
    own = np.searchsorted(clusters, labels)
    rows = np.arange(n)
    own_size = sizes[own]
    a = np.where(own_size > 1, sums[rows, own] / np.maximum(own_size - 1, 1), 0.0)
    mean_to = sums / sizes
    mean_to[rows, own] = np.inf
    b = mean_to.min(axis=1)
    denom = np.maximum(a, b)
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(denom > 0, (b - a) / denom, 0.0)
    s[own_size == 1] = 0.0
    return s


def silhouette(points: np.ndarray, labels: np.ndarray, metric: str = "euclidean") -> float:
    return silhouette_from_distances(distance_matrix(points, metric), labels)


@dataclass
class TypicalLoadProfile:
    consumer: str
    index: int  # 1-based within the consumer
    values: np.ndarray
    member_days: list[dt.date]

    def to_dict(self) -> dict[str, Any]:
        return {
            "consumer": self.consumer,
            "index": self.index,
            "values": self.values.tolist(),
            "member_days": [d.isoformat() for d in self.member_days],
        }


@dataclass
class Stage1Result:
    consumer: str
    tlps: list[TypicalLoadProfile]
    day_labels: np.ndarray  # 0-based TLP position per day of this consumer


def stage1_tlps(consumer: str, dates: np.ndarray, values: np.ndarray, metric: str = "euclidean",
                seed: int = 0, max_iter: int = 100, n_init: int = 10) -> Stage1Result:
    if len(values) == 0:
        raise DataError(f"consumer {consumer}: no retained days")
    distinct = len(np.unique(values, axis=0))
    k = min(STAGE1_K, distinct)
    res = kmedoids(values, k, metric, seed, max_iter, n_init)
    tlps = []
    for j, m in enumerate(res.medoids):
        members = np.flatnonzero(res.labels == j)
        tlps.append(TypicalLoadProfile(consumer, j + 1, values[m].copy(),
                                       [dates[i].item() for i in members]))
    return Stage1Result(consumer, tlps, res.labels)


@dataclass
class ClusterModel:
    """Stage-2 result. Cluster labels are 1..K everywhere outside this module's internals."""

    K: int
    medoids: np.ndarray
    medoid_tlps: list[tuple[str, int]]
    tlp_keys: list[tuple[str, int]]
    tlp_assignment: np.ndarray  # 1..K per entry of tlp_keys
    silhouette_by_k: dict[int, float]
    seed: int
    metric: str
    day_assignment: np.ndarray | None = None  # 1..K aligned with the DayBatch rows

    def to_dict(self) -> dict[str, Any]:
        return {
            "K": self.K,
            "metric": self.metric,
            "seed": self.seed,
            "silhouette_by_k": {str(k): v for k, v in sorted(self.silhouette_by_k.items())},
            "medoids": self.medoids.tolist(),
            "medoid_tlps": [{"consumer": c, "index": i} for c, i in self.medoid_tlps],
            "tlp_assignment": [
                {"consumer": c, "index": i, "cluster": int(k)}
                for (c, i), k in zip(self.tlp_keys, self.tlp_assignment)
            ],
        }

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> "ClusterModel":
        rows = payload["tlp_assignment"]
        return cls(
            K=int(payload["K"]),
            medoids=np.array(payload["medoids"], dtype=np.float64),
            medoid_tlps=[(m["consumer"], int(m["index"])) for m in payload["medoid_tlps"]],
            tlp_keys=[(r["consumer"], int(r["index"])) for r in rows],
            tlp_assignment=np.array([int(r["cluster"]) for r in rows], dtype=np.int64),
            silhouette_by_k={int(k): float(v) for k, v in payload["silhouette_by_k"].items()},
            seed=int(payload["seed"]),
            metric=payload["metric"],
        )


def stage2_cluster(tlps: Sequence[TypicalLoadProfile], k_range: Sequence[int] = range(2, 11),
                   metric: str = "euclidean", seed: int = 0, max_iter: int = 100,
                   n_init: int = 10) -> ClusterModel:
    k_values = sorted(set(int(k) for k in k_range))
    if not k_values:
        raise ConfigError("k_range is empty")
    if k_values[0] < 2:
        raise ConfigError("k_range must start at 2 or above")
    points = np.array([t.values for t in tlps], dtype=np.float64).reshape(-1, 24)
    if len(points) == 0:
        raise DataError("stage 2: no TLPs")
    distinct = len(np.unique(points, axis=0))
    if distinct < 2:
        raise DegenerateInputError(
            f"stage 2: all {len(points)} TLPs are identical; no cluster structure to select K from")
    usable = [k for k in k_values if k <= distinct]
    if not usable:
        raise DegenerateInputError(f"stage 2: only {distinct} distinct TLPs, below min k={k_values[0]}")

    dist = distance_matrix(points, metric)
    runs = pmap(lambda k: kmedoids_from_distances(dist, k, seed, max_iter, n_init), usable)
    scores = {k: silhouette_from_distances(dist, r.labels) for k, r in zip(usable, runs)}
    best_k = usable[0]
    for k in usable[1:]:
        if scores[k] > scores[best_k]:
            best_k = k
    best = runs[usable.index(best_k)]

    # canonical labels: clusters ordered by the position of their medoid among the TLPs
    order = np.argsort(best.medoids, kind="stable")
    relabel = np.empty(best_k, dtype=np.int64)
    relabel[order] = np.arange(1, best_k + 1)
    medoid_idx = best.medoids[order]
    keys = [(t.consumer, t.index) for t in tlps]
    return ClusterModel(
        K=best_k,
        medoids=points[medoid_idx].copy(),
        medoid_tlps=[keys[i] for i in medoid_idx],
        tlp_keys=keys,
        tlp_assignment=relabel[best.labels],
        silhouette_by_k=scores,
        seed=seed,
        metric=metric,
    )


def assign_days(days: DayBatch, stage1: Sequence[Stage1Result], model: ClusterModel) -> ClusterModel:
    """Final cluster of each day = stage-2 cluster of the TLP stage 1 gave it."""
    lookup = {key: int(k) for key, k in zip(model.tlp_keys, model.tlp_assignment)}
    by_consumer = {r.consumer: r for r in stage1}
    out = np.zeros(len(days), dtype=np.int64)
    for cid, sl in days.consumer_slices().items():
        res = by_consumer.get(cid)
        if res is None or len(res.day_labels) != sl.stop - sl.start:
            raise InvariantError(f"consumer {cid}: stage-1 labels do not match retained days")
        try:
            cluster_of = np.array([lookup[(cid, t.index)] for t in res.tlps])
        except KeyError as exc:
            raise InvariantError(f"TLP {exc} missing from stage-2 assignment") from exc
        out[sl] = cluster_of[res.day_labels]
    model.day_assignment = out
    return model


@dataclass(frozen=True)
class ClusterParams:
    metric: str = "euclidean"
    seed: int = 0
    k_range: tuple[int, ...] = tuple(range(2, 11))
    max_iter: int = 100
    n_init: int = 10

    def __post_init__(self) -> None:
        if self.metric not in METRICS:
            raise ConfigError(f"unknown metric {self.metric!r}")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be >= 1")
        if self.n_init < 1:
            raise ConfigError("n_init must be >= 1")
        if not self.k_range:
            raise ConfigError("k_range is empty")

    @classmethod
    def from_dict(cls, payload: dict[str, Any] | None) -> "ClusterParams":
        payload = dict(payload or {})
        kr = payload.pop("k_range", None)
        try:
            params = cls(**payload) if kr is None else cls(k_range=parse_k_range(kr), **payload)
        except TypeError as exc:
            raise ConfigError(f"bad clustering params: {exc}") from exc
        return params

    def to_dict(self) -> dict[str, Any]:
        return {"metric": self.metric, "seed": self.seed, "k_range": list(self.k_range),
                "max_iter": self.max_iter, "n_init": self.n_init}


def parse_k_range(raw: Any) -> tuple[int, ...]:
    """Accepts "2..10", "2-10", "2,3,5", [2, 10] (inclusive bounds) or an explicit list."""
    if isinstance(raw, str):
        for sep in ("..", "-"):
            if sep in raw:
                lo, hi = raw.split(sep, 1)
                return tuple(range(int(lo), int(hi) + 1))
        return tuple(int(x) for x in raw.split(",") if x.strip())
    raw = [int(x) for x in raw]
    if len(raw) == 2 and raw[0] < raw[1]:
        return tuple(range(raw[0], raw[1] + 1))
    return tuple(raw)


def run_two_stage(days: DayBatch, params: ClusterParams = ClusterParams()
                  ) -> tuple[list[Stage1Result], ClusterModel]:
    slices = days.consumer_slices()
    if not slices:
        raise DataError("no retained days to cluster")

    def one(item: tuple[str, slice]) -> Stage1Result:
        cid, sl = item
        return stage1_tlps(cid, days.date[sl], days.values[sl], params.metric, params.seed,
                           params.max_iter, params.n_init)

    stage1 = pmap(one, list(slices.items()))
    tlps = [t for r in stage1 for t in r.tlps]
    model = stage2_cluster(tlps, params.k_range, params.metric, params.seed, params.max_iter, params.n_init)
    return stage1, assign_days(days, stage1, model)


TLPS_FILE = "tlps.jsonl"
MODEL_FILE = "cluster_model.json"
ASSIGNMENTS_FILE = "day_assignments.csv"


def write_cluster_outputs(directory: str | Path, days: DayBatch, stage1: Sequence[Stage1Result],
                          model: ClusterModel) -> None:
    directory = Path(directory)
    with open(directory / TLPS_FILE, "w", encoding="utf-8", newline="\n") as fh:
        for r in stage1:
            for t in r.tlps:
                fh.write(json.dumps(t.to_dict(), separators=(",", ":")) + "\n")
    with open(directory / MODEL_FILE, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(model.to_dict(), fh, indent=1)
        fh.write("\n")
    with open(directory / ASSIGNMENTS_FILE, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["consumer", "date", "cluster"])
        w.writerows(zip(days.consumer, days.date.astype(str), model.day_assignment.tolist()))
