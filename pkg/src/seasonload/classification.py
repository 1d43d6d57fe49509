"""Variation labelling by relative-entropy threshold and per-season-change CART classifiers."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .ingestion import SocioProfile
from .seasonal import SEASON_CHANGES, EntropyRecord, SeasonChange, reference_pair, relative_entropy

log = logging.getLogger(__name__)

NO_VARIATION, VARIATION = 0, 1
LABEL_NAMES = {NO_VARIATION: "no_variation", VARIATION: "variation"}
GAIN_EPS = 1e-12


@dataclass(frozen=True)
class ThresholdSpec:
    mode: str = "quantile"
    parameter: float = 2.0 / 3.0
    scope: str = "pooled"  # one threshold over all changes, or "per_change"

    def __post_init__(self) -> None:
        if self.mode not in {"reference_distribution", "quantile", "absolute"}:
            raise ConfigError(f"unknown threshold mode {self.mode!r}")
        if self.mode == "quantile" and not 0 < self.parameter < 1:
            raise ConfigError("quantile must lie in (0, 1)")
        if self.mode == "absolute" and self.parameter < 0:
            raise ConfigError("absolute threshold must be >= 0")
        if self.mode == "reference_distribution" and not 0 < self.parameter < 1:
            raise ConfigError("reference shift fraction must lie in (0, 1)")
        if self.scope not in {"pooled", "per_change"}:
            raise ConfigError(f"unknown threshold scope {self.scope!r}")

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any] | None) -> "ThresholdSpec":
        payload = dict(payload or {})
        if "parameter" not in payload and payload.get("mode") == "reference_distribution":
            payload["parameter"] = 0.25
        try:
            return cls(**payload)
        except TypeError as exc:
            raise ConfigError(f"bad threshold spec: {exc}") from exc

    def to_dict(self) -> dict[str, Any]:
        return {"mode": self.mode, "parameter": self.parameter, "scope": self.scope}


def linear_quantile(values: Sequence[float], q: float) -> float:
    """Linear-interpolation quantile (numpy's default) that tolerates +inf entries."""
    x = sorted(values)
    if not x:
        raise DataError("quantile of an empty sample")
    pos = q * (len(x) - 1)
    lo = math.floor(pos)
    frac = pos - lo
    if frac == 0 or lo + 1 >= len(x):
        return float(x[lo])
    return float(x[lo] + frac * (x[lo + 1] - x[lo]))


def compute_threshold(spec: ThresholdSpec, values: Sequence[float], K: int) -> float:
    if spec.mode == "absolute":
        return float(spec.parameter)
    if spec.mode == "reference_distribution":
        p, q = reference_pair(K, spec.parameter)
        return relative_entropy(p, q, K)
    if not len(values):
        raise DataError("no relative-entropy records to calibrate the threshold on")
    return linear_quantile(values, spec.parameter)


@dataclass
class VariationDataset:
    change: SeasonChange
    consumers: list[str]
    X: np.ndarray
    y: np.ndarray
    re: np.ndarray
    feature_names: list[str]
    threshold: float
    excluded_no_socio: int = 0

    def __len__(self) -> int:
        return len(self.y)


def build_variation_datasets(records: Sequence[EntropyRecord], socio: Mapping[str, SocioProfile],
                             thresholds: Mapping[SeasonChange, float], bands: Sequence[str]
                             ) -> dict[SeasonChange, VariationDataset]:
    """Label variation iff RE > threshold (ties go to no_variation)."""
    bands = list(bands)
    names = [*bands, "income_level", "education_level"]
    out = {}
    for change in SEASON_CHANGES:
        rows = [r for r in records if r.change == change]
        kept = [r for r in rows if r.consumer in socio]
        thr = thresholds[change]
        X = np.array([socio[r.consumer].features(bands) for r in kept], dtype=np.float64).reshape(-1, len(names))
        re = np.array([r.re for r in kept], dtype=np.float64)
        out[change] = VariationDataset(
            change=change,
            consumers=[r.consumer for r in kept],
            X=X,
            y=(re > thr).astype(np.int64),
            re=re,
            feature_names=names,
            threshold=thr,
            excluded_no_socio=len(rows) - len(kept),
        )
    return out


@dataclass
class Node:
    id: int
    depth: int
    counts: np.ndarray
    prediction: int
    feature: int | None = None
    threshold: float | None = None
    left: int | None = None
    right: int | None = None
    impurity_decrease: float = 0.0  # weighted by node size, in units of training rows

    @property
    def is_leaf(self) -> bool:
        return self.feature is None


@dataclass
class DecisionTree:
    nodes: list[Node]
    n_features: int
    n_train: int
    feature_names: list[str] = field(default_factory=list)

    @property
    def split_count(self) -> int:
        return sum(not n.is_leaf for n in self.nodes)

    def leaf_index(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        out = np.empty(len(X), dtype=np.int64)
        for i, x in enumerate(X):
            node = self.nodes[0]
            while not node.is_leaf:
                node = self.nodes[node.left if x[node.feature] <= node.threshold else node.right]
            out[i] = node.id
        return out

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.array([self.nodes[i].prediction for i in self.leaf_index(X)], dtype=np.int64)

    def to_dict(self) -> dict[str, Any]:
        names = self.feature_names or [f"x{i}" for i in range(self.n_features)]
        return {
            "n_train": self.n_train,
            "split_count": self.split_count,
            "features": names,
            "nodes": [
                {
                    "id": n.id,
                    "depth": n.depth,
                    "class_counts": {LABEL_NAMES[c]: int(v) for c, v in enumerate(n.counts)},
                    "prediction": LABEL_NAMES[n.prediction],
                    **({} if n.is_leaf else {
                        "feature": names[n.feature],
                        "threshold": n.threshold,
                        "left": n.left,
                        "right": n.right,
                        "impurity_decrease": n.impurity_decrease / self.n_train,
                    }),
                }
                for n in self.nodes
            ],
        }


def _weighted_gini(c0: np.ndarray, c1: np.ndarray) -> np.ndarray:
    """n * gini(node) = n - (c0^2 + c1^2) / n, elementwise."""
    n = c0 + c1
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(n > 0, n - (c0 * c0 + c1 * c1) / np.maximum(n, 1), 0.0)


def best_split(X: np.ndarray, y: np.ndarray, rows: np.ndarray, min_leaf: int
               ) -> tuple[float, int, float] | None:
    """(decrease, feature, threshold) maximizing the weighted Gini decrease at this node.

    Candidates are midpoints between adjacent distinct values; ties go to the lowest
    feature index, then the lowest threshold.
    """
    yy = y[rows].astype(np.float64)
    n = len(rows)
    total1 = yy.sum()
    parent = float(_weighted_gini(np.array([n - total1]), np.array([total1]))[0])
    best: tuple[float, int, float] | None = None
    for f in range(X.shape[1]):
        x = X[rows, f]
        order = np.argsort(x, kind="stable")
        xs, ys = x[order], yy[order]
        left1 = np.cumsum(ys)[:-1]
        n_left = np.arange(1, n, dtype=np.float64)
        valid = (xs[1:] != xs[:-1]) & (n_left >= min_leaf) & (n - n_left >= min_leaf)
        if not valid.any():
            continue
        idx = np.flatnonzero(valid)
        nl, l1 = n_left[idx], left1[idx]
        dec = parent - _weighted_gini(nl - l1, l1) - _weighted_gini((n - nl) - (total1 - l1), total1 - l1)
        i = int(np.argmax(dec))  # first max = lowest threshold
        if best is None or dec[i] > best[0] + GAIN_EPS:
            best = (float(dec[i]), f, float((xs[idx[i]] + xs[idx[i] + 1]) / 2))
    return best


def train_tree(X: np.ndarray, y: np.ndarray, max_splits: int = 20, min_leaf: int = 5,
               feature_names: Sequence[str] = ()) -> DecisionTree:
    """Best-first CART: repeatedly split the frontier leaf with the largest Gini decrease."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if max_splits < 0 or min_leaf < 1:
        raise ConfigError("max_splits must be >= 0 and min_leaf >= 1")

    def make(rows: np.ndarray, depth: int) -> Node:
        counts = np.bincount(y[rows], minlength=2)
        return Node(len(nodes), depth, counts, int(np.argmax(counts)))

    nodes: list[Node] = []
    all_rows = np.arange(len(y))
    nodes.append(make(all_rows, 0))
    tree = DecisionTree(nodes, X.shape[1] if X.ndim == 2 else 0, len(y), list(feature_names))
    if len(y) < 2 * min_leaf or len(np.unique(y)) < 2:
        log.warning("degenerate training set (%d rows, classes %s); returning a stump",
                    len(y), sorted(set(y.tolist())))
        return tree

    rows_of = {0: all_rows}
    candidates: dict[int, tuple[float, int, float] | None] = {0: best_split(X, y, all_rows, min_leaf)}
    while tree.split_count < max_splits:
        pick = None
        for nid in sorted(candidates):  # ties -> earliest node
            cand = candidates[nid]
            if cand is not None and cand[0] > GAIN_EPS and (pick is None or cand[0] > candidates[pick][0] + GAIN_EPS):
                pick = nid
        if pick is None:
            break
        dec, f, thr = candidates.pop(pick)
        node, rows = nodes[pick], rows_of.pop(pick)
        go_left = X[rows, f] <= thr
        node.feature, node.threshold, node.impurity_decrease = f, thr, dec
        for part in (rows[go_left], rows[~go_left]):
            child = make(part, node.depth + 1)
            nodes.append(child)
            if node.left is None:
                node.left = child.id
            else:
                node.right = child.id
            pure = child.counts.min() == 0
            rows_of[child.id] = part
            candidates[child.id] = None if pure else best_split(X, y, part, min_leaf)
    return tree


def predictor_importance(tree: DecisionTree) -> np.ndarray:
    imp = np.zeros(tree.n_features)
    for n in tree.nodes:
        if not n.is_leaf:
            imp[n.feature] += n.impurity_decrease
    total = imp.sum()
    return imp / total if total > 0 else imp


@dataclass
class CVResult:
    fold_accuracy: list[float]
    fold_sizes: list[int]
    warnings: list[str] = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.fold_accuracy))

    @property
    def std(self) -> float:
        return float(np.std(self.fold_accuracy))


def stratified_folds(y: np.ndarray, folds: int, seed: int) -> np.ndarray:
    """Fold index per row: shuffle within each class, then deal round-robin over the
    class-ordered sequence so folds are balanced in size and label mix."""
    y = np.asarray(y)
    if folds < 2:
        raise ConfigError("folds must be >= 2")
    if len(y) < folds:
        raise DataError(f"{len(y)} rows cannot fill {folds} folds")
    rng = np.random.default_rng(seed)
    order = np.concatenate([rng.permutation(np.flatnonzero(y == c)) for c in np.unique(y)])
    fold = np.empty(len(y), dtype=np.int64)
    fold[order] = np.arange(len(y)) % folds
    return fold


def cross_validate(X: np.ndarray, y: np.ndarray, folds: int = 5, seed: int = 0, max_splits: int = 20,
                   min_leaf: int = 5) -> CVResult:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    fold = stratified_folds(y, folds, seed)
    res = CVResult([], [])
    for k in range(folds):
        test = fold == k
        if len(np.unique(y[test])) < 2 or len(np.unique(y[~test])) < 2:
            res.warnings.append(f"fold {k}: a class is missing")
        tree = train_tree(X[~test], y[~test], max_splits, min_leaf)
        res.fold_accuracy.append(float((tree.predict(X[test]) == y[test]).mean()))
        res.fold_sizes.append(int(test.sum()))
    for w in res.warnings:
        log.warning(w)
    return res


@dataclass(frozen=True)
class TreeParams:
    max_splits: int = 20
    min_leaf: int = 5
    folds: int = 5
    seed: int = 0

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any] | None) -> "TreeParams":
        try:
            return cls(**(payload or {}))
        except TypeError as exc:
            raise ConfigError(f"bad tree params: {exc}") from exc

    def to_dict(self) -> dict[str, Any]:
        return {"max_splits": self.max_splits, "min_leaf": self.min_leaf, "folds": self.folds, "seed": self.seed}


@dataclass
class ClassifierResult:
    dataset: VariationDataset
    tree: DecisionTree | None
    importance: np.ndarray | None
    cv: CVResult | None
    error: str | None = None


def thresholds_for(records: Sequence[EntropyRecord], spec: ThresholdSpec, K: int) -> dict[SeasonChange, float]:
    if spec.scope == "pooled" or spec.mode != "quantile":
        t = compute_threshold(spec, [r.re for r in records], K)
        return {c: t for c in SEASON_CHANGES}
    out = {}
    for c in SEASON_CHANGES:
        vals = [r.re for r in records if r.change == c]
        out[c] = compute_threshold(spec, vals, K) if vals else math.inf
    return out


def classify(records: Sequence[EntropyRecord], socio: Mapping[str, SocioProfile], bands: Sequence[str],
             K: int, spec: ThresholdSpec = ThresholdSpec(), params: TreeParams = TreeParams()
             ) -> dict[SeasonChange, ClassifierResult]:
    from .parallel import pmap

    datasets = build_variation_datasets(records, socio, thresholds_for(records, spec, K), bands)

    def fit(change: SeasonChange) -> ClassifierResult:
        ds = datasets[change]
        if len(ds) == 0:
            return ClassifierResult(ds, None, None, None, f"{change.name}: empty dataset")
        tree = train_tree(ds.X, ds.y, params.max_splits, params.min_leaf, ds.feature_names)
        try:
            cv = cross_validate(ds.X, ds.y, params.folds, params.seed, params.max_splits, params.min_leaf)
        except DataError as exc:
            return ClassifierResult(ds, tree, predictor_importance(tree), None, str(exc))
        return ClassifierResult(ds, tree, predictor_importance(tree), cv)

    results = dict(zip(SEASON_CHANGES, pmap(fit, SEASON_CHANGES)))
    for r in results.values():
        if r.error:
            log.error("classifier %s", r.error)
    return results


LABELS_FILE = "labels.csv"
IMPORTANCE_FILE = "importance.csv"
CV_FILE = "cv_metrics.json"


def write_classify_outputs(directory: str | Path, results: Mapping[SeasonChange, ClassifierResult],
                           spec: ThresholdSpec, params: TreeParams) -> None:
    directory = Path(directory)
    with open(directory / LABELS_FILE, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["consumer", "change", "re", "threshold", "label"])
        for change, r in results.items():
            ds = r.dataset
            for cid, re, lab in zip(ds.consumers, ds.re.tolist(), ds.y.tolist()):
                w.writerow([cid, change.name, repr(re), repr(ds.threshold), LABEL_NAMES[lab]])
    with open(directory / IMPORTANCE_FILE, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["change", "feature", "importance"])
        for change, r in results.items():
            if r.importance is None:
                continue
            for name, v in zip(r.dataset.feature_names, r.importance.tolist()):
                w.writerow([change.name, name, repr(v)])
    metrics: dict[str, Any] = {"threshold_spec": spec.to_dict(), "tree_params": params.to_dict(), "changes": {}}
    for change, r in results.items():
        ds = r.dataset
        entry: dict[str, Any] = {
            "threshold": ds.threshold if math.isfinite(ds.threshold) else None,
            "n_rows": len(ds),
            "n_variation": int(ds.y.sum()),
            "excluded_no_socio": ds.excluded_no_socio,
            "split_count": None if r.tree is None else r.tree.split_count,
            "error": r.error,
        }
        if r.cv is not None:
            entry.update(fold_accuracy=r.cv.fold_accuracy, fold_sizes=r.cv.fold_sizes,
                         mean_accuracy=r.cv.mean, std_accuracy=r.cv.std, warnings=r.cv.warnings)
        metrics["changes"][change.name] = entry
        if r.tree is not None:
            with open(directory / f"tree_{change.name}.json", "w", encoding="utf-8", newline="\n") as fh:
                json.dump(r.tree.to_dict(), fh, indent=1)
                fh.write("\n")
    with open(directory / CV_FILE, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(metrics, fh, indent=1, allow_nan=False)
        fh.write("\n")
