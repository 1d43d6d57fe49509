import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seasonload.classification import (
    ThresholdSpec, TreeParams, best_split, build_variation_datasets, classify, compute_threshold, cross_validate,
    linear_quantile, predictor_importance, stratified_folds, thresholds_for, train_tree, write_classify_outputs,
)
from seasonload.errors import ConfigError, DataError
from seasonload.ingestion import SocioProfile
from seasonload.seasonal import SEASON_CHANGES, EntropyRecord, SeasonChange

from oracles import gini_root_brute

S2S = SeasonChange(1, 2)


def test_quantile_threshold_example():
    assert compute_threshold(ThresholdSpec(), [0.1, 0.2, 0.3], 4) == pytest.approx(0.23333333333333334)
    assert linear_quantile([0.3, 0.1, 0.2], 2 / 3) == pytest.approx(np.quantile([0.1, 0.2, 0.3], 2 / 3))


def test_quantile_with_inf():
    assert linear_quantile([0.1, 0.2, math.inf], 0.5) == 0.2
    assert linear_quantile([0.1, 0.2, math.inf], 1.0) == math.inf


def test_absolute_threshold():
    assert compute_threshold(ThresholdSpec("absolute", 0.05), [], 4) == 0.05


def test_reference_threshold():
    t = compute_threshold(ThresholdSpec.from_dict({"mode": "reference_distribution"}), [], 4)
    q = [0.4375, 0.1875, 0.1875, 0.1875]
    assert t == pytest.approx(sum(x * math.log(x / 0.25, 4) for x in q), abs=1e-12)


def test_threshold_spec_validation():
    for bad in ({"mode": "x"}, {"parameter": 1.5}, {"mode": "absolute", "parameter": -1}, {"scope": "x"},
                {"bogus": 1}):
        with pytest.raises(ConfigError):
            ThresholdSpec.from_dict(bad)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 5, allow_nan=False), min_size=1, max_size=200))
def test_quantile_calibration(values):
    t = linear_quantile(values, 2 / 3)
    at_or_below = sum(v <= t for v in values)
    assert abs(at_or_below - math.ceil(2 * len(values) / 3)) <= 1 or len(set(values)) < len(values)


def _socio(n, rng):
    return {f"C{i}": SocioProfile(f"C{i}", {"kids": int(rng.integers(0, 3)), "seniors": int(rng.integers(0, 2))},
                                  int(rng.integers(0, 8)), int(rng.integers(0, 5))) for i in range(n)}


def test_labels_strict_inequality():
    socio = {c: SocioProfile(c, {"kids": 0}, 1, 1) for c in "ABC"}
    recs = [EntropyRecord("A", S2S, 0.30), EntropyRecord("B", S2S, 0.20), EntropyRecord("C", S2S, 0.1),
            EntropyRecord("Z", S2S, 0.9)]
    ds = build_variation_datasets(recs, socio, {c: 0.20 for c in SEASON_CHANGES}, ["kids"])[S2S]
    assert ds.consumers == ["A", "B", "C"]
    assert ds.y.tolist() == [1, 0, 0]
    assert ds.excluded_no_socio == 1
    assert ds.feature_names == ["kids", "income_level", "education_level"]


def test_per_change_thresholds():
    recs = [EntropyRecord("A", S2S, 0.1), EntropyRecord("A", SeasonChange(2, 3), 0.5)]
    pooled = thresholds_for(recs, ThresholdSpec(), 4)
    assert len(set(pooled.values())) == 1
    per = thresholds_for(recs, ThresholdSpec(scope="per_change"), 4)
    assert per[S2S] == 0.1 and per[SeasonChange(2, 3)] == 0.5 and per[SeasonChange(3, 4)] == math.inf


def test_separable_single_split():
    X = np.arange(10, dtype=float)[:, None]
    y = (X[:, 0] >= 3).astype(int)
    tree = train_tree(X, y, min_leaf=1)
    assert tree.split_count == 1
    assert tree.nodes[0].threshold == 2.5
    assert (tree.predict(X) == y).all()


def test_constant_features_give_stump():
    X = np.ones((20, 3))
    y = np.array([0, 1] * 10)
    tree = train_tree(X, y)
    assert tree.split_count == 0
    assert predictor_importance(tree).tolist() == [0, 0, 0]


def test_single_class_stump():
    tree = train_tree(np.random.default_rng(0).random((12, 2)), np.zeros(12, int))
    assert tree.split_count == 0 and tree.nodes[0].prediction == 0


def test_leaf_tie_goes_to_no_variation():
    tree = train_tree(np.ones((4, 1)), np.array([0, 1, 0, 1]))
    assert tree.nodes[0].prediction == 0


def test_importance_single_split_on_income():
    X = np.zeros((20, 3))
    X[:, 1] = np.repeat([1, 6], 10)
    y = (X[:, 1] > 3).astype(int)
    tree = train_tree(X, y)
    assert predictor_importance(tree).tolist() == [0.0, 1.0, 0.0]


def _random_dataset(rng, n=None):
    n = n or int(rng.integers(20, 200))
    X = rng.integers(0, 6, (n, 4)).astype(float)
    logit = X[:, 0] - X[:, 2] + rng.normal(0, 1.5, n)
    return X, (logit > np.median(logit)).astype(int)


def test_tree_invariants(rng):
    for _ in range(30):
        X, y = _random_dataset(rng)
        tree = train_tree(X, y)
        assert tree.split_count <= 20
        for node in tree.nodes:
            if not node.is_leaf:
                assert node.left is not None and node.right is not None
                assert node.impurity_decrease > 0
        leaves = tree.leaf_index(X)
        for leaf in set(leaves.tolist()):
            counts = np.bincount(y[leaves == leaf], minlength=2)
            assert tree.nodes[leaf].prediction == int(np.argmax(counts))
            assert counts.sum() >= 5
        imp = predictor_importance(tree)
        assert (imp >= 0).all() and (imp.sum() == 0 or abs(imp.sum() - 1) <= 1e-9)


def test_root_split_matches_brute_force(rng):
    for _ in range(25):
        X, y = _random_dataset(rng, int(rng.integers(15, 120)))
        got = best_split(X, y, np.arange(len(y)), 5)
        want = gini_root_brute(X.tolist(), y.tolist(), 5)
        assert got is not None and abs(got[0] - want) <= 1e-9


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_monotone_transform_keeps_partition(seed):
    rng = np.random.default_rng(seed)
    X, y = _random_dataset(rng, 80)
    Xt = X.copy()
    Xt[:, 0] = np.exp(X[:, 0])
    Xt[:, 2] = X[:, 2] ** 3 + 7
    a, b = train_tree(X, y), train_tree(Xt, y)
    assert np.array_equal(a.leaf_index(X), b.leaf_index(Xt))
    assert np.array_equal(a.predict(X), b.predict(Xt))
    assert np.argsort(-predictor_importance(a), kind="stable").tolist() == \
        np.argsort(-predictor_importance(b), kind="stable").tolist()


def test_folds_partition_arithmetic():
    fold = stratified_folds(np.array([0] * 6 + [1] * 4), 5, 0)
    assert np.bincount(fold).tolist() == [2] * 5
    y = np.array([0] * 30 + [1] * 20)
    fold = stratified_folds(y, 5, 3)
    for k in range(5):
        assert (y[fold == k] == 1).sum() == 4


def test_folds_too_few_rows():
    with pytest.raises(DataError):
        stratified_folds(np.array([0, 1, 0]), 5, 0)
    with pytest.raises(ConfigError):
        stratified_folds(np.array([0, 1, 0]), 1, 0)


def test_cross_validate_deterministic_and_summaries(rng):
    X, y = _random_dataset(rng, 100)
    a, b = cross_validate(X, y, seed=4), cross_validate(X, y, seed=4)
    assert a.fold_accuracy == b.fold_accuracy
    assert sum(a.fold_sizes) == 100
    assert a.mean == pytest.approx(np.mean(a.fold_accuracy))
    assert a.std == pytest.approx(np.std(a.fold_accuracy))


def test_cross_validate_separable():
    X = np.concatenate([np.arange(25.0), np.arange(100.0, 125.0)])[:, None]
    y = (X[:, 0] >= 100).astype(int)
    assert cross_validate(X, y, min_leaf=1).fold_accuracy == [1.0] * 5


def test_classify_end_to_end(tmp_path, rng):
    socio = _socio(60, rng)
    recs = []
    for change in SEASON_CHANGES:
        for cid, p in socio.items():
            recs.append(EntropyRecord(cid, change, 0.05 * p.income_level + rng.normal(0, 0.01)))
    results = classify(recs, socio, ["kids", "seniors"], 6)
    for r in results.values():
        assert r.error is None
        assert r.dataset.feature_names[int(np.argmax(r.importance))] == "income_level"
        assert r.tree.split_count <= 20
    write_classify_outputs(tmp_path, results, ThresholdSpec(), TreeParams())
    lines = (tmp_path / "importance.csv").read_text().splitlines()
    assert len(lines) == 1 + 4 * 4
    for change in SEASON_CHANGES:
        assert (tmp_path / f"tree_{change.name}.json").exists()


def test_classify_reports_small_dataset(rng):
    socio = _socio(3, rng)
    recs = [EntropyRecord(c, S2S, 0.1 * i) for i, c in enumerate(socio)]
    results = classify(recs, socio, ["kids", "seniors"], 4)
    assert results[S2S].error and results[SeasonChange(2, 3)].error
