import numpy as np
import pytest

from seasonload.clustering import ClusterParams, run_two_stage
from seasonload.errors import ConfigError, DegenerateInputError
from seasonload.ingestion import parse_load_csv, LoadFormatConfig, load_json
from seasonload.preprocessing import preprocess
from seasonload.synthetic import (
    CohortSpec, ShiftRule, cohort_dataset, default_prototypes, generate, income_shift_spec, planted_variation,
    seasonal_mixtures, write_cohort,
)

from conftest import dir_diffs

SMALL = dict(n_consumers=12, years=1)


def test_same_spec_byte_identical(tmp_path):
    for d in ("a", "b"):
        write_cohort(generate(CohortSpec(seed=7, **SMALL)), tmp_path / d)
    assert dir_diffs(tmp_path / "a", tmp_path / "b") == []
    different = generate(CohortSpec(seed=8, **SMALL))
    assert not np.array_equal(different.loads, generate(CohortSpec(seed=7, **SMALL)).loads)


def test_separability_enforced():
    near = [[0.0] * 24, [0.01] * 24]
    with pytest.raises(ConfigError):
        CohortSpec(prototypes=near, noise_sigma=0.03, **SMALL)
    CohortSpec(prototypes=near, noise_sigma=0.0, **SMALL)


def test_default_prototypes_separated():
    spec = CohortSpec(n_prototypes=8, **SMALL)
    P = np.array(spec.prototypes)
    d = np.linalg.norm(P[:, None] - P[None], axis=2)
    assert d[~np.eye(8, dtype=bool)].min() >= 4 * 0.03 * np.sqrt(24)
    assert len(default_prototypes(3)) == 3


def test_spec_validation():
    for bad in ({"archetypes": [[0.5, 0.4]]}, {"noise_sigma": -1}, {"n_consumers": 0},
                {"socio_rules": [{"shifts": {5: 0.1}}]}, {"socio_rules": [{"shifts": {1: 0.1}, "attribute": "pets"}]},
                {"bogus": 1}):
        with pytest.raises(ConfigError):
            CohortSpec.from_dict({**SMALL, "n_prototypes": 2, **bad})


def test_spec_dict_round_trip():
    spec = income_shift_spec(seed=3, n_consumers=5)
    again = CohortSpec.from_dict(spec.to_dict())
    assert again.to_dict() == spec.to_dict()


def test_mixtures_and_planted_labels():
    rules = [ShiftRule({2: 0.6}, 2, "income_level", 5), ShiftRule({2: 0.1}, 2)]
    base = np.array([0.75, 0.25, 0, 0, 0, 0])
    rich = {"income_level": 6}
    m = seasonal_mixtures(base, 0, rich, rules)
    for s in (1, 2, 3, 4):
        assert m[s].sum() == pytest.approx(1)
    assert m[2][2] == pytest.approx(0.6 + 0.4 * 0.1)
    assert planted_variation(rich, rules) == {"spring_to_summer": True, "summer_to_fall": True,
                                              "fall_to_winter": False, "winter_to_spring": False}
    assert not any(planted_variation({"income_level": 1}, rules).values())


def test_truth_manifest_contents():
    c = generate(income_shift_spec(seed=1, **SMALL))
    row = c.truth["consumers"][c.consumers[0]]
    assert set(row) >= {"mixtures", "planted_variation", "day_prototypes", "true_re", "socio"}
    assert len(row["day_prototypes"]) == len(c.dates) == 365
    for mix in row["mixtures"].values():
        assert sum(mix) == pytest.approx(1)
    assert (c.loads >= 0).all()


def test_csv_matches_in_memory(tmp_path):
    c = generate(CohortSpec(seed=2, **SMALL))
    paths = write_cohort(c, tmp_path)
    ds = parse_load_csv(paths["load"], LoadFormatConfig.from_dict(load_json(paths["load_format"])))
    mem = cohort_dataset(c)
    mem.socio = {}
    assert ds == mem


def test_magnitude_invariance_after_normalization():
    c = generate(CohortSpec(seed=4, **SMALL))
    ds = cohort_dataset(c)
    a, _ = preprocess(ds)
    b, _ = preprocess(ds.scaled(c.consumers[3], 10.0))
    assert a.values.tobytes() == b.values.tobytes()


def _purity(assign, truth):
    """Fraction of days whose cluster's majority prototype equals their own prototype."""
    good = 0
    for k in np.unique(assign):
        good += np.bincount(truth[assign == k]).max()
    return good / len(truth)


def test_recovery_small_cohort():
    c = generate(CohortSpec(n_consumers=30, years=1, n_prototypes=4, seed=11))
    days, _ = preprocess(cohort_dataset(c))
    _, model = run_two_stage(days, ClusterParams(k_range=(2, 3, 4, 5, 6)))
    truth = np.concatenate([c.truth["consumers"][cid]["day_prototypes"] for cid in c.consumers])
    assert model.K == 4
    assert _purity(model.day_assignment, truth) >= 0.95


def test_single_prototype_chain_aborts():
    spec = CohortSpec(prototypes=[default_prototypes(1)[0]], noise_sigma=0.0, **SMALL)
    days, _ = preprocess(cohort_dataset(generate(spec)))
    assert len(np.unique(days.values, axis=0)) == 1
    with pytest.raises(DegenerateInputError):
        run_two_stage(days)
