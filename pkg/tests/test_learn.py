"""Forest training, macro-accuracy, selection, nested CV, and ablations."""

import numpy as np
import pytest
from featuregen import build_feature_matrix, build_task_dataset, permute_labels

from ctxsense.config import AnalysisConfig
from ctxsense.errors import MetricError, SpecError, TrainError
from ctxsense.features import TaskKind
from ctxsense.learn import (
    ForestParams,
    anova_f_scores,
    conditioning_benchmark,
    kbest_curve,
    macro_accuracy,
    mutual_info_scores,
    nlopocv,
    permutation_importance,
    select_k_best,
    train_forest,
)

QUICK = AnalysisConfig(
    n_trees=30, ccp_alphas=(0.0,), inner="kfold", inner_folds=3,
    n_bootstrap=400, permutation_repeats=3,
)


# ---------------------------------------------------------------- macro accuracy


def test_macro_perfect_prediction():
    assert macro_accuracy(np.array([0, 1, 1, 0]), np.array([0, 1, 1, 0])) == 1.0


def test_macro_hand_example():
    truth = np.array([0, 0, 1, 1])
    pred = np.array([0, 0, 1, 0])
    assert macro_accuracy(truth, pred) == 0.75


def test_macro_constant_prediction_is_half():
    truth = np.array([0] * 9 + [1])  # heavy imbalance
    assert macro_accuracy(truth, np.zeros(10, dtype=int)) == 0.5


def test_macro_missing_class_is_undefined():
    with pytest.raises(MetricError):
        macro_accuracy(np.zeros(4, dtype=int), np.zeros(4, dtype=int), classes=(0, 1))


def test_macro_rejects_empty_or_misaligned():
    with pytest.raises(SpecError):
        macro_accuracy(np.array([]), np.array([]))
    with pytest.raises(SpecError):
        macro_accuracy(np.array([0, 1]), np.array([0]))


def test_macro_invariant_to_relabeling():
    rng = np.random.default_rng(0)
    truth = rng.integers(0, 2, size=60)
    pred = rng.integers(0, 2, size=60)
    assert macro_accuracy(truth, pred) == macro_accuracy(1 - truth, 1 - pred)


def test_macro_invariant_to_duplicating_a_class():
    truth = np.array([0, 0, 1, 1, 1])
    pred = np.array([0, 1, 1, 0, 1])
    ones = truth == 1
    truth2 = np.concatenate([truth, truth[ones]])
    pred2 = np.concatenate([pred, pred[ones]])
    assert macro_accuracy(truth, pred) == macro_accuracy(truth2, pred2)


# ---------------------------------------------------------------- forest


def separable(n=200, d=5, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    return X, (X[:, 1] > 0).astype(int)


def test_separable_training_data_is_learned():
    X, y = separable()
    model = train_forest(X, y, ForestParams(n_trees=60, seed=0))
    assert macro_accuracy(y, model.predict(X)) == 1.0


def test_single_class_is_a_train_error():
    X, _ = separable()
    with pytest.raises(TrainError):
        train_forest(X, np.zeros(len(X), dtype=int), ForestParams(n_trees=5))
    with pytest.raises(TrainError):
        train_forest(np.empty((0, 3)), np.empty(0), ForestParams(n_trees=5))


def test_infinite_pruning_leaves_majority_stumps():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(90, 4))
    y = np.array([0] * 60 + [1] * 30)
    model = train_forest(X, y, ForestParams(n_trees=25, ccp_alpha=np.inf, seed=0))
    assert np.all(model.predict(rng.normal(size=(40, 4))) == 0)
    assert all(t.tree_.node_count == 1 for t in model.forest.estimators_)


def test_forest_is_deterministic_given_seed():
    X, y = separable(seed=3)
    grid = np.random.default_rng(5).normal(size=(50, 5))
    a = train_forest(X, y, ForestParams(n_trees=40, seed=9)).predict(grid)
    b = train_forest(X, y, ForestParams(n_trees=40, seed=9)).predict(grid)
    assert np.array_equal(a, b)


def test_permuted_labels_score_at_chance_out_of_bag():
    accs = []
    for s in range(20):
        rng = np.random.default_rng(100 + s)
        X = rng.normal(size=(120, 8))
        y = rng.permutation(np.repeat([0, 1], 60))
        model = train_forest(X, y, ForestParams(n_trees=60, seed=s))
        pred, covered = model.oob_predict(X)
        accs.append(macro_accuracy(y[covered], pred[covered]))
    assert abs(np.mean(accs) - 0.5) <= 0.05


def test_prediction_invariant_to_monotone_transform():
    X, y = separable(n=80, d=3, seed=6)
    params = ForestParams(n_trees=30, seed=2)
    plain = train_forest(X, y, params).predict(X)
    warped = np.sign(X) * np.abs(X) ** 3
    transformed = train_forest(warped, y, params).predict(warped)
    assert np.array_equal(plain, transformed)


def test_invalid_forest_params():
    with pytest.raises(SpecError):
        ForestParams(n_trees=0)
    with pytest.raises(SpecError):
        ForestParams(ccp_alpha=-0.1)


# ---------------------------------------------------------------- selection


def test_label_copy_ranks_first_for_both_selectors():
    rng = np.random.default_rng(2)
    y = rng.integers(0, 2, size=150)
    X = rng.normal(size=(150, 6))
    X[:, 4] = y
    assert np.argmax(anova_f_scores(X, y)) == 4
    assert np.argmax(mutual_info_scores(X, y)) == 4
    for method in ("anova", "mutual_info"):
        assert 4 in select_k_best(X, y, 1, method)


def test_constant_feature_scores_zero():
    rng = np.random.default_rng(3)
    y = rng.integers(0, 2, size=100)
    X = rng.normal(size=(100, 3))
    X[:, 1] = 7.0
    assert anova_f_scores(X, y)[1] == 0.0
    assert mutual_info_scores(X, y)[1] == 0.0


def test_planted_pair_selected_at_k2():
    dataset = build_task_dataset(
        n_participants=10, shifts={2: 2.5, 7: -2.5}, noise_sd=0.5, seed=5
    )
    for method in ("anova", "mutual_info"):
        assert set(select_k_best(dataset.X, dataset.y, 2, method)) == {2, 7}


def test_k_equal_to_width_is_identity():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(50, 13))
    y = rng.integers(0, 2, size=50)
    assert np.array_equal(select_k_best(X, y, 13), np.arange(13))


def test_selection_ties_break_to_lower_index():
    y = np.array([0, 0, 1, 1])
    x = np.array([1.0, 2.0, 3.0, 4.0])
    X = np.column_stack([x, x, x])  # identical scores
    assert np.array_equal(select_k_best(X, y, 2), [0, 1])


def test_selection_rejects_bad_k_or_method():
    X = np.random.default_rng(0).normal(size=(20, 4))
    y = np.repeat([0, 1], 10)
    with pytest.raises(SpecError):
        select_k_best(X, y, 0)
    with pytest.raises(SpecError):
        select_k_best(X, y, 5)
    with pytest.raises(SpecError):
        select_k_best(X, y, 2, "chi2")


# ---------------------------------------------------------------- nested CV


def test_one_fold_per_participant():
    dataset = build_task_dataset(n_participants=9, rows_per_class=3, seed=1)
    report = nlopocv(dataset, QUICK, seed=0)
    assert len(report.folds) == 9
    assert sorted(f.participant for f in report.folds) == sorted(set(dataset.participants))
    assert report.skipped == ()
    assert report.mean_accuracy == pytest.approx(
        np.mean([f.accuracy for f in report.folds])
    )


def test_separable_task_scores_high():
    dataset = build_task_dataset(
        n_participants=10, rows_per_class=4, shifts={2: 3.0, 7: 3.0}, noise_sd=0.3, seed=5
    )
    report = nlopocv(dataset, QUICK, seed=0)
    assert report.mean_accuracy >= 0.95


def test_permuted_labels_score_at_chance():
    means = []
    for s in range(5):
        dataset = build_task_dataset(
            n_participants=10, rows_per_class=4, shifts={2: 3.0}, noise_sd=0.3, seed=5
        )
        report = nlopocv(permute_labels(dataset, seed=60 + s), QUICK, seed=s)
        means.append(report.mean_accuracy)
    assert abs(np.mean(means) - 0.5) <= 0.05


def test_single_class_holdout_is_skipped_and_recorded(caplog):
    dataset = build_task_dataset(n_participants=6, rows_per_class=3, seed=8)
    keep = ~((np.asarray(dataset.participants) == "P002") & (dataset.y == 1))
    from ctxsense.features import TaskDataset

    trimmed = TaskDataset(
        task=dataset.task, X=dataset.X[keep], y=dataset.y[keep],
        participants=tuple(np.asarray(dataset.participants)[keep]),
        events=tuple(np.asarray(dataset.events)[keep]),
        feature_names=dataset.feature_names, class_names=dataset.class_names,
        conditioning=dataset.conditioning,
    )
    report = nlopocv(trimmed, QUICK, seed=0)
    assert report.skipped == ("P002",)
    assert len(report.folds) == 5


def test_nlopocv_needs_multiple_participants():
    dataset = build_task_dataset(n_participants=1, rows_per_class=4, seed=0)
    with pytest.raises(TrainError):
        nlopocv(dataset, QUICK, seed=0)


def test_nlopocv_is_bit_reproducible():
    dataset = build_task_dataset(n_participants=8, rows_per_class=4, shifts={1: 1.0}, seed=7)
    grid = AnalysisConfig(
        n_trees=20, ccp_alphas=(0.0, 0.01), inner="kfold", inner_folds=3,
        n_bootstrap=400, permutation_repeats=3,
    )
    a = nlopocv(dataset, grid, seed=3, jobs=4)
    b = nlopocv(dataset, grid, seed=3, jobs=1)
    assert a.to_dict() == b.to_dict()
    c = nlopocv(dataset, grid, seed=4)
    assert a.to_dict() != c.to_dict()


def test_report_dict_shape():
    dataset = build_task_dataset(n_participants=5, rows_per_class=3, seed=2)
    payload = nlopocv(dataset, QUICK, seed=0).to_dict()
    assert set(payload) == {
        "task", "k", "mean_accuracy", "sem", "n_folds", "skipped", "folds"
    }
    fold = payload["folds"][0]
    assert set(fold) == {
        "participant", "n_test", "accuracy", "ccp_alpha", "selector", "feature_indices"
    }


# ---------------------------------------------------------------- k-best curve


def test_planted_pair_minimal_k_is_two():
    dataset = build_task_dataset(
        n_participants=12, rows_per_class=8, shifts={2: 1.6, 7: -1.6}, noise_sd=1.0, seed=300
    )
    cfg = AnalysisConfig(
        n_trees=40, ccp_alphas=(0.0,), inner="kfold", inner_folds=3,
        n_bootstrap=400, permutation_repeats=3,
    )
    curve = kbest_curve(dataset, cfg, seed=0, ks=(1, 2, 3, 13))
    assert curve.minimal_k == 2
    by_k = {p.k: p.mean_accuracy for p in curve.points}
    assert by_k[2] > by_k[1] + 0.05


def test_pure_noise_curve_is_flat_at_chance():
    dataset = build_task_dataset(n_participants=10, rows_per_class=4, noise_sd=1.0, seed=11)
    curve = kbest_curve(dataset, QUICK, seed=0, ks=(1, 2, 3, 13))
    assert curve.minimal_k == 1
    for point in curve.points:
        assert abs(point.mean_accuracy - 0.5) <= 0.15


def test_curve_with_no_valid_k():
    dataset = build_task_dataset(n_participants=5, rows_per_class=3, n_features=4, seed=0)
    with pytest.raises(SpecError):
        kbest_curve(dataset, QUICK, seed=0, ks=(5, 6))


# ---------------------------------------------------------------- importance


def test_constant_feature_importance_is_negligible():
    rng = np.random.default_rng(12)
    signal = rng.normal(size=300)
    y = (signal > 0).astype(int)
    X = np.column_stack([signal, np.full(300, 3.0)])
    model = train_forest(X, y, ForestParams(n_trees=80, seed=3))
    report = permutation_importance(model, X, y, ("signal", "flat"), n_repeats=10, seed=0)
    assert abs(report.mean_drop[1]) < 0.02


def test_sole_predictive_feature_drop_near_half():
    rng = np.random.default_rng(13)
    X = rng.normal(size=(200, 1))
    y = (X[:, 0] > 0).astype(int)
    model = train_forest(X, y, ForestParams(n_trees=80, seed=1))
    report = permutation_importance(model, X, y, ("only",), n_repeats=10, seed=0)
    assert report.mean_drop[0] > 0.4


def test_redundant_copies_split_the_credit():
    rng = np.random.default_rng(14)
    signal = rng.normal(size=300)
    y = (signal > 0).astype(int)
    noise = rng.normal(size=(300, 1))
    sole = np.column_stack([signal, noise])
    redundant = np.column_stack([signal, signal, noise])
    model_s = train_forest(sole, y, ForestParams(n_trees=80, seed=2))
    model_r = train_forest(redundant, y, ForestParams(n_trees=80, seed=2))
    drop_sole = permutation_importance(
        model_s, sole, y, ("s", "n"), n_repeats=10, seed=0
    ).mean_drop[0]
    drops_red = permutation_importance(
        model_r, redundant, y, ("s1", "s2", "n"), n_repeats=10, seed=0
    ).mean_drop
    assert drops_red[0] < drop_sole and drops_red[1] < drop_sole


def test_importance_is_deterministic():
    X, y = separable(n=100, d=4, seed=15)
    model = train_forest(X, y, ForestParams(n_trees=40, seed=0))
    names = ("a", "b", "c", "d")
    a = permutation_importance(model, X, y, names, n_repeats=5, seed=7)
    b = permutation_importance(model, X, y, names, n_repeats=5, seed=7)
    assert a == b


def test_importance_input_validation():
    X, y = separable(n=60, d=3, seed=16)
    model = train_forest(X, y, ForestParams(n_trees=20, seed=0))
    with pytest.raises(SpecError):
        permutation_importance(model, X, y, ("a", "b"), n_repeats=5, seed=0)
    with pytest.raises(SpecError):
        permutation_importance(model, X, y, ("a", "b", "c"), n_repeats=0, seed=0)


# ---------------------------------------------------------------- conditioning


def test_centering_beats_raw_under_participant_offsets():
    matrix = build_feature_matrix(
        n_participants=8, during_social={9: 1.0, 12: 0.8},
        participant_sd=3.0, noise_sd=0.3, seed=21,
    )
    report = conditioning_benchmark(
        matrix, [TaskKind.ALONE_SOCIAL, TaskKind.DURING_PREPOST], QUICK, seed=0
    )
    cells = {c.label: c.mean_accuracy for c in report.cells}
    assert set(cells) == {"raw", "centered", "scaled", "centered_scaled"}
    assert cells["centered"] >= cells["raw"] + 0.05
    assert report.best().label in ("centered", "centered_scaled")


def test_no_participant_effects_means_no_conditioning_gap():
    # a well-separated task with no baselines to remove: every variant
    # should sit at the same ceiling
    matrix = build_feature_matrix(
        n_participants=10, during_social={9: 2.5, 12: 2.0},
        participant_sd=0.0, noise_sd=0.3, seed=22,
    )
    report = conditioning_benchmark(matrix, [TaskKind.ALONE_SOCIAL], QUICK, seed=0)
    accs = [c.mean_accuracy for c in report.cells]
    assert max(accs) - min(accs) <= 0.05


def test_conditioning_requires_raw_input():
    from ctxsense.features import condition_matrix

    matrix = build_feature_matrix(n_participants=4, seed=23)
    centered = condition_matrix(matrix, center=True, scale=False)
    with pytest.raises(SpecError):
        conditioning_benchmark(centered, [TaskKind.ALONE_SOCIAL], QUICK, seed=0)


def test_conditioning_report_dict():
    matrix = build_feature_matrix(n_participants=5, during_social={9: 1.0}, seed=24)
    payload = conditioning_benchmark(matrix, [TaskKind.ALONE_SOCIAL], QUICK, seed=0).to_dict()
    assert set(payload) == {"cells", "best"}
    assert [c["conditioning"] for c in payload["cells"]] == [
        "raw", "centered", "scaled", "centered_scaled"
    ]
    assert set(payload["cells"][0]) == {
        "conditioning", "center", "scale", "per_task", "mean_accuracy", "sem"
    }
