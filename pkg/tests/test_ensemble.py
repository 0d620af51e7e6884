import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.base import clone

from koastack.ensemble import (
    GBDTClassifier, KNNClassifier, MetaLearnerSpec, RandomForestClassifier,
    SearchError, SearchGrid, StackingClassifier, StackingError, cross_val_search, log_loss,
    out_of_fold_probabilities, read_proba_csv, run_stack, select_base_learners, stack_features,
    stratified_kfold, write_proba_csv,
)
from koastack.ensemble.tree import grow_classification_tree, grow_newton_tree


def blobs(n=90, d=4, k=3, seed=0, spread=0.6):
    rng = np.random.default_rng(seed)
    centres = rng.normal(0, 3, (k, d))
    y = np.arange(n) % k
    return centres[y] + rng.normal(0, spread, (n, d)), y


def random_proba(rng, n, c):
    return rng.dirichlet(np.ones(c), n)


# --- selection and feature assembly -------------------------------------

def test_select_base_learners_keeps_those_above_threshold():
    acc = {"A": 0.673, "B": 0.631, "C": 0.575, "D": 0.327, "E": 0.03, "F": 0.258}
    assert select_base_learners(acc, 0.5) == ["A", "B", "C"]
    assert select_base_learners(acc, 0.0) == ["A", "B", "C", "D", "F", "E"]
    with pytest.raises(StackingError):
        select_base_learners(acc, 0.9)


def test_selection_threshold_is_strict():
    assert select_base_learners({"a": 0.5, "b": 0.51}, 0.5) == ["b"]


def test_stack_features_layout(rng):
    mats = {n: random_proba(rng, 7, 5) for n in "abc"}
    sf = stack_features(mats, ("a", "b", "c"))
    assert sf.matrix.shape == (7, 15)
    np.testing.assert_array_equal(sf.block("b"), mats["b"])
    single = stack_features([mats["a"]], ("a",))
    np.testing.assert_array_equal(single.matrix, mats["a"])
    swapped = stack_features(mats, ("c", "a", "b"))
    np.testing.assert_array_equal(swapped.matrix, np.hstack([mats["c"], mats["a"], mats["b"]]))


def test_stack_features_rejects_non_probabilities(rng):
    with pytest.raises(StackingError):
        stack_features([np.ones((3, 2))], ("a",))
    with pytest.raises(StackingError):
        stack_features([random_proba(rng, 3, 2), random_proba(rng, 4, 2)], ("a", "b"))


def test_proba_csv_round_trip(tmp_path, rng):
    p = random_proba(rng, 5, 3)
    write_proba_csv([f"s{i}" for i in range(5)], p, tmp_path / "p.csv")
    ids, back = read_proba_csv(tmp_path / "p.csv")
    assert ids == [f"s{i}" for i in range(5)]
    np.testing.assert_array_equal(back, p)


# --- KNN ----------------------------------------------------------------

def test_knn_examples():
    X = np.array([[0.0], [1.0], [1.1], [1.2], [5.0]])
    y = np.array([0, 2, 2, 4, 1])
    assert KNNClassifier(k=1).fit(X, y).predict([[5.0]])[0] == 1
    knn = KNNClassifier(k=3).fit(X, y)
    assert knn.predict([[1.05]])[0] == 2
    assert knn.predict_proba([[1.05]])[0, list(knn.classes_).index(2)] == pytest.approx(2 / 3)


def test_knn_vote_tie_goes_to_lower_class():
    X = np.array([[-1.0], [1.0], [-2.0], [2.0]])
    y = np.array([3, 1, 3, 1])
    assert KNNClassifier(k=4).fit(X, y).predict([[0.0]])[0] == 1


def test_knn_distance_tie_goes_to_lower_index():
    X = np.array([[1.0], [-1.0]])
    assert KNNClassifier(k=1).fit(X, [4, 2]).predict([[0.0]])[0] == 4


def test_knn_rejects_large_k():
    with pytest.raises(ValueError):
        KNNClassifier(k=5).fit(np.zeros((3, 2)), [0, 1, 0])


# --- trees and forests --------------------------------------------------

def test_single_tree_fits_separable_data():
    X, y = blobs(n=60, d=3, spread=0.3)
    tree = grow_classification_tree(X, y, 3, None, None, np.random.default_rng(0))
    assert np.array_equal(tree.predict(X).argmax(axis=1), y)


def test_forest_constant_labels():
    X = np.random.default_rng(0).normal(size=(20, 3))
    rf = RandomForestClassifier(n_trees=5).fit(X, [2] * 20)
    assert np.all(rf.predict(X) == 2)
    np.testing.assert_array_equal(rf.predict_proba(X), 1.0)


def test_forest_deterministic_and_seed_sensitive():
    X, y = blobs()
    a = RandomForestClassifier(n_trees=10, random_state=3).fit(X, y).predict_proba(X)
    b = RandomForestClassifier(n_trees=10, random_state=3).fit(X, y).predict_proba(X)
    c = RandomForestClassifier(n_trees=10, random_state=4).fit(X, y).predict_proba(X)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_forest_depth_limit():
    X, y = blobs(spread=2.0)
    rf = RandomForestClassifier(n_trees=5, max_depth=2).fit(X, y)
    assert max(t.depth() for t in rf.trees_) <= 2


def test_newton_tree_leaf_values():
    X = np.array([[0.0], [0.0], [1.0], [1.0]])
    g = np.array([1.0, 2.0, -1.0, -3.0])
    h = np.array([0.5, 0.5, 1.0, 1.0])
    t = grow_newton_tree(X, g, h, max_depth=1, reg=0.0)
    np.testing.assert_allclose(t.predict(X)[:, 0], [-3.0, -3.0, 2.0, 2.0])


# --- boosting -----------------------------------------------------------

@pytest.mark.parametrize("k", [2, 3])
def test_gbdt_zero_iterations_gives_priors(k):
    X, y = blobs(n=31, k=k)
    model = GBDTClassifier(iterations=0).fit(X, y)
    priors = np.bincount(y) / y.size
    np.testing.assert_array_equal(model.predict_proba(X), np.tile(priors, (31, 1)))


def test_gbdt_binary_stump_step_is_pooled_newton_step():
    X = np.zeros((10, 1))
    y = np.array([1] * 7 + [0] * 3)
    model = GBDTClassifier(depth=0, iterations=1, learning_rate=0.1).fit(X, y)
    # starting from the prior log-odds, the pooled gradient sum(p - y) vanishes
    p0 = 0.7
    g = 10 * p0 - 7
    step = -g / (10 * p0 * (1 - p0) + model.l2_reg)
    expected = 1 / (1 + np.exp(-(np.log(p0 / (1 - p0)) + 0.1 * step)))
    np.testing.assert_allclose(model.predict_proba(X)[:, 1], expected, rtol=1e-12)
    assert len(model.trees_) == 1 and model.trees_[0][0].n_nodes == 1


@pytest.mark.parametrize("k", [2, 4])
def test_gbdt_log_loss_non_increasing(k):
    X, y = blobs(n=80, k=k, spread=2.0)
    losses = []
    GBDTClassifier(depth=3, iterations=40, learning_rate=0.1).fit(X, y, monitor=lambda i, l: losses.append(l))
    assert len(losses) == 40
    assert np.all(np.diff(losses) <= 1e-9)
    assert losses[-1] < log_loss(np.tile(np.bincount(y) / y.size, (y.size, 1)), y)


def test_gbdt_parameter_validation():
    with pytest.raises(ValueError):
        GBDTClassifier(learning_rate=0).fit(np.zeros((4, 1)), [0, 1, 0, 1])


# --- cross-validated search ---------------------------------------------

@given(st.lists(st.integers(0, 3), min_size=12, max_size=60), st.integers(0, 100))
@settings(max_examples=30)
def test_stratified_kfold_partitions(y, seed):
    y = np.array(y)
    counts = np.bincount(y)
    if counts[counts > 0].min() < 3:
        return
    splits = stratified_kfold(y, 3, seed)
    val = np.concatenate([va for _, va in splits])
    assert sorted(val) == list(range(y.size))
    for tr, va in splits:
        assert not set(tr) & set(va)
        for c in np.unique(y):
            assert abs(np.sum(y[va] == c) - np.sum(y == c) / 3) < 1


def test_kfold_infeasible():
    with pytest.raises(SearchError):
        stratified_kfold([0, 0, 1, 1, 1], 3)


def test_single_cell_grid():
    X, y = blobs()
    r = cross_val_search("knn", SearchGrid({"k": [4]}, folds=3), X, y)
    assert r.best == MetaLearnerSpec("knn", {"k": 4}) and len(r.cells) == 1


def test_duplicate_best_cell_earlier_wins():
    X, y = blobs(spread=2.5)
    first = cross_val_search("knn", SearchGrid({"k": [1, 5, 9]}, folds=3), X, y)
    best_k = first.best.hyperparameters["k"]
    again = cross_val_search("knn", SearchGrid({"k": [1, 5, 9, best_k]}, folds=3), X, y)
    assert again.best_index == first.best_index


def test_search_reproducible():
    X, y = blobs(spread=1.5)
    grid = SearchGrid({"k": [1, 6]}, folds=3, seed=4)
    a = cross_val_search("knn", grid, X, y)
    b = cross_val_search("knn", grid, X, y)
    assert a.best == b.best and [c.fold_scores for c in a.cells] == [c.fold_scores for c in b.cells]


def test_random_search_visits_distinct_cells():
    X, y = blobs()
    r = cross_val_search("knn", SearchGrid({"k": [1, 2, 3, 4, 5]}, folds=3, mode="random", n_draws=3), X, y)
    assert len({c.index for c in r.cells}) == 3


def test_meta_spec_validation():
    with pytest.raises(SearchError):
        MetaLearnerSpec("svm")
    with pytest.raises(SearchError):
        MetaLearnerSpec("knn", {"k": 0})
    with pytest.raises(SearchError):
        SearchGrid({"k": []})


# --- stacking -----------------------------------------------------------

def _bases(X, y):
    return {"knn": KNNClassifier(k=5).fit(X, y), "rf": RandomForestClassifier(n_trees=8).fit(X, y)}


def test_passthrough_reproduces_base_learner():
    X, y = blobs(n=120, spread=2.0)
    bases = _bases(X[:90], y[:90])
    splits = {"train": (X[:90], y[:90]), "test": (X[90:], y[90:])}
    res = run_stack(bases, splits, MetaLearnerSpec("passthrough", {"block": 1, "n_classes": 3}), 3)
    test_report = [r for r in res.reports if r.split == "test"][0]
    assert test_report.accuracy == np.mean(bases["rf"].predict(X[90:]) == y[90:])


def test_in_sample_and_oof_share_test_features():
    X, y = blobs(n=120, spread=2.0)
    bases = _bases(X[:90], y[:90])
    splits = {"train": (X[:90], y[:90]), "test": (X[90:], y[90:])}
    spec = MetaLearnerSpec("knn", {"k": 3})
    in_sample = run_stack(bases, splits, spec, 3, mode="in_sample")
    oof = run_stack(bases, splits, spec, 3, mode="out_of_fold", folds=3)
    np.testing.assert_array_equal(in_sample.features["test"].matrix, oof.features["test"].matrix)
    assert not np.array_equal(in_sample.features["train"].matrix, oof.features["train"].matrix)


def test_out_of_fold_rows_come_from_unseen_models():
    X, y = blobs(n=60, spread=4.0)
    p = out_of_fold_probabilities(KNNClassifier(k=1), X, y, 3, folds=3)
    # a 1-NN model that had seen the row would always predict it perfectly
    np.testing.assert_array_equal(KNNClassifier(k=1).fit(X, y).predict_proba(X).argmax(axis=1), y)
    assert np.any(p.argmax(axis=1) != y)


def test_stacking_classifier_fit_and_clone():
    X, y = blobs(n=90, spread=1.5)
    stack = StackingClassifier([("knn", KNNClassifier(k=3)), ("rf", RandomForestClassifier(n_trees=5))],
                               KNNClassifier(k=5), n_classes=3)
    stack.fit(X, y)
    assert stack.transform(X).shape == (90, 6)
    assert stack.predict_proba(X).shape == (90, 3)
    assert clone(stack).get_params()["n_classes"] == 3


def test_run_stack_needs_test_split():
    X, y = blobs()
    with pytest.raises(StackingError):
        run_stack(_bases(X, y), {"train": (X, y)}, MetaLearnerSpec("knn", {"k": 3}), 3)
