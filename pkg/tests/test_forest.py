import numpy as np
import pytest

from bcops.data import Dataset
from bcops.learners import LearnerConfig, fit_binary, fit_multiclass, score
from bcops.learners.forest import RandomForest

from conftest import two_blob_data


def test_refit_is_bit_exact():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((80, 4))
    y = (X[:, 0] > 0).astype(int)
    a = RandomForest(n_trees=10, seed=3).fit(X, y, 2)
    b = RandomForest(n_trees=10, seed=3).fit(X, y, 2)
    for ta, tb in zip(a.trees, b.trees):
        np.testing.assert_array_equal(ta.feature, tb.feature)
        np.testing.assert_array_equal(ta.threshold, tb.threshold)
        np.testing.assert_array_equal(ta.leaf_class, tb.leaf_class)
    np.testing.assert_array_equal(a.predict_proba(X), b.predict_proba(X))


def test_vote_granularity():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((60, 3))
    y = (X[:, 0] + 0.3 * rng.standard_normal(60) > 0).astype(int)
    forest = RandomForest(n_trees=7, seed=0).fit(X, y, 2)
    probs = forest.predict_proba(rng.standard_normal((50, 3)))
    scaled = probs * 7
    np.testing.assert_allclose(scaled, np.round(scaled), atol=1e-12)


def test_single_point_per_class_single_tree():
    # one tree over two one-sample classes votes 0 or 1, nothing between
    forest = RandomForest(n_trees=1, min_leaf=5, seed=2).fit(
        np.array([[0.0], [1.0]]), np.array([0, 1]), 2
    )
    assert forest.predict_proba(np.array([[0.5]]))[0, 1] in (0.0, 1.0)


class TestFitBinary:
    def test_separated_blobs(self):
        # oracle: Bayes rule on N(+5) vs N(-5) is ~certain at the centers
        pos, neg = two_blob_data(np.random.default_rng(0), n_per=200)
        scorer = fit_binary(pos, neg, LearnerConfig(kind="rf", seed=0))
        assert score(scorer, np.array([5.0])) > 0.9
        assert score(scorer, np.array([-5.0])) < 0.1

    def test_identical_distributions_score_half(self):
        rng = np.random.default_rng(5)
        pos = Dataset(rng.standard_normal((200, 3)))
        neg = Dataset(rng.standard_normal((200, 3)))
        scorer = fit_binary(pos, neg, LearnerConfig(kind="rf", seed=1))
        fresh = rng.standard_normal((400, 3))
        assert abs(scorer.scores(fresh).mean() - 0.5) < 0.1

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            fit_binary(
                Dataset(np.zeros((3, 2))), Dataset(np.zeros((3, 3))), LearnerConfig()
            )

    def test_too_few_samples(self):
        with pytest.raises(ValueError):
            fit_binary(Dataset(np.zeros((1, 2))), Dataset(np.zeros((5, 2))), LearnerConfig())

    def test_constant_feature_tolerated(self):
        rng = np.random.default_rng(2)
        pos = Dataset(np.column_stack([rng.standard_normal(30) + 3, np.ones(30)]))
        neg = Dataset(np.column_stack([rng.standard_normal(30) - 3, np.ones(30)]))
        for kind in ("rf", "glm"):
            scorer = fit_binary(pos, neg, LearnerConfig(kind=kind, seed=0))
            assert score(scorer, np.array([3.0, 1.0])) > 0.8


class TestFitMulticlass:
    def test_three_separated_gaussians(self):
        rng = np.random.default_rng(3)
        X = np.vstack(
            [rng.standard_normal((120, 2)) + c for c in ([0, 0], [7, 0], [0, 7])]
        )
        y = np.repeat([1, 2, 3], 120)
        model = fit_multiclass(Dataset(X, y, 3), LearnerConfig(kind="rf", seed=0))
        fresh = np.vstack(
            [rng.standard_normal((60, 2)) + c for c in ([0, 0], [7, 0], [0, 7])]
        )
        fresh_y = np.repeat([1, 2, 3], 60)
        probs = model.prob_matrix(fresh)
        assert (probs.argmax(axis=1) + 1 == fresh_y).mean() > 0.95
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)

    def test_missing_class_rejected(self):
        ds = Dataset(np.zeros((4, 1)) + np.arange(4)[:, None], np.array([1, 1, 1, 1]), 2)
        with pytest.raises(ValueError):
            fit_multiclass(ds, LearnerConfig(kind="rf"))
