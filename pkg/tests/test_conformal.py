import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st

from bcops.conformal import (
    CalibratedClassScorer,
    PredictionSetModel,
    bcops_fit,
    bcops_full_conformal,
    conformal_rank,
    conformal_rank_batch,
    conformal_threshold,
    dls_fit,
    irs_fit,
    members_from_ranks,
    predict_set,
    predict_sets,
)
from bcops.data import OUTLIER_ID, Dataset, generate_paper_sim
from bcops.learners import LearnerConfig, fit_binary


class TestRank:
    def test_hand_enumerated(self):
        # 1 self + indicators for 0.1 and 0.2 -> 3 of 5
        calib = np.array([0.1, 0.2, 0.3, 0.4])
        assert conformal_rank(0.25, calib) == pytest.approx(3 / 5)

    def test_below_all(self):
        calib = np.array([0.1, 0.2, 0.3])
        assert conformal_rank(0.0, calib) == pytest.approx(1 / 4)

    def test_at_or_above_max(self):
        calib = np.array([0.1, 0.2, 0.3])
        assert conformal_rank(0.3, calib) == 1.0
        assert conformal_rank(9.9, calib) == 1.0

    def test_empty_calibration(self):
        with pytest.raises(ValueError):
            conformal_rank(0.5, np.array([]))

    def test_batch_matches_scalar(self):
        rng = np.random.default_rng(0)
        calib = np.sort(rng.standard_normal(20))
        vs = rng.standard_normal(50)
        batch = conformal_rank_batch(vs, calib)
        np.testing.assert_array_equal(batch, [conformal_rank(v, calib) for v in vs])

    def test_random_ties_match_deterministic_on_continuous_scores(self):
        rng = np.random.default_rng(1)
        calib = np.sort(rng.standard_normal(30))
        v = rng.standard_normal()
        assert conformal_rank(v, calib, rng=rng) == conformal_rank(v, calib)

    def test_random_ties_spread_over_tied_block(self):
        calib = np.array([1.0, 1.0, 1.0, 2.0])
        rng = np.random.default_rng(2)
        seen = {conformal_rank(1.0, calib, rng=rng) for _ in range(200)}
        assert seen == {1 / 5, 2 / 5, 3 / 5, 4 / 5}
        assert conformal_rank(1.0, calib) == pytest.approx(4 / 5)

    def test_uniform_under_exchangeability(self):
        # chi-square goodness of fit over the m+1 rank atoms
        rng = np.random.default_rng(3)
        m = 19
        reps = 10_000
        draws = rng.random((reps, m + 1))
        ranks = np.array(
            [conformal_rank(row[-1], np.sort(row[:-1])) for row in draws]
        )
        counts = np.bincount(np.round(ranks * (m + 1)).astype(int) - 1, minlength=m + 1)
        assert scipy.stats.chisquare(counts).pvalue > 0.001


class TestThreshold:
    @pytest.mark.parametrize(
        "m,alpha,expected",
        [(99, 0.05, 0.05), (99, 0.0, 0.0), (4, 0.5, 0.4), (10, 1.0, 1.0)],
    )
    def test_values(self, m, alpha, expected):
        assert conformal_threshold(m, alpha) == pytest.approx(expected)

    def test_bad_inputs(self):
        with pytest.raises(ValueError):
            conformal_threshold(0, 0.5)
        with pytest.raises(ValueError):
            conformal_threshold(5, 1.5)


@st.composite
def rank_instances(draw):
    # values live on a 1e-6 grid so the float image of a strictly
    # increasing transform cannot collapse distinct inputs into ties
    m = draw(st.integers(min_value=1, max_value=40))
    calib = draw(
        st.lists(
            st.floats(min_value=-30, max_value=30, allow_nan=False),
            min_size=m,
            max_size=m,
        )
    )
    v = draw(st.floats(min_value=-30, max_value=30, allow_nan=False))
    return np.sort(np.round(np.asarray(calib), 6)), round(v, 6)


@settings(max_examples=80, deadline=None)
@given(inst=rank_instances())
def test_rank_invariant_under_increasing_transform(inst):
    calib, v = inst
    base = conformal_rank(v, calib)
    for transform in (lambda z: 3.0 * z + 1.0, np.expm1, lambda z: z**3):
        assert conformal_rank(float(transform(v)), np.sort(transform(calib))) == base


@settings(max_examples=60, deadline=None)
@given(
    ranks=st.lists(st.integers(min_value=1, max_value=21), min_size=1, max_size=8),
    alphas=st.tuples(
        st.floats(min_value=0, max_value=1), st.floats(min_value=0, max_value=1)
    ),
)
def test_nested_membership_in_alpha(ranks, alphas):
    m = 20
    rank_row = np.array(ranks, dtype=float)[None, :] / (m + 1)
    sizes = np.full_like(rank_row, m, dtype=np.int64)
    lo, hi = min(alphas), max(alphas)
    members_hi = members_from_ranks(rank_row, sizes, hi)
    members_lo = members_from_ranks(rank_row, sizes, lo)
    assert np.all(members_lo | ~members_hi)  # hi-members subset of lo-members


class _StubScore:
    """Score function returning a fixed coordinate, for wiring-free tests."""

    def __init__(self, column=0, transform=None):
        self.column = column
        self.transform = transform or (lambda v: v)

    def scores(self, X):
        return self.transform(np.asarray(X)[:, self.column])


def _stub_model(calib_by_class, method="dls"):
    """Single-entry-per-class model over 1-D features (score = x itself)."""
    k_count = len(calib_by_class)
    test_entries = {}
    train_entries = {}
    for k, calib in calib_by_class.items():
        test_entries[(k, 0)] = CalibratedClassScorer(
            class_id=k, scorer_fold=1, calib_fold=2, scorer=_StubScore(), calib_scores=calib
        )
        for t in (1, 2):
            train_entries[(k, t)] = CalibratedClassScorer(
                class_id=k,
                scorer_fold=3 - t,
                calib_fold=3 - t,
                scorer=_StubScore(),
                calib_scores=calib,
            )
    return PredictionSetModel(
        method=method,
        class_count=k_count,
        p=1,
        seed=0,
        learner=None,
        test_entries=test_entries,
        train_entries=train_entries,
        train_fold_of=np.array([1, 2], dtype=np.int8),
        test_fold_of=None,
    )


class TestPredictSet:
    def test_alpha_zero_full_set(self):
        model = _stub_model({1: np.arange(9.0), 2: np.arange(9.0) + 100})
        ps = predict_set(model, np.array([-50.0]), alpha=0.0)
        assert ps.members == (1, 2)

    def test_alpha_one_needs_top_rank(self):
        # threshold 1 accepts only scores at or above the calibration max
        model = _stub_model({1: np.arange(9.0)})
        assert predict_set(model, np.array([8.0]), alpha=1.0).members == (1,)
        assert predict_set(model, np.array([7.5]), alpha=1.0).members == ()

    def test_membership_matches_rank_threshold_rule(self):
        calib = np.linspace(0, 1, 19)
        model = _stub_model({1: calib})
        for x in (-0.5, 0.11, 0.49, 0.9, 2.0):
            for alpha in (0.05, 0.3, 0.77):
                ps = predict_set(model, np.array([x]), alpha=alpha)
                expected = ps.ranks[0] >= conformal_threshold(19, alpha)
                assert (1 in ps.members) == expected

    def test_bcops_requires_fold_hint(self, paper_sim, glm):
        train, test, _ = paper_sim
        model = bcops_fit(train, test, glm, seed=0)
        with pytest.raises(ValueError):
            predict_set(model, test.features[0], fold_hint=None, alpha=0.05)


class TestBcopsFit:
    def test_structure_and_fold_wiring(self, paper_sim, glm):
        train, test, _ = paper_sim
        model = bcops_fit(train, test, glm, seed=0)
        assert len(model.test_entries) == 4  # 2 classes x 2 folds
        for (k, t), entry in model.test_entries.items():
            assert entry.scorer_fold == 3 - t and entry.calib_fold == t
            fold_count = int(
                ((model.train_fold_of == t) & (train.labels == k)).sum()
            )
            assert entry.m == fold_count
        for (k, t), entry in model.train_entries.items():
            assert entry.scorer_fold == 3 - t and entry.calib_fold == 3 - t

    def test_small_class_rejected(self, glm):
        train = Dataset(np.random.default_rng(0).standard_normal((7, 2)),
                        np.array([1, 1, 1, 1, 2, 2, 2]), 2)
        test = Dataset(np.random.default_rng(1).standard_normal((10, 2)))
        with pytest.raises(ValueError):
            bcops_fit(train, test, glm, seed=0)

    def test_outlier_labels_rejected_in_training(self, glm):
        train = Dataset(
            np.random.default_rng(0).standard_normal((12, 2)),
            np.array([1, 1, 1, 1, 2, 2, 2, 2, OUTLIER_ID, 1, 2, 1]),
            2,
        )
        with pytest.raises(ValueError):
            bcops_fit(train, Dataset(np.zeros((4, 2))), glm, seed=0)

    def test_marginal_coverage_monte_carlo(self, glm):
        # validity check: mean per-class coverage over repeated simulations
        covs = []
        for seed in range(50):
            train, test, truth = generate_paper_sim(seed)
            model = bcops_fit(train, test, glm, seed=seed)
            sets = predict_sets(model, test.features, model.test_fold_of, alpha=0.05)
            for k in (1, 2):
                rows = truth == k
                covs.append(
                    np.mean([k in s.members for s, r in zip(sets, rows) if r])
                )
        assert np.mean(covs) >= 0.94


class TestDlsIrs:
    def test_dls_separated_1d(self):
        # oracle: disjoint density level sets for N(0,1) vs N(10,1)
        rng = np.random.default_rng(0)
        X = np.concatenate([rng.standard_normal(200), rng.standard_normal(200) + 10])
        train = Dataset(X[:, None], np.array([1] * 200 + [2] * 200), 2)
        model = dls_fit(train, seed=1)
        fresh = np.concatenate([rng.standard_normal(100), rng.standard_normal(100) + 10])
        truth = np.array([1] * 100 + [2] * 100)
        sets = predict_sets(model, fresh[:, None], None, alpha=0.05)
        acc = np.mean([s.members == (t,) for s, t in zip(sets, truth)])
        assert acc > 0.9

    def test_dls_deterministic(self, paper_sim):
        train, test, _ = paper_sim
        a = dls_fit(train, seed=5)
        b = dls_fit(train, seed=5)
        sa = predict_sets(a, test.features[:100], None, 0.05)
        sb = predict_sets(b, test.features[:100], None, 0.05)
        assert [s.members for s in sa] == [s.members for s in sb]
        np.testing.assert_array_equal(
            np.vstack([s.ranks for s in sa]), np.vstack([s.ranks for s in sb])
        )

    def test_irs_alpha_zero_full(self, paper_sim, glm):
        train, _, _ = paper_sim
        model = irs_fit(train, glm, seed=0)
        ps = predict_set(model, train.features[0], alpha=0.0)
        assert ps.members == (1, 2)

    def test_irs_coverage(self, glm):
        covs = []
        for seed in range(10):
            rng = np.random.default_rng(seed)
            X = np.concatenate([rng.standard_normal(120) - 2, rng.standard_normal(120) + 2])
            train = Dataset(X[:, None], np.array([1] * 120 + [2] * 120), 2)
            model = irs_fit(train, glm, seed=seed)
            fresh = np.concatenate([rng.standard_normal(80) - 2, rng.standard_normal(80) + 2])
            truth = np.array([1] * 80 + [2] * 80)
            sets = predict_sets(model, fresh[:, None], None, alpha=0.1)
            covs.append(np.mean([t in s.members for s, t in zip(sets, truth)]))
        assert np.mean(covs) >= 0.85  # 1 - alpha - Monte Carlo slack


def test_order_preserving_transform_leaves_sets_unchanged(paper_sim, glm):
    train, test, _ = paper_sim
    model = bcops_fit(train, test, glm, seed=2)
    transformed = PredictionSetModel(
        method=model.method,
        class_count=model.class_count,
        p=model.p,
        seed=model.seed,
        learner=model.learner,
        test_entries={
            key: CalibratedClassScorer(
                class_id=e.class_id,
                scorer_fold=e.scorer_fold,
                calib_fold=e.calib_fold,
                scorer=_Monotone(e.scorer),
                calib_scores=np.expm1(3.0 * e.calib_scores),
            )
            for key, e in model.test_entries.items()
        },
        train_entries=model.train_entries,
        train_fold_of=model.train_fold_of,
        test_fold_of=model.test_fold_of,
    )
    rows = test.features[:200]
    folds = model.test_fold_of[:200]
    for alpha in (0.03, 0.05, 0.2, 0.8):
        base = predict_sets(model, rows, folds, alpha)
        trans = predict_sets(transformed, rows, folds, alpha)
        assert [s.members for s in base] == [s.members for s in trans]


class _Monotone:
    def __init__(self, inner):
        self.inner = inner

    def scores(self, X):
        return np.expm1(3.0 * self.inner.scores(X))


class TestFullConformal:
    def _tiny(self, rng):
        train = Dataset(
            np.vstack([rng.standard_normal((3, 2)), rng.standard_normal((3, 2)) + 4]),
            np.array([1, 1, 1, 2, 2, 2]),
            2,
        )
        test = Dataset(np.vstack([rng.standard_normal((4, 2)),
                                  rng.standard_normal((2, 2)) + 4]))
        return train, test

    def test_matches_brute_force(self, glm):
        # oracle: re-run the augmented refit + indicator count from scratch
        from bcops.data import class_subset, derive_seed, subset

        rng = np.random.default_rng(0)
        train, test = self._tiny(rng)
        seed = 9
        for x_index in range(test.n):
            ps = bcops_full_conformal(train, test, x_index, glm, alpha=0.4, seed=seed)
            x = test.features[x_index]
            keep = [i for i in range(test.n) if i != x_index]
            for k in (1, 2):
                cls = class_subset(train, k)
                pos = Dataset(np.vstack([cls.features, x[None, :]]))
                scorer = fit_binary(
                    pos, subset(test, np.array(keep)), glm.with_seed(derive_seed(seed, 5, k))
                )
                v_x = scorer.scores(x[None, :])[0]
                count = sum(
                    1 for z in cls.features if v_x >= scorer.scores(z[None, :])[0]
                )
                expected_rank = (1 + count) / (cls.n + 1)
                assert ps.ranks[k - 1] == pytest.approx(expected_rank)
                expected_member = expected_rank >= conformal_threshold(cls.n, 0.4)
                assert (k in ps.members) == expected_member

    def test_alpha_zero_full(self, glm):
        rng = np.random.default_rng(1)
        train, test = self._tiny(rng)
        assert bcops_full_conformal(train, test, 0, glm, 0.0, 1).members == (1, 2)

    def test_duplicated_point_is_kept(self, glm):
        # x equal to a class-k training row scores identically to it, so
        # the rank is at least 2/(m+1) and k stays in the set at alpha <= m/(m+1)
        rng = np.random.default_rng(2)
        train, test = self._tiny(rng)
        dup = np.vstack([test.features, train.features[0][None, :]])
        test_dup = Dataset(dup)
        m = 3
        ps = bcops_full_conformal(train, test_dup, test_dup.n - 1, glm, alpha=0.5, seed=3)
        assert ps.ranks[0] >= 2 / (m + 1)
        assert 1 in ps.members
