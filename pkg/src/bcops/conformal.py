"""Split-conformal calibration and the three prediction-set methods.

Methods differ only in the score functions and in how folds pair up:

* bcops: per class k and fold t, a binary scorer separating class-k
  training samples of fold t from the test samples of fold t. A test row
  in fold t is scored by the fold-t' scorer and ranked against that
  scorer's values on class-k training rows of fold t, so nothing the
  scorer saw enters its own calibration.
* dls: per class k, a product-kernel density fitted on one half of the
  class-k training rows; log-density scores are calibrated on the other
  half. (Log is order-preserving, so the sets match density calibration
  while avoiding float underflow ties far from the data.)
* irs: a K-class probability model fitted on one training fold; the
  class-k probability column is calibrated per class on the other fold.

Per-class abstention estimation scores *training* rows with the held
fold's scorer. For bcops the calibration values also come from fold t'
(the construction the abstention estimator prescribes; those rows were in
the scorer's training data, a caveat surfaced in reports). For dls/irs
the calibration comes from the row's own fold instead: density and forest
scorers inflate scores on their own fit rows, which would otherwise push
every fresh row below the entire calibration list.

Ranks are alpha-free; alpha enters only through the acceptance threshold,
so a single fit serves any alpha grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset, FoldSplit, class_subset, derive_seed, split_half, subset
from .learners import (
    BinaryScorer,
    LearnerConfig,
    MulticlassScorer,
    fit_binary,
    fit_kde_multi,
    fit_multiclass,
)

METHOD_BCOPS = "bcops"
METHOD_DLS = "dls"
METHOD_IRS = "irs"
METHODS = (METHOD_BCOPS, METHOD_DLS, METHOD_IRS)

FOLD_FREE = 0  # dls/irs prediction entries are not fold-paired

# seed derivation tags
_TAG_TRAIN_SPLIT = 1
_TAG_TEST_SPLIT = 2
_TAG_SCORER = 3
_TAG_FULL = 5


def conformal_rank(v_x: float, calib: np.ndarray, rng: np.random.Generator | None = None) -> float:
    """Rank of a score within a calibration sample, self included.

    calib must be sorted ascending. Default ties use the deterministic >=
    rule; passing an rng breaks ties uniformly at random instead.
    """
    m = calib.size
    if m == 0:
        raise ValueError("empty calibration set")
    if rng is None:
        count = int(np.searchsorted(calib, v_x, side="right"))
    else:
        lo = int(np.searchsorted(calib, v_x, side="left"))
        hi = int(np.searchsorted(calib, v_x, side="right"))
        count = lo + int(rng.integers(0, hi - lo + 1))
    return (1 + count) / (m + 1)


def conformal_rank_batch(v: np.ndarray, calib: np.ndarray) -> np.ndarray:
    """Vectorized deterministic-tie ranks for many scores at once."""
    if calib.size == 0:
        raise ValueError("empty calibration set")
    return (1.0 + np.searchsorted(calib, v, side="right")) / (calib.size + 1)


def conformal_threshold(m: int, alpha: float) -> float:
    """Acceptance threshold floor((m+1)*alpha)/(m+1) for calibration size m."""
    if m < 1:
        raise ValueError("calibration size must be >= 1")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must be in [0, 1]")
    return math.floor((m + 1) * alpha) / (m + 1)


@dataclass
class LogDensityScore:
    """Adapter: multivariate KDE -> score function (log density)."""

    kde: object

    def scores(self, X: np.ndarray) -> np.ndarray:
        return self.kde.log_density(X)


@dataclass
class ClassProbScore:
    """Adapter: one probability column of a K-class model."""

    model: MulticlassScorer
    class_id: int

    def scores(self, X: np.ndarray) -> np.ndarray:
        return self.model.class_scores(X, self.class_id)


@dataclass
class CalibratedClassScorer:
    """A score function plus the sorted calibration scores for one class.

    scorer_fold is the fold whose data fitted the score function;
    calib_fold is the fold whose class-k training rows produced the
    calibration scores. The two differ on every test-prediction entry
    (split-conformal independence); bcops training-row entries used for
    abstention estimation deliberately self-calibrate on the scorer fold.
    """

    class_id: int
    scorer_fold: int
    calib_fold: int
    scorer: object
    calib_scores: np.ndarray

    def __post_init__(self):
        cs = np.sort(np.asarray(self.calib_scores, dtype=np.float64))
        if cs.size < 1:
            raise ValueError("calibration set must be non-empty")
        cs.setflags(write=False)
        object.__setattr__(self, "calib_scores", cs)

    @property
    def m(self) -> int:
        return self.calib_scores.size


@dataclass(frozen=True)
class PredictionSet:
    """Class subset for one sample plus the per-class conformal ranks."""

    members: tuple[int, ...]
    ranks: np.ndarray  # (K,), ranks[k-1] is the rank for class k
    alpha: float

    def is_abstention(self) -> bool:
        return len(self.members) == 0


@dataclass
class PredictionSetModel:
    """Fitted prediction-set machinery for one method.

    test_entries: (class, fold) -> CalibratedClassScorer; fold is the test
    fold for bcops and FOLD_FREE for dls/irs.
    train_entries: (class, fold) -> scorer+calibration used when scoring a
    *training* row that lives in `fold`.
    """

    method: str
    class_count: int
    p: int
    seed: int
    learner: LearnerConfig | None
    test_entries: dict[tuple[int, int], CalibratedClassScorer]
    train_entries: dict[tuple[int, int], CalibratedClassScorer]
    train_fold_of: np.ndarray
    test_fold_of: np.ndarray | None  # bcops only

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        for entry in self.test_entries.values():
            if entry.scorer_fold == entry.calib_fold:
                raise AssertionError("test entry calibrated on its own scorer fold")

    def classes(self) -> np.ndarray:
        return np.arange(1, self.class_count + 1)

    def _test_entry(self, k: int, fold_hint: int | None) -> CalibratedClassScorer:
        if self.method == METHOD_BCOPS:
            if fold_hint not in (1, 2):
                raise ValueError("bcops needs fold_hint in {1, 2} for test rows")
            return self.test_entries[(k, fold_hint)]
        return self.test_entries[(k, FOLD_FREE)]

    def rank_matrix(self, X: np.ndarray, fold_of: np.ndarray | None = None):
        """Ranks and calibration sizes for test rows.

        fold_of: per-row test fold for bcops (scalar broadcast allowed);
        ignored by dls/irs. Returns (ranks, sizes), both (n, K).
        """
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        n = X.shape[0]
        ranks = np.empty((n, self.class_count))
        sizes = np.empty((n, self.class_count), dtype=np.int64)
        if self.method == METHOD_BCOPS:
            if fold_of is None:
                raise ValueError("bcops needs fold assignments for test rows")
            fold_of = np.broadcast_to(np.asarray(fold_of, dtype=np.int8), (n,))
            for fold in (1, 2):
                rows = np.nonzero(fold_of == fold)[0]
                if rows.size == 0:
                    continue
                for k in self.classes():
                    entry = self.test_entries[(k, fold)]
                    v = entry.scorer.scores(X[rows])
                    ranks[rows, k - 1] = conformal_rank_batch(v, entry.calib_scores)
                    sizes[rows, k - 1] = entry.m
        else:
            for k in self.classes():
                entry = self.test_entries[(k, FOLD_FREE)]
                v = entry.scorer.scores(X)
                ranks[:, k - 1] = conformal_rank_batch(v, entry.calib_scores)
                sizes[:, k - 1] = entry.m
        return ranks, sizes

    def training_rank_matrix(self, train: Dataset):
        """Held-fold ranks for every training row (abstention estimation)."""
        if train.labels is None:
            raise ValueError("training rows need labels")
        n = train.n
        if self.train_fold_of.shape[0] != n:
            raise ValueError("training data does not match the fitted fold split")
        ranks = np.empty((n, self.class_count))
        sizes = np.empty((n, self.class_count), dtype=np.int64)
        for fold in (1, 2):
            rows = np.nonzero(self.train_fold_of == fold)[0]
            if rows.size == 0:
                continue
            for k in self.classes():
                entry = self.train_entries[(k, fold)]
                v = entry.scorer.scores(train.features[rows])
                ranks[rows, k - 1] = conformal_rank_batch(v, entry.calib_scores)
                sizes[rows, k - 1] = entry.m
        return ranks, sizes


def members_from_ranks(ranks: np.ndarray, sizes: np.ndarray, alpha: float) -> np.ndarray:
    """Boolean membership matrix: rank >= floor((m+1)a)/(m+1) per cell."""
    thresholds = np.floor((sizes + 1) * alpha) / (sizes + 1)
    return ranks >= thresholds


def predict_set(
    model: PredictionSetModel,
    x: np.ndarray,
    fold_hint: int | None = None,
    alpha: float = 0.05,
    rng: np.random.Generator | None = None,
) -> PredictionSet:
    """Prediction set for one sample; empty set = abstention.

    fold_hint identifies the test fold of x for bcops (its scorers are
    fold-paired); dls/irs ignore it. rng switches on randomized tie
    breaking for the ranks.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must be in [0, 1]")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != model.p:
        raise ValueError(f"expected a feature vector of length {model.p}")
    ranks = np.empty(model.class_count)
    members = []
    for k in model.classes():
        entry = model._test_entry(k, fold_hint)
        v = float(entry.scorer.scores(x[None, :])[0])
        ranks[k - 1] = conformal_rank(v, entry.calib_scores, rng=rng)
        if ranks[k - 1] >= conformal_threshold(entry.m, alpha):
            members.append(int(k))
    return PredictionSet(members=tuple(members), ranks=ranks, alpha=alpha)


def predict_sets(
    model: PredictionSetModel,
    X: np.ndarray,
    fold_of: np.ndarray | None = None,
    alpha: float = 0.05,
) -> list[PredictionSet]:
    """Vectorized predict_set over many rows (deterministic ties)."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must be in [0, 1]")
    ranks, sizes = model.rank_matrix(X, fold_of)
    member_matrix = members_from_ranks(ranks, sizes, alpha)
    out = []
    for i in range(ranks.shape[0]):
        members = tuple(int(k) for k in np.nonzero(member_matrix[i])[0] + 1)
        out.append(PredictionSet(members=members, ranks=ranks[i], alpha=alpha))
    return out


def _check_training_data(train: Dataset, min_per_class: int) -> None:
    if train.labels is None:
        raise ValueError("training data must be labeled")
    if train.has_outliers():
        raise ValueError("training data must not contain outlier labels")
    counts = np.bincount(train.labels, minlength=train.class_count + 1)[1:]
    short = np.nonzero(counts < min_per_class)[0] + 1
    if short.size:
        raise ValueError(
            f"classes {short.tolist()} have < {min_per_class} training samples"
        )


def _class_fold_rows(train: Dataset, split: FoldSplit) -> dict[tuple[int, int], Dataset]:
    out = {}
    for fold in (1, 2):
        fold_rows = split.indices(fold)
        fold_data = subset(train, fold_rows)
        for k in range(1, train.class_count + 1):
            out[(k, fold)] = class_subset(fold_data, k)
    return out


def bcops_fit(
    train: Dataset, test: Dataset, learner: LearnerConfig, seed: int
) -> PredictionSetModel:
    """Fit class-vs-test scorers on each fold and calibrate crosswise.

    Stores alpha-free calibration lists, so one fit serves any alpha.
    """
    _check_training_data(train, 4)
    if test.n < 2:
        raise ValueError("need at least 2 test rows")
    if test.p != train.p:
        raise ValueError("train/test feature dimensions differ")
    train_split = split_half(train, stratify=True, seed=derive_seed(seed, _TAG_TRAIN_SPLIT))
    test_split = split_half(test, stratify=False, seed=derive_seed(seed, _TAG_TEST_SPLIT))
    per_class_fold = _class_fold_rows(train, train_split)

    test_entries: dict[tuple[int, int], CalibratedClassScorer] = {}
    train_entries: dict[tuple[int, int], CalibratedClassScorer] = {}
    for k in range(1, train.class_count + 1):
        for s in (1, 2):
            t = 3 - s  # the fold this scorer serves
            pos = per_class_fold[(k, s)]
            neg = subset(test, test_split.indices(s))
            scorer = fit_binary(pos, neg, learner.with_seed(derive_seed(seed, _TAG_SCORER, k, s)))
            cross_scores = scorer.scores(per_class_fold[(k, t)].features)
            # the scorer's own positives calibrate the training-row path;
            # pos_train_scores keeps them honest (out-of-bag for rf)
            self_scores = scorer.pos_train_scores
            test_entries[(k, t)] = CalibratedClassScorer(
                class_id=k, scorer_fold=s, calib_fold=t, scorer=scorer, calib_scores=cross_scores
            )
            train_entries[(k, t)] = CalibratedClassScorer(
                class_id=k, scorer_fold=s, calib_fold=s, scorer=scorer, calib_scores=self_scores
            )
    return PredictionSetModel(
        method=METHOD_BCOPS,
        class_count=train.class_count,
        p=train.p,
        seed=seed,
        learner=learner,
        test_entries=test_entries,
        train_entries=train_entries,
        train_fold_of=train_split.fold_of,
        test_fold_of=test_split.fold_of,
    )


def dls_fit(train: Dataset, seed: int) -> PredictionSetModel:
    """Density-level sets: per-class KDE fitted on fold 1, calibrated on fold 2."""
    _check_training_data(train, 4)
    train_split = split_half(train, stratify=True, seed=derive_seed(seed, _TAG_TRAIN_SPLIT))
    per_class_fold = _class_fold_rows(train, train_split)

    test_entries: dict[tuple[int, int], CalibratedClassScorer] = {}
    train_entries: dict[tuple[int, int], CalibratedClassScorer] = {}
    for k in range(1, train.class_count + 1):
        scorers = {}
        for s in (1, 2):
            scorers[s] = LogDensityScore(fit_kde_multi(per_class_fold[(k, s)].features))
        test_entries[(k, FOLD_FREE)] = CalibratedClassScorer(
            class_id=k,
            scorer_fold=1,
            calib_fold=2,
            scorer=scorers[1],
            calib_scores=scorers[1].scores(per_class_fold[(k, 2)].features),
        )
        for t in (1, 2):
            # training rows of fold t: held-fold scorer, calibration from the
            # row's own fold. A KDE's log-density is sharply inflated at its
            # own fit points, so calibrating the fold-s scorer on fold-s rows
            # would push every fresh row below the whole calibration list.
            s = 3 - t
            train_entries[(k, t)] = CalibratedClassScorer(
                class_id=k,
                scorer_fold=s,
                calib_fold=t,
                scorer=scorers[s],
                calib_scores=scorers[s].scores(per_class_fold[(k, t)].features),
            )
    return PredictionSetModel(
        method=METHOD_DLS,
        class_count=train.class_count,
        p=train.p,
        seed=seed,
        learner=None,
        test_entries=test_entries,
        train_entries=train_entries,
        train_fold_of=train_split.fold_of,
        test_fold_of=None,
    )


def irs_fit(train: Dataset, learner: LearnerConfig, seed: int) -> PredictionSetModel:
    """In-sample ratio sets: K-class model on fold 1, per-class calibration on fold 2."""
    _check_training_data(train, 4)
    train_split = split_half(train, stratify=True, seed=derive_seed(seed, _TAG_TRAIN_SPLIT))
    per_class_fold = _class_fold_rows(train, train_split)

    fold_models = {
        s: fit_multiclass(
            subset(train, train_split.indices(s)),
            learner.with_seed(derive_seed(seed, _TAG_SCORER, s)),
        )
        for s in (1, 2)
    }
    test_entries: dict[tuple[int, int], CalibratedClassScorer] = {}
    train_entries: dict[tuple[int, int], CalibratedClassScorer] = {}
    for k in range(1, train.class_count + 1):
        fn1 = ClassProbScore(fold_models[1], k)
        test_entries[(k, FOLD_FREE)] = CalibratedClassScorer(
            class_id=k,
            scorer_fold=1,
            calib_fold=2,
            scorer=fn1,
            calib_scores=fn1.scores(per_class_fold[(k, 2)].features),
        )
        for t in (1, 2):
            # as for dls: held-fold scorer, own-fold calibration (a forest's
            # in-sample probabilities are inflated on its training rows)
            s = 3 - t
            fns = ClassProbScore(fold_models[s], k)
            train_entries[(k, t)] = CalibratedClassScorer(
                class_id=k,
                scorer_fold=s,
                calib_fold=t,
                scorer=fns,
                calib_scores=fns.scores(per_class_fold[(k, t)].features),
            )
    return PredictionSetModel(
        method=METHOD_IRS,
        class_count=train.class_count,
        p=train.p,
        seed=seed,
        learner=learner,
        test_entries=test_entries,
        train_entries=train_entries,
        train_fold_of=train_split.fold_of,
        test_fold_of=None,
    )


def bcops_full_conformal(
    train: Dataset,
    test: Dataset,
    x_index: int,
    learner: LearnerConfig,
    alpha: float,
    seed: int,
) -> PredictionSet:
    """Data-augmentation variant: refit per class with x joined to the class.

    Cost is one classifier refit per class per query, so this is meant for
    desk-scale data or spot checks. For class k the scorer separates
    {class-k training rows + x} from the test data without x; the rank of
    x's score among the class-k scores uses the usual (m+1) formula.
    """
    if train.labels is None:
        raise ValueError("training data must be labeled")
    if train.has_outliers():
        raise ValueError("training data must not contain outlier labels")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must be in [0, 1]")
    if not 0 <= x_index < test.n:
        raise ValueError("x_index out of range")
    x = test.features[x_index]
    rest_rows = np.setdiff1d(np.arange(test.n), [x_index])
    neg = subset(test, rest_rows)
    k_count = train.class_count
    ranks = np.empty(k_count)
    members = []
    for k in range(1, k_count + 1):
        cls = class_subset(train, k)
        if cls.n < 1:
            raise ValueError(f"class {k} has no training samples")
        pos = Dataset(np.vstack([cls.features, x[None, :]]), None, 0)
        scorer = fit_binary(pos, neg, learner.with_seed(derive_seed(seed, _TAG_FULL, k)))
        v_class = np.sort(scorer.scores(cls.features))
        v_x = float(scorer.scores(x[None, :])[0])
        ranks[k - 1] = conformal_rank(v_x, v_class)
        if ranks[k - 1] >= conformal_threshold(cls.n, alpha):
            members.append(k)
    return PredictionSet(members=tuple(members), ranks=ranks, alpha=alpha)
