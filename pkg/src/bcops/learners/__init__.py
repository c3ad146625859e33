"""Supervised learners and density estimators backing every score function.

fit_binary learns P(sample came from `pos` | x) and powers both the
class-vs-test scorers and the log-odds functions used for mixture
estimation; fit_multiclass powers the in-sample ratio method.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..data import Dataset
from .config import KIND_GLM, KIND_RF, LearnerConfig
from .forest import RandomForest
from .kde import (
    DensityModel1D,
    DensityModelMulti,
    fit_kde_1d,
    fit_kde_multi,
    silverman_bandwidth,
)
from .linear import LogisticModel, MultinomialModel

__all__ = [
    "LearnerConfig",
    "KIND_RF",
    "KIND_GLM",
    "RandomForest",
    "LogisticModel",
    "MultinomialModel",
    "DensityModel1D",
    "DensityModelMulti",
    "fit_kde_1d",
    "fit_kde_multi",
    "silverman_bandwidth",
    "BinaryScorer",
    "MulticlassScorer",
    "fit_binary",
    "fit_multiclass",
    "score",
]

SCORE_CLIP = 1e-6  # probability clamp applied before logit transforms


@dataclass
class BinaryScorer:
    """Fitted pos-vs-neg score function, values in [0, 1]."""

    kind: str
    model: RandomForest | LogisticModel
    p: int
    n_pos: int
    n_neg: int
    seed: int
    class_weighting: str  # "inverse-frequency" (glm) or "none" (rf bootstrap)
    # honest scores for the positive training rows themselves: out-of-bag
    # votes for rf (the full forest memorizes its training data), plain
    # scores for glm; None on deserialized models
    pos_train_scores: np.ndarray | None = None

    def scores(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.p:
            raise ValueError(f"expected {self.p} features, got {X.shape[1]}")
        if self.kind == KIND_RF:
            return self.model.predict_proba(X)[:, 1]
        return self.model.predict_proba(X)

    def logits(self, X: np.ndarray) -> np.ndarray:
        s = np.clip(self.scores(X), SCORE_CLIP, 1.0 - SCORE_CLIP)
        return np.log(s / (1.0 - s))


def fit_binary(pos: Dataset, neg: Dataset, config: LearnerConfig) -> BinaryScorer:
    """Learn a score for membership in `pos` against `neg`.

    The glm learner uses inverse-frequency sample weights so heavy class
    imbalance (class k vs a whole test fold) does not destabilize the fit;
    the rf learner relies on its unweighted bootstrap. Only the score
    ordering matters downstream.
    """
    if pos.p != neg.p:
        raise ValueError(f"feature dimension mismatch: {pos.p} vs {neg.p}")
    if pos.n < 2 or neg.n < 2:
        raise ValueError("need at least 2 samples on each side")
    X = np.vstack([pos.features, neg.features])
    y = np.concatenate([np.ones(pos.n, dtype=np.int64), np.zeros(neg.n, dtype=np.int64)])
    if config.kind == KIND_RF:
        model = RandomForest(
            n_trees=config.n_trees,
            max_depth=config.max_depth,
            min_leaf=config.min_leaf,
            mtry=config.mtry,
            bootstrap=config.bootstrap,
            seed=config.seed,
        ).fit(X, y, 2, compute_oob=config.bootstrap)
        weighting = "none"
        if config.bootstrap:
            pos_train_scores = model.oob_proba(X)[: pos.n, 1]
        else:
            pos_train_scores = model.predict_proba(pos.features)[:, 1]
    else:
        weights = np.where(y == 1, 0.5 / pos.n, 0.5 / neg.n) * (pos.n + neg.n)
        model = LogisticModel(l2=config.l2, l1=config.l1).fit(
            X, y, sample_weight=weights, max_iter=config.max_iter, tol=config.tol
        )
        weighting = "inverse-frequency"
        pos_train_scores = model.predict_proba(pos.features)
    return BinaryScorer(
        kind=config.kind,
        model=model,
        p=pos.p,
        n_pos=pos.n,
        n_neg=neg.n,
        seed=config.seed,
        class_weighting=weighting,
        pos_train_scores=np.asarray(pos_train_scores, dtype=np.float64),
    )


def score(scorer: BinaryScorer, x: np.ndarray) -> float:
    """Score a single feature vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("score takes a single feature vector")
    return float(scorer.scores(x[None, :])[0])


@dataclass
class MulticlassScorer:
    """Fitted K-class probability model; columns align with class ids 1..K."""

    kind: str
    model: RandomForest | MultinomialModel
    p: int
    class_count: int
    seed: int

    def prob_matrix(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.p:
            raise ValueError(f"expected {self.p} features, got {X.shape[1]}")
        return self.model.predict_proba(X)

    def class_scores(self, X: np.ndarray, k: int) -> np.ndarray:
        return self.prob_matrix(X)[:, k - 1]


def fit_multiclass(train: Dataset, config: LearnerConfig) -> MulticlassScorer:
    """Fit a K-class probability model on a labeled dataset."""
    if train.labels is None:
        raise ValueError("fit_multiclass needs labels")
    k = train.class_count
    counts = np.bincount(train.labels, minlength=k + 1)[1:]
    if np.any(counts < 2):
        missing = [int(c + 1) for c in np.nonzero(counts < 2)[0]]
        raise ValueError(f"every class needs >= 2 samples; short: {missing}")
    y0 = train.labels - 1  # 0-based for the models
    if config.kind == KIND_RF:
        model = RandomForest(
            n_trees=config.n_trees,
            max_depth=config.max_depth,
            min_leaf=config.min_leaf,
            mtry=config.mtry,
            bootstrap=config.bootstrap,
            seed=config.seed,
        ).fit(train.features, y0, k)
    else:
        model = MultinomialModel(l2=config.l2, l1=config.l1).fit(
            train.features, y0, k, max_iter=config.max_iter, tol=config.tol
        )
    return MulticlassScorer(
        kind=config.kind, model=model, p=train.p, class_count=k, seed=config.seed
    )
